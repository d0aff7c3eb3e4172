//! Python bindings.
//!
//! The plain functions return ordinary Rust values and carry the logic; the
//! `#[pyfunction]` wrappers only convert arguments and errors.

use helivort::checks::{self, KernelCheckOptions, SolverCheckOptions};
use helivort::config;
use helivort::diagnostics::{self, Tolerances};
use helivort::geometry::Vec2;
use helivort::kernel::{self, HelixParams};
use helivort::sim::{self, BlobSpec};
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;

/// Column name and values, in diagnostics CSV order.
pub type Columns = Vec<(String, Vec<f64>)>;

/// `(n, L2 error)` per grid level and the observed orders between levels.
pub type SolverLevels = (Vec<(usize, f64)>, Vec<f64>);

pub struct SimulateResult {
    pub columns: Columns,
    pub summary: Vec<(String, String)>,
    pub steps: usize,
    pub dt: f64,
}

#[derive(Debug)]
pub enum BindingError {
    Input(String),
    Numerical(String),
}

impl From<BindingError> for PyErr {
    fn from(e: BindingError) -> PyErr {
        match e {
            BindingError::Input(m) => PyValueError::new_err(m),
            BindingError::Numerical(m) => PyRuntimeError::new_err(m),
        }
    }
}

fn params(h: f64) -> Result<HelixParams, BindingError> {
    HelixParams::new(h).map_err(|e| BindingError::Input(e.to_string()))
}

/// Run the configuration given as config-file text.
pub fn simulate_text(text: &str, t_final: Option<f64>) -> Result<SimulateResult, BindingError> {
    let mut cfg = config::parse(text).map_err(|e| BindingError::Input(e.to_string()))?;
    if let Some(t) = t_final {
        cfg.t_final = t;
    }
    cfg.validate().map_err(|e| BindingError::Input(e.to_string()))?;
    let out = sim::run(&cfg).map_err(|e| {
        if e.is_numerical() {
            BindingError::Numerical(e.to_string())
        } else {
            BindingError::Input(e.to_string())
        }
    })?;
    let header = diagnostics::csv_header(cfg.blobs.len());
    let names: Vec<&str> = header.split(',').collect();
    let mut columns: Columns = names.iter().map(|n| (n.to_string(), Vec::with_capacity(out.records.len()))).collect();
    for rec in &out.records {
        let row = diagnostics::csv_row(rec);
        for (col, v) in columns.iter_mut().zip(row.split(',')) {
            col.1.push(v.parse().unwrap_or(f64::NAN));
        }
    }
    let p = cfg.params().map_err(|e| BindingError::Input(e.to_string()))?;
    let report = diagnostics::theory_compare(&out.records, &cfg.blobs, &p, &Tolerances::default());
    let summary = report
        .to_summary()
        .lines()
        .filter_map(|l| l.split_once('=').map(|(k, v)| (k.to_string(), v.to_string())))
        .collect();
    Ok(SimulateResult { columns, summary, steps: out.steps, dt: out.dt })
}

/// Kernel identity suite; returns (passed, table).
pub fn kernel_check_table(samples: usize, seed: u64, h: f64) -> (bool, String) {
    let r = checks::kernel_check(&KernelCheckOptions { samples, seed, h, ..KernelCheckOptions::default() });
    (r.passed(), r.to_table())
}

/// Manufactured-solution convergence.
pub fn solver_orders(sizes: Vec<usize>) -> SolverLevels {
    let (_, levels) = checks::solver_check(&SolverCheckOptions { sizes, ..SolverCheckOptions::default() });
    let orders = helivort::domain_solver::convergence_orders(&levels);
    (levels.iter().map(|l| (l.n, l.l2_error)).collect(), orders)
}

#[pyfunction]
#[pyo3(signature = (x, y, h = 1.0))]
fn k_matrix(x: f64, y: f64, h: f64) -> PyResult<((f64, f64), (f64, f64))> {
    let k = kernel::k_matrix(Vec2::new(x, y), &params(h)?);
    Ok(((k.a11, k.a12), (k.a12, k.a22)))
}

#[pyfunction]
#[pyo3(signature = (x, y, h = 1.0))]
fn diffeo(x: f64, y: f64, h: f64) -> PyResult<(f64, f64)> {
    let t = kernel::diffeo(Vec2::new(x, y), &params(h)?);
    Ok((t.x, t.y))
}

/// Singular Green's kernel `G_K(x, y)`.
#[pyfunction]
#[pyo3(signature = (x, y, h = 1.0))]
fn green_free(x: (f64, f64), y: (f64, f64), h: f64) -> PyResult<f64> {
    kernel::green_free(Vec2::new(x.0, x.1), Vec2::new(y.0, y.1), &params(h)?).map_err(|e| PyValueError::new_err(e.to_string()))
}

/// Leading-order angular velocity of a filament through `center`.
#[pyfunction]
#[pyo3(signature = (center, gamma, h = 1.0))]
fn nu(center: (f64, f64), gamma: f64, h: f64) -> PyResult<f64> {
    let spec = BlobSpec::new(Vec2::new(center.0, center.1), 0.01, gamma, 1);
    Ok(sim::nu(&spec, &params(h)?))
}

/// Run a configuration (config-file text). Returns a dict with `columns`
/// (name -> list), `summary` (theory comparison), `steps` and `dt`.
#[pyfunction]
#[pyo3(signature = (config_text, t_final = None))]
fn simulate<'py>(py: Python<'py>, config_text: &str, t_final: Option<f64>) -> PyResult<Bound<'py, pyo3::types::PyDict>> {
    let text = config_text.to_owned();
    let res = py.detach(move || simulate_text(&text, t_final))?;
    let out = pyo3::types::PyDict::new(py);
    let columns = pyo3::types::PyDict::new(py);
    for (name, values) in res.columns {
        columns.set_item(name, values)?;
    }
    let summary = pyo3::types::PyDict::new(py);
    for (k, v) in res.summary {
        summary.set_item(k, v)?;
    }
    out.set_item("columns", columns)?;
    out.set_item("summary", summary)?;
    out.set_item("steps", res.steps)?;
    out.set_item("dt", res.dt)?;
    Ok(out)
}

#[pyfunction]
#[pyo3(signature = (samples = 10_000, seed = 0, h = 1.0))]
fn kernel_check(py: Python<'_>, samples: usize, seed: u64, h: f64) -> (bool, String) {
    py.detach(move || kernel_check_table(samples, seed, h))
}

#[pyfunction]
#[pyo3(signature = (sizes = vec![65, 129, 257]))]
fn solver_check(py: Python<'_>, sizes: Vec<usize>) -> PyResult<SolverLevels> {
    if sizes.iter().any(|&n| n < helivort::domain_solver::MIN_GRID_NODES) {
        return Err(PyValueError::new_err(format!("grid sizes must be at least {}", helivort::domain_solver::MIN_GRID_NODES)));
    }
    Ok(py.detach(move || solver_orders(sizes)))
}

#[pymodule]
fn helivort_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(k_matrix, m)?)?;
    m.add_function(wrap_pyfunction!(diffeo, m)?)?;
    m.add_function(wrap_pyfunction!(green_free, m)?)?;
    m.add_function(wrap_pyfunction!(nu, m)?)?;
    m.add_function(wrap_pyfunction!(simulate, m)?)?;
    m.add_function(wrap_pyfunction!(kernel_check, m)?)?;
    m.add_function(wrap_pyfunction!(solver_check, m)?)?;
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    Ok(())
}
