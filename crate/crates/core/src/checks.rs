//! Self-check suites behind the `kernel-check` and `solver-check` commands.

use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::domain_solver::{self, DiskDomain, Grid, ManufacturedError, MIN_GRID_NODES};
use crate::geometry::{Point2, SymMat2, Vec2};
use crate::kernel::{self, HelixParams};

/// One line of a check table.
#[derive(Debug, Clone, PartialEq)]
pub struct CheckRow {
    pub name: String,
    pub value: f64,
    /// Human-readable acceptance rule, e.g. `"<= 1e-12"`.
    pub rule: String,
    pub pass: bool,
    pub note: String,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct CheckReport {
    pub rows: Vec<CheckRow>,
}

impl CheckReport {
    pub fn passed(&self) -> bool {
        !self.rows.is_empty() && self.rows.iter().all(|r| r.pass)
    }

    fn push_max(&mut self, name: &str, value: f64, limit: f64, note: String) {
        self.rows.push(CheckRow {
            name: name.into(),
            value,
            rule: format!("<= {limit:e}"),
            pass: value <= limit,
            note,
        });
    }

    fn push_min(&mut self, name: &str, value: f64, limit: f64, note: String) {
        self.rows.push(CheckRow {
            name: name.into(),
            value,
            rule: format!(">= {limit}"),
            pass: value >= limit,
            note,
        });
    }

    pub fn to_table(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "{:<32} {:>14} {:>12}  {:<6} note", "check", "value", "rule", "result");
        for r in &self.rows {
            let _ = writeln!(
                s,
                "{:<32} {:>14.6e} {:>12}  {:<6} {}",
                r.name,
                r.value,
                r.rule,
                if r.pass { "PASS" } else { "FAIL" },
                r.note
            );
        }
        s
    }
}

/// Settings for [`kernel_check`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KernelCheckOptions {
    pub h: f64,
    pub samples: usize,
    pub seed: u64,
    /// Sampling box half-width.
    pub extent: f64,
    /// Fault injection: the finite-difference map uses `ρ(s)(1 + a s)`.
    pub rho_perturbation: f64,
}

impl Default for KernelCheckOptions {
    fn default() -> Self {
        KernelCheckOptions { h: 1.0, samples: 10_000, seed: 0, extent: 2.0, rho_perturbation: 0.0 }
    }
}

fn fd_jacobian(map: &dyn Fn(Point2) -> Point2, x: Point2, step: f64) -> SymMat2 {
    let ex = Vec2::new(step, 0.0);
    let ey = Vec2::new(0.0, step);
    let dx = (map(x + ex) - map(x - ex)) / (2.0 * step);
    let dy = (map(x + ey) - map(x - ey)) / (2.0 * step);
    // D𝒯 is symmetric; average the off-diagonal pair
    SymMat2::new(dx.x, 0.5 * (dy.x + dx.y), dy.y)
}

/// Kernel property suite: spectrum of `K`, `(Λ⁻¹)² = K`, `D𝒯 = fΛ` against
/// finite differences of `𝒯`, symmetry of `G_K` and the `C/|x − y|` bound
/// on `∇ₓG_K`.
pub fn kernel_check(opts: &KernelCheckOptions) -> CheckReport {
    let mut report = CheckReport::default();
    let p = match HelixParams::new(opts.h) {
        Ok(p) => p,
        Err(e) => {
            report.rows.push(CheckRow { name: "pitch".into(), value: opts.h, rule: "> 0".into(), pass: false, note: e.to_string() });
            return report;
        }
    };
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let l = opts.extent;
    let pts: Vec<Point2> = (0..opts.samples).map(|_| Vec2::new(rng.gen_range(-l..l), rng.gen_range(-l..l))).collect();

    let mut eig_err: f64 = 0.0;
    let mut sqrt_err: f64 = 0.0;
    for &x in &pts {
        let k = kernel::k_matrix(x, &p);
        let (lo, hi) = k.eigenvalues();
        let expected_lo = p.h() * p.h() / (x.norm_sq() + p.h() * p.h());
        eig_err = eig_err.max((lo - expected_lo).abs()).max((hi - 1.0).abs());
        sqrt_err = sqrt_err.max(kernel::lambda_inverse(x, &p).square().max_abs_diff(&k));
    }
    let n = opts.samples;
    report.push_max("K eigenvalues {1, h^2/|X|^2}", eig_err, 1e-12, format!("{n} points"));
    report.push_max("(Lambda^-1)^2 = K", sqrt_err, 1e-12, format!("{n} points"));

    let a = opts.rho_perturbation;
    let map = move |x: Point2| kernel::rho(x.norm_sq(), &p) * (1.0 + a * x.norm_sq()) * x;
    let mut jac_err: f64 = 0.0;
    for &x in pts.iter().take(1000) {
        let analytic = kernel::diffeo_jacobian(x, &p);
        let scale = analytic.a11.abs().max(analytic.a22.abs()).max(analytic.a12.abs());
        let fd = fd_jacobian(&map, x, 1e-5 * x.norm().max(1.0));
        jac_err = jac_err.max(fd.max_abs_diff(&analytic) / scale);
    }
    let note = if a != 0.0 { format!("rho perturbed by (1 + {a:e} s)") } else { "relative, 1000 points".into() };
    report.push_max("DT = f Lambda (finite diff.)", jac_err, 1e-6, note);

    let mut sym_err: f64 = 0.0;
    for pair in pts.chunks_exact(2) {
        let (x, y) = (pair[0], pair[1]);
        if let (Ok(a), Ok(b)) = (kernel::green_free(x, y, &p), kernel::green_free(y, x, &p)) {
            sym_err = sym_err.max((a - b).abs() / a.abs().max(1.0));
        }
    }
    report.push_max("G_K(x,y) = G_K(y,x)", sym_err, 1e-12, format!("{} pairs", n / 2));

    // |∇ₓG_K(x,y)| |x − y| over separations 1e-1 .. 1e-7 in the disk of radius `extent`
    let mut c_max: f64 = 0.0;
    let mut drift: f64 = 0.0;
    for &x in pts.iter().take(200) {
        let x = if x.norm() > 0.9 * l { x * (0.9 * l / x.norm()) } else { x };
        let dir = Vec2::new(1.0, 0.0).rotated(rng.gen_range(0.0..std::f64::consts::TAU));
        let prods: Vec<f64> = (1..=7)
            .filter_map(|k| {
                let t = 10f64.powi(-k);
                kernel::grad_green_free(x, x + t * dir, &p).ok().map(|g| g.norm() * t)
            })
            .collect();
        c_max = prods.iter().copied().fold(c_max, f64::max);
        // once the log part is negligible the product settles
        let tail = &prods[3..];
        let (lo, hi) = tail.iter().fold((f64::INFINITY, 0.0f64), |(lo, hi), &v| (lo.min(v), hi.max(v)));
        drift = drift.max(hi / lo - 1.0);
    }
    let bound = kernel::lifted_norm(Vec2::new(l, 0.0), &p) / (2.0 * std::f64::consts::PI * p.h()) * 2.0;
    report.push_max("|grad G_K| |x-y| bounded", c_max, bound, "separations 1e-1..1e-7".into());
    report.push_max("|grad G_K| |x-y| settles", drift, 0.01, "spread over 1e-4..1e-7".into());
    report
}

/// Settings for [`solver_check`].
#[derive(Debug, Clone, PartialEq)]
pub struct SolverCheckOptions {
    pub h: f64,
    pub radius: f64,
    pub sizes: Vec<usize>,
    pub min_order: f64,
}

impl Default for SolverCheckOptions {
    fn default() -> Self {
        SolverCheckOptions { h: 1.0, radius: 1.0, sizes: vec![65, 129, 257], min_order: 1.9 }
    }
}

/// Manufactured-solution convergence plus operator symmetry.
pub fn solver_check(opts: &SolverCheckOptions) -> (CheckReport, Vec<ManufacturedError>) {
    let mut report = CheckReport::default();
    let fail = |report: &mut CheckReport, name: &str, note: String| {
        report.rows.push(CheckRow { name: name.into(), value: f64::NAN, rule: "-".into(), pass: false, note });
    };
    let (p, domain) = match (HelixParams::new(opts.h), DiskDomain::new(opts.radius)) {
        (Ok(p), Ok(d)) => (p, d),
        (Err(e), _) => {
            fail(&mut report, "pitch", e.to_string());
            return (report, Vec::new());
        }
        (_, Err(e)) => {
            fail(&mut report, "domain", e.to_string());
            return (report, Vec::new());
        }
    };
    if opts.sizes.len() < 2 {
        fail(&mut report, "grid sizes", format!("need at least two grid sizes for an order, got {:?}", opts.sizes));
        return (report, Vec::new());
    }
    if let Some(&n) = opts.sizes.iter().find(|&&n| n < MIN_GRID_NODES) {
        fail(&mut report, "grid sizes", format!("grid size {n} is below the minimum of {MIN_GRID_NODES} nodes per side"));
        return (report, Vec::new());
    }
    let mut levels = Vec::new();
    for &n in &opts.sizes {
        match domain_solver::manufactured_solve(n, &domain, &p) {
            Ok(e) => levels.push(e),
            Err(e) => {
                fail(&mut report, &format!("solve n={n}"), e.to_string());
                return (report, levels);
            }
        }
    }
    for (w, order) in levels.windows(2).zip(domain_solver::convergence_orders(&levels)) {
        report.push_min(
            &format!("L2 order n={}->{}", w[0].n, w[1].n),
            order,
            opts.min_order,
            format!("errors {:.3e} -> {:.3e}", w[0].l2_error, w[1].l2_error),
        );
    }
    let n0 = opts.sizes[0];
    match Grid::covering(&domain, n0) {
        Ok(grid) => {
            let system = domain_solver::assemble_operator(&grid, &p, &domain);
            report.push_max("operator symmetry", system.symmetry_defect(), 1e-14, format!("n={n0}"));
        }
        Err(e) => fail(&mut report, "operator symmetry", e.to_string()),
    }
    (report, levels)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kernel_suite_passes_on_defaults() {
        let r = kernel_check(&KernelCheckOptions { samples: 2000, ..KernelCheckOptions::default() });
        assert!(r.passed(), "{}", r.to_table());
    }

    #[test]
    fn perturbed_rho_fails_the_jacobian_check() {
        let r = kernel_check(&KernelCheckOptions { samples: 200, rho_perturbation: 1e-3, ..KernelCheckOptions::default() });
        assert!(!r.passed());
        let row = r.rows.iter().find(|row| row.name.starts_with("DT")).unwrap();
        assert!(!row.pass);
        assert!(r.rows.iter().filter(|row| !row.name.starts_with("DT")).all(|row| row.pass));
    }

    #[test]
    fn small_grid_is_reported() {
        let (r, _) = solver_check(&SolverCheckOptions { sizes: vec![5, 9], ..SolverCheckOptions::default() });
        assert!(!r.passed());
        assert!(r.rows[0].note.contains("below the minimum"));
        let (r, _) = solver_check(&SolverCheckOptions { sizes: vec![33], ..SolverCheckOptions::default() });
        assert!(!r.passed());
    }

    #[test]
    fn coarse_solver_suite_passes() {
        let (r, levels) = solver_check(&SolverCheckOptions { sizes: vec![33, 65], min_order: 1.7, ..SolverCheckOptions::default() });
        assert_eq!(levels.len(), 2);
        assert!(r.passed(), "{}", r.to_table());
    }
}
