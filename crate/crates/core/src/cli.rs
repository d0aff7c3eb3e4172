//! Command-line front end.
//!
//! Exit codes: 0 success, 1 check failure, 2 usage error, 3 numerical abort.

use std::fmt::Write as _;
use std::fs::{self, File};
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use clap::{Args, Parser, Subcommand};

use crate::checks::{self, KernelCheckOptions, SolverCheckOptions};
use crate::config;
use crate::diagnostics::{self, DiagnosticsRecord, Tolerances};
use crate::domain_solver::{self, DiskDomain, Grid};
use crate::flow::ParticleSystem;
use crate::geometry::{Point2, Point3, Vec2};
use crate::reconstruct3d::{self, Filament, Omega2d};
use crate::sim::{self, SimConfig};

pub const EXIT_OK: i32 = 0;
pub const EXIT_CHECK_FAILED: i32 = 1;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_NUMERICAL: i32 = 3;

pub const DIAGNOSTICS_FILE: &str = "diagnostics.csv";
pub const PARTICLES_FILE: &str = "particles.csv";
pub const MANIFEST_FILE: &str = "manifest.txt";
pub const CONFIG_FILE: &str = "config.ini";

#[derive(Debug, Parser)]
#[command(name = "helivort", version, about = "Helical vortex-blob simulator")]
struct Cli {
    /// Worker threads (0 = all cores).
    #[arg(long, global = true, env = "HELIVORT_THREADS")]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run a simulation and write diagnostics into a run directory.
    Simulate(SimulateArgs),
    /// Check the kernel identities at random points.
    KernelCheck(KernelCheckArgs),
    /// Measure convergence of the elliptic solver on a manufactured solution.
    SolverCheck(SolverCheckArgs),
    /// Compare a finished run with the leading-order filament motion.
    CompareTheory(CompareArgs),
    /// Lift a stored particle snapshot to the 3D vorticity field.
    Reconstruct3d(ReconstructArgs),
}

#[derive(Debug, Args)]
struct SimulateArgs {
    #[arg(long)]
    config: PathBuf,
    /// Output directory; defaults to a fresh `runs/run-<time>-<pid>`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Core radius for every blob.
    #[arg(long)]
    eps: Option<f64>,
    #[arg(long)]
    dt: Option<f64>,
    /// `direct` or `grid`.
    #[arg(long)]
    backend: Option<String>,
    #[arg(long)]
    grid_n: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    t_final: Option<f64>,
    /// Also write the final grid stream function as `grid_psi.csv`.
    #[arg(long)]
    dump_grid: bool,
    /// Skip the per-particle snapshot file.
    #[arg(long)]
    no_particles: bool,
}

#[derive(Debug, Args)]
struct KernelCheckArgs {
    #[arg(long, default_value_t = 1.0)]
    h: f64,
    #[arg(long, default_value_t = 10_000)]
    samples: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, hide = true, default_value_t = 0.0)]
    inject_rho_perturbation: f64,
}

#[derive(Debug, Args)]
struct SolverCheckArgs {
    /// Grid sizes, coarse to fine.
    #[arg(long, value_delimiter = ',', default_values_t = [65usize, 129, 257])]
    sizes: Vec<usize>,
    #[arg(long, default_value_t = 1.0)]
    h: f64,
    #[arg(long, default_value_t = 1.0)]
    radius: f64,
    #[arg(long, default_value_t = 1.9)]
    min_order: f64,
}

#[derive(Debug, Args)]
struct CompareArgs {
    run_dir: PathBuf,
    /// Relative tolerance on the fitted angular velocity.
    #[arg(long, default_value_t = Tolerances::default().nu_rel)]
    nu_tol: f64,
}

#[derive(Debug, Args)]
struct ReconstructArgs {
    run_dir: PathBuf,
    /// Record time to reconstruct.
    #[arg(long)]
    time: f64,
    /// Samples per side of each horizontal slice.
    #[arg(long, default_value_t = 21)]
    samples: usize,
    /// Slices per helical pitch.
    #[arg(long, default_value_t = 16)]
    levels: usize,
    /// Half-width of each slice in units of the core radius.
    #[arg(long, default_value_t = 3.0)]
    width: f64,
    /// Points per filament polyline over one pitch.
    #[arg(long, default_value_t = 129)]
    filament_points: usize,
}

/// Error carrying the exit code it maps to.
#[derive(Debug)]
struct Failure {
    code: i32,
    msg: String,
}

fn usage(msg: impl Into<String>) -> Failure {
    Failure { code: EXIT_USAGE, msg: msg.into() }
}

fn io_err(path: &Path) -> impl Fn(io::Error) -> Failure + '_ {
    move |e| usage(format!("{}: {e}", path.display()))
}

/// Parse `args` (including the program name) and run. Returns the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    let threads = cli.threads.unwrap_or(0);
    let pool = match rayon::ThreadPoolBuilder::new().num_threads(threads).build() {
        Ok(p) => p,
        Err(e) => {
            eprintln!("error: cannot start thread pool: {e}");
            return EXIT_USAGE;
        }
    };
    let threads = pool.current_num_threads();
    let result = pool.install(|| match cli.command {
        Command::Simulate(a) => simulate(a, threads),
        Command::KernelCheck(a) => kernel_check(a),
        Command::SolverCheck(a) => solver_check(a),
        Command::CompareTheory(a) => compare_theory(a),
        Command::Reconstruct3d(a) => reconstruct(a),
    });
    match result {
        Ok(code) => code,
        Err(f) => {
            eprintln!("error: {}", f.msg);
            f.code
        }
    }
}

fn apply_overrides(cfg: &mut SimConfig, a: &SimulateArgs) -> Result<(), Failure> {
    if let Some(eps) = a.eps {
        for b in &mut cfg.blobs {
            b.eps = eps;
        }
    }
    if let Some(dt) = a.dt {
        cfg.dt = Some(dt);
    }
    if let Some(name) = &a.backend {
        cfg.backend = config::parse_backend(name).ok_or_else(|| usage(format!("unknown backend `{name}` (expected direct or grid)")))?;
    }
    if let Some(n) = a.grid_n {
        cfg.grid_n = n;
    }
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    if let Some(t) = a.t_final {
        cfg.t_final = t;
    }
    Ok(())
}

fn unix_now() -> f64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0.0, |d| d.as_secs_f64())
}

fn default_out_dir() -> PathBuf {
    let secs = SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs());
    PathBuf::from("runs").join(format!("run-{secs}-{}", std::process::id()))
}

struct Manifest {
    entries: Vec<(String, String)>,
}

impl Manifest {
    fn set(&mut self, key: &str, value: impl ToString) {
        let value = value.to_string().replace('\n', " ");
        match self.entries.iter_mut().find(|(k, _)| k == key) {
            Some(e) => e.1 = value,
            None => self.entries.push((key.to_string(), value)),
        }
    }

    fn write(&self, path: &Path) -> Result<(), Failure> {
        let mut s = String::new();
        for (k, v) in &self.entries {
            let _ = writeln!(s, "{k}={v}");
        }
        fs::write(path, s).map_err(io_err(path))
    }
}

/// Read `key=value` lines.
pub fn read_manifest(path: &Path) -> io::Result<Vec<(String, String)>> {
    let text = fs::read_to_string(path)?;
    Ok(text
        .lines()
        .filter_map(|l| l.split_once('=').map(|(k, v)| (k.trim().to_string(), v.trim().to_string())))
        .collect())
}

fn simulate(a: SimulateArgs, threads: usize) -> Result<i32, Failure> {
    let text = fs::read_to_string(&a.config).map_err(|e| usage(format!("cannot read config {}: {e}", a.config.display())))?;
    let mut cfg = config::parse(&text).map_err(|e| usage(format!("{}: {e}", a.config.display())))?;
    apply_overrides(&mut cfg, &a)?;
    cfg.validate().map_err(|e| usage(format!("invalid configuration: {e}")))?;
    // pin the derived values so the snapshot reruns identically
    let resolved = SimConfig {
        delta: Some(cfg.resolved_delta().map_err(|e| usage(e.to_string()))?),
        dt: Some(cfg.resolved_dt().map_err(|e| usage(e.to_string()))?),
        eta0: Some(cfg.resolved_eta0()),
        ..cfg.clone()
    };

    let out = a.out.clone().unwrap_or_else(default_out_dir);
    let diag_path = out.join(DIAGNOSTICS_FILE);
    if diag_path.exists() {
        return Err(usage(format!("{} already exists; choose another --out", diag_path.display())));
    }
    fs::create_dir_all(&out).map_err(io_err(&out))?;
    let cfg_path = out.join(CONFIG_FILE);
    fs::write(&cfg_path, config::to_ini(&resolved)).map_err(io_err(&cfg_path))?;

    let eps = resolved.eps().map_err(|e| usage(e.to_string()))?;
    let mut manifest = Manifest { entries: Vec::new() };
    manifest.set("program", "helivort");
    manifest.set("version", env!("CARGO_PKG_VERSION"));
    manifest.set("config_source", a.config.display());
    manifest.set("config", CONFIG_FILE);
    manifest.set("seed", resolved.seed);
    manifest.set("threads", threads);
    manifest.set("backend", config::backend_name(resolved.backend));
    manifest.set("grid_n", resolved.grid_n);
    manifest.set("h", format!("{:?}", resolved.h));
    manifest.set("r_u", format!("{:?}", resolved.r_u));
    manifest.set("eps", format!("{eps:?}"));
    manifest.set("delta", format!("{:?}", resolved.delta.unwrap_or(f64::NAN)));
    manifest.set("dt_requested", format!("{:?}", resolved.dt.unwrap_or(f64::NAN)));
    manifest.set("eta0", format!("{:?}", resolved.eta0.unwrap_or(f64::NAN)));
    manifest.set("t_final", format!("{:?}", resolved.t_final));
    manifest.set("blobs", resolved.blobs.len());
    manifest.set("particles", resolved.blobs.iter().map(|b| b.particles).sum::<usize>());
    manifest.set("diagnostics", DIAGNOSTICS_FILE);
    if !a.no_particles {
        manifest.set("particles_file", PARTICLES_FILE);
    }
    manifest.set("started_unix", format!("{:.3}", unix_now()));
    manifest.set("status", "running");
    let manifest_path = out.join(MANIFEST_FILE);
    manifest.write(&manifest_path)?;

    let mut diag = BufWriter::new(File::create(&diag_path).map_err(io_err(&diag_path))?);
    writeln!(diag, "{}", diagnostics::csv_header(resolved.blobs.len())).map_err(io_err(&diag_path))?;
    let part_path = out.join(PARTICLES_FILE);
    let mut parts = match a.no_particles {
        true => None,
        false => {
            let mut w = BufWriter::new(File::create(&part_path).map_err(io_err(&part_path))?);
            writeln!(w, "t,index,blob,x1,x2,weight").map_err(io_err(&part_path))?;
            Some(w)
        }
    };

    let started = Instant::now();
    let mut write_error: Option<io::Error> = None;
    let outcome = sim::run_with(&resolved, |rec, sys| {
        if write_error.is_some() {
            return;
        }
        let res = (|| -> io::Result<()> {
            writeln!(diag, "{}", diagnostics::csv_row(rec))?;
            diag.flush()?;
            if let Some(w) = parts.as_mut() {
                write_particles(w, rec.t, sys)?;
            }
            Ok(())
        })();
        write_error = res.err();
    });
    let wall = started.elapsed().as_secs_f64();
    if let Some(w) = parts.as_mut() {
        w.flush().map_err(io_err(&part_path))?;
    }
    if let Some(e) = write_error {
        return Err(usage(format!("writing run output in {}: {e}", out.display())));
    }
    manifest.set("wall_seconds", format!("{wall:.3}"));
    let code = match &outcome {
        Ok(res) => {
            manifest.set("status", "ok");
            manifest.set("steps", res.steps);
            manifest.set("dt", format!("{:?}", res.dt));
            manifest.set("records", res.records.len());
            manifest.set(
                "support_violation_t",
                res.support_violation.map_or("none".to_string(), |t| format!("{t:?}")),
            );
            if a.dump_grid {
                let grid_path = out.join("grid_psi.csv");
                dump_grid(&resolved, &res.final_state, &grid_path)?;
                manifest.set("grid_psi", "grid_psi.csv");
            }
            println!(
                "{} steps of dt={:.3e} in {wall:.1}s, {} records -> {}",
                res.steps,
                res.dt,
                res.records.len(),
                out.display()
            );
            if let Some(t) = res.support_violation {
                println!("note: a blob left its support annulus at t={t}");
            }
            EXIT_OK
        }
        Err(e) => {
            manifest.set("status", format!("aborted: {e}"));
            eprintln!("error: {e}");
            if e.is_numerical() {
                EXIT_NUMERICAL
            } else {
                EXIT_USAGE
            }
        }
    };
    manifest.write(&manifest_path)?;
    Ok(code)
}

fn write_particles<W: Write>(w: &mut W, t: f64, sys: &ParticleSystem) -> io::Result<()> {
    for (k, x) in sys.positions.iter().enumerate() {
        writeln!(w, "{t:?},{k},{},{:?},{:?},{:?}", sys.blob_id[k], x.x, x.y, sys.weights[k])?;
    }
    Ok(())
}

fn dump_grid(cfg: &SimConfig, sys: &ParticleSystem, path: &Path) -> Result<(), Failure> {
    let p = cfg.params().map_err(|e| usage(e.to_string()))?;
    let domain = DiskDomain::new(cfg.r_u).map_err(|e| usage(e.to_string()))?;
    let grid = Grid::covering(&domain, cfg.grid_n).map_err(|e| usage(e.to_string()))?;
    let system = domain_solver::assemble_operator(&grid, &p, &domain);
    let omega = domain_solver::deposit(&grid, &sys.positions, &sys.weights).map_err(|e| usage(e.to_string()))?;
    let psi = system.solve_stream(&omega).map_err(|e| Failure { code: EXIT_NUMERICAL, msg: e.to_string() })?;
    let f = BufWriter::new(File::create(path).map_err(io_err(path))?);
    domain_solver::write_field_csv(&grid, &psi, f).map_err(io_err(path))
}

fn kernel_check(a: KernelCheckArgs) -> Result<i32, Failure> {
    let report = checks::kernel_check(&KernelCheckOptions {
        h: a.h,
        samples: a.samples,
        seed: a.seed,
        rho_perturbation: a.inject_rho_perturbation,
        ..KernelCheckOptions::default()
    });
    print!("{}", report.to_table());
    Ok(if report.passed() { EXIT_OK } else { EXIT_CHECK_FAILED })
}

fn solver_check(a: SolverCheckArgs) -> Result<i32, Failure> {
    let (report, levels) = checks::solver_check(&SolverCheckOptions {
        h: a.h,
        radius: a.radius,
        sizes: a.sizes,
        min_order: a.min_order,
    });
    for l in &levels {
        println!("n={:<5} spacing={:.4e} L2 error={:.6e}", l.n, l.spacing, l.l2_error);
    }
    print!("{}", report.to_table());
    Ok(if report.passed() { EXIT_OK } else { EXIT_CHECK_FAILED })
}

fn load_run(dir: &Path) -> Result<(SimConfig, Vec<DiagnosticsRecord>), Failure> {
    if !dir.is_dir() {
        return Err(usage(format!("run directory {} does not exist", dir.display())));
    }
    let cfg_path = dir.join(CONFIG_FILE);
    let diag_path = dir.join(DIAGNOSTICS_FILE);
    if !cfg_path.exists() || !diag_path.exists() {
        return Err(usage(format!("{} is not a run directory (needs {CONFIG_FILE} and {DIAGNOSTICS_FILE})", dir.display())));
    }
    let text = fs::read_to_string(&cfg_path).map_err(io_err(&cfg_path))?;
    let cfg = config::parse(&text).map_err(|e| usage(format!("{}: {e}", cfg_path.display())))?;
    let file = File::open(&diag_path).map_err(io_err(&diag_path))?;
    let records = diagnostics::read_csv(BufReader::new(file)).map_err(|e| usage(format!("{}: {e}", diag_path.display())))?;
    if records.is_empty() {
        return Err(usage(format!("{} has no records", diag_path.display())));
    }
    Ok((cfg, records))
}

fn compare_theory(a: CompareArgs) -> Result<i32, Failure> {
    let (cfg, records) = load_run(&a.run_dir)?;
    let p = cfg.params().map_err(|e| usage(e.to_string()))?;
    let tol = Tolerances { nu_rel: a.nu_tol, ..Tolerances::default() };
    let report = diagnostics::theory_compare(&records, &cfg.blobs, &p, &tol);
    let text = report.to_text();
    let report_path = a.run_dir.join("report.txt");
    let summary_path = a.run_dir.join("summary.txt");
    fs::write(&report_path, &text).map_err(io_err(&report_path))?;
    fs::write(&summary_path, report.to_summary()).map_err(io_err(&summary_path))?;
    print!("{text}");
    Ok(if report.passed() { EXIT_OK } else { EXIT_CHECK_FAILED })
}

/// Particle snapshots keyed by record time, in file order.
pub fn read_particles<R: BufRead>(input: R) -> io::Result<Vec<(f64, ParticleRows)>> {
    let bad = |n: usize, msg: &str| io::Error::new(io::ErrorKind::InvalidData, format!("row {n}: {msg}"));
    let mut out: Vec<(f64, ParticleRows)> = Vec::new();
    for (n, line) in input.lines().enumerate() {
        let line = line?;
        if n == 0 || line.trim().is_empty() {
            continue;
        }
        let f: Vec<&str> = line.trim().split(',').collect();
        if f.len() != 6 {
            return Err(bad(n + 1, "expected 6 fields"));
        }
        let num = |s: &str| s.parse::<f64>().map_err(|_| bad(n + 1, "bad number"));
        let t = num(f[0])?;
        let blob = f[2].parse::<usize>().map_err(|_| bad(n + 1, "bad blob index"))?;
        let (x, w) = (Vec2::new(num(f[3])?, num(f[4])?), num(f[5])?);
        if out.last().is_none_or(|(t0, _)| *t0 != t) {
            out.push((t, ParticleRows::default()));
        }
        let rows = &mut out.last_mut().expect("just pushed").1;
        rows.positions.push(x);
        rows.weights.push(w);
        rows.blob.push(blob);
    }
    Ok(out)
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParticleRows {
    pub positions: Vec<Point2>,
    pub weights: Vec<f64>,
    pub blob: Vec<usize>,
}

fn reconstruct(a: ReconstructArgs) -> Result<i32, Failure> {
    let (cfg, _) = load_run(&a.run_dir)?;
    let part_path = a.run_dir.join(PARTICLES_FILE);
    let file = File::open(&part_path).map_err(|e| usage(format!("{}: {e} (was the run made with --no-particles?)", part_path.display())))?;
    let snaps = read_particles(BufReader::new(file)).map_err(io_err(&part_path))?;
    let tol = 1e-9 * a.time.abs().max(1.0);
    let Some((t, rows)) = snaps.iter().find(|(t, _)| (t - a.time).abs() <= tol) else {
        let mut times: Vec<f64> = snaps.iter().map(|(t, _)| *t).collect();
        times.sort_by(|x, y| (x - a.time).abs().total_cmp(&(y - a.time).abs()));
        let near: Vec<String> = times.iter().take(3).map(|t| format!("{t}")).collect();
        return Err(usage(format!("time {} is not stored in the run; nearest: {}", a.time, near.join(", "))));
    };
    let p = cfg.params().map_err(|e| usage(e.to_string()))?;
    let eps = cfg.eps().map_err(|e| usage(e.to_string()))?;
    let bandwidth = cfg.resolved_delta().map_err(|e| usage(e.to_string()))?;
    let omega = Omega2d::new(rows.positions.clone(), rows.weights.clone(), bandwidth);

    let mut samples: Vec<Point3> = Vec::new();
    for i in 0..cfg.blobs.len() {
        let (mut c, mut m) = (Vec2::ZERO, 0.0);
        for k in (0..rows.positions.len()).filter(|&k| rows.blob[k] == i) {
            c += rows.weights[k] * rows.positions[k];
            m += rows.weights[k];
        }
        if m != 0.0 {
            samples.extend(reconstruct3d::tube_samples(c / m, a.width * eps, a.samples, a.levels, &p));
        }
    }
    let field = reconstruct3d::vorticity3d(&samples, &omega, &p);

    let sigmas: Vec<f64> = (0..a.filament_points)
        .map(|k| 2.0 * std::f64::consts::PI * k as f64 / (a.filament_points.max(2) - 1) as f64)
        .collect();
    let filaments: Vec<Filament> = cfg
        .blobs
        .iter()
        .enumerate()
        .map(|(i, spec)| Filament { blob: i, t: *t, points: reconstruct3d::helix_curve(spec, &p, *t, &sigmas) })
        .collect();

    // the lifted field must commute with the helical group
    let theta = 0.7;
    let mut inv_err: f64 = 0.0;
    let mut scale: f64 = 0.0;
    for (x, w) in samples.iter().zip(&field).step_by(37) {
        let moved = reconstruct3d::vorticity_at(reconstruct3d::helical_map(theta, *x, &p), &omega, &p);
        inv_err = inv_err.max((moved - reconstruct3d::rotate_about_axis(theta, *w)).norm());
        scale = scale.max(w.norm());
    }
    let rel = if scale > 0.0 { inv_err / scale } else { 0.0 };

    let cloud_path = a.run_dir.join(format!("vorticity3d_t{t}.csv"));
    let fil_path = a.run_dir.join(format!("filaments_t{t}.csv"));
    let w = BufWriter::new(File::create(&cloud_path).map_err(io_err(&cloud_path))?);
    reconstruct3d::write_point_cloud(&samples, &field, w).map_err(io_err(&cloud_path))?;
    let w = BufWriter::new(File::create(&fil_path).map_err(io_err(&fil_path))?);
    reconstruct3d::write_filaments(&filaments, w).map_err(io_err(&fil_path))?;
    println!("t={t}: {} samples -> {}", samples.len(), cloud_path.display());
    println!("filaments -> {}", fil_path.display());
    println!("helical invariance defect {rel:.3e}");
    Ok(if rel <= 1e-10 { EXIT_OK } else { EXIT_CHECK_FAILED })
}
