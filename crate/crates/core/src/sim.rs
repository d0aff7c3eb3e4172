//! Blob initialisation, RK4 advection in rescaled time and the
//! leading-order helix model.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::diagnostics::{self, DiagnosticsError, DiagnosticsRecord, RecordContext};
use crate::domain_solver::{DiskDomain, SolverError};
use crate::flow::{self, FlowError, ParticleSystem, VelocityBackend};
use crate::geometry::{rotation_matrix, Point2, Vec2};
use crate::kernel::{self, HelixParams, KernelError};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("blobs {0} and {1} sit at the same distance from the axis")]
    EqualRadii(usize, usize),
    #[error("blob {index} reaches radius {reach} but the domain radius is {r_u}")]
    BlobOutsideDomain { index: usize, reach: f64, r_u: f64 },
    #[error("supports of blobs {0} and {1} are closer than 2 eta0 = {2}")]
    Overlap(usize, usize, f64),
    #[error("blobs use different concentration scales ({0} and {1}); the time rescaling needs one eps")]
    MixedEps(f64, f64),
    #[error("step {dt} violates the stability guard (max speed {vmax}); use dt <= {suggested}")]
    StabilityGuard { dt: f64, vmax: f64, suggested: f64 },
    #[error("particle {index} left the disk at t = {t}")]
    ParticleEscape { index: usize, t: f64 },
    #[error("non-finite velocity at t = {0}")]
    NonFinite(f64),
    #[error(transparent)]
    Kernel(#[from] KernelError),
    #[error(transparent)]
    Flow(#[from] FlowError),
    #[error(transparent)]
    Solver(#[from] SolverError),
    #[error(transparent)]
    Diagnostics(#[from] DiagnosticsError),
}

impl SimError {
    /// Aborts caused by the numerics rather than the input.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            SimError::StabilityGuard { .. }
                | SimError::ParticleEscape { .. }
                | SimError::NonFinite(_)
                | SimError::Solver(SolverError::NotConverged { .. })
                | SimError::Flow(FlowError::Solver(SolverError::NotConverged { .. }))
        )
    }
}

/// Vorticity profile inside a blob.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Profile {
    /// Constant density `γ/(πε²)` on the disk `B(z₀, ε)`.
    #[default]
    Uniform,
}

/// One concentrated patch of vorticity.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BlobSpec {
    pub center: Point2,
    pub eps: f64,
    pub circulation: f64,
    pub particles: usize,
    pub profile: Profile,
}

impl BlobSpec {
    pub fn new(center: Point2, eps: f64, circulation: f64, particles: usize) -> Self {
        BlobSpec { center, eps, circulation, particles, profile: Profile::Uniform }
    }
}

/// Angular frequency `ν = −γ / (4πh sqrt(|z₀|² + h²))`.
pub fn nu(spec: &BlobSpec, p: &HelixParams) -> f64 {
    -spec.circulation / (4.0 * PI * p.h() * kernel::lifted_norm(spec.center, p))
}

/// Leading-order centre `R̃_{tν} z₀`.
pub fn leading_order(spec: &BlobSpec, p: &HelixParams, t: f64) -> Point2 {
    rotation_matrix(t * nu(spec, p)).mul_vec(spec.center)
}

/// Leading-order centres and frequencies of every blob at one time.
#[derive(Debug, Clone, PartialEq)]
pub struct LeadingOrderState {
    pub z: Vec<Point2>,
    pub nu: Vec<f64>,
}

impl LeadingOrderState {
    pub fn at(specs: &[BlobSpec], p: &HelixParams, t: f64) -> Self {
        LeadingOrderState {
            z: specs.iter().map(|s| leading_order(s, p, t)).collect(),
            nu: specs.iter().map(|s| nu(s, p)).collect(),
        }
    }
}

/// `η₀ = ¼ min({||z_i| − |z_j||, i ≠ j} ∪ {R_U − |z_i|})`.
pub fn eta0(specs: &[BlobSpec], r_u: f64) -> f64 {
    let mut m = f64::INFINITY;
    for (i, a) in specs.iter().enumerate() {
        m = m.min(r_u - a.center.norm());
        for b in &specs[i + 1..] {
            m = m.min((a.center.norm() - b.center.norm()).abs());
        }
    }
    0.25 * m
}

fn validate_specs(specs: &[BlobSpec], r_u: f64, eta0: f64) -> Result<(), SimError> {
    if specs.is_empty() {
        return Err(SimError::Config("at least one blob is required".into()));
    }
    for (i, s) in specs.iter().enumerate() {
        if !(s.center.is_finite() && s.eps > 0.0 && s.eps < 1.0) {
            return Err(SimError::Config(format!("blob {i}: eps must lie in (0, 1), got {}", s.eps)));
        }
        if !(s.circulation != 0.0 && s.circulation.is_finite()) {
            return Err(SimError::Config(format!("blob {i}: circulation must be nonzero")));
        }
        if s.particles == 0 {
            return Err(SimError::Config(format!("blob {i}: particle count must be positive")));
        }
        let reach = s.center.norm() + s.eps;
        if reach >= r_u {
            return Err(SimError::BlobOutsideDomain { index: i, reach, r_u });
        }
        if s.eps != specs[0].eps {
            return Err(SimError::MixedEps(specs[0].eps, s.eps));
        }
        for (j, o) in specs.iter().enumerate().skip(i + 1) {
            if s.center.norm() == o.center.norm() {
                return Err(SimError::EqualRadii(i, j));
            }
            let gap = (s.center - o.center).norm() - s.eps - o.eps;
            if gap < 2.0 * eta0 {
                return Err(SimError::Overlap(i, j, 2.0 * eta0));
            }
        }
    }
    Ok(())
}

const GOLDEN_ANGLE: f64 = 2.399_963_229_728_653;

/// Offsets of a mirrored sunflower in the unit disk.
///
/// Pairs `±sqrt((k + ½)/m) e^{ikφ}` plus a centre point when the count is
/// odd. The pairs cancel exactly in the first moment, and for even counts
/// the mean squared radius is exactly ½.
fn sunflower(count: usize, phase: &[f64]) -> Vec<Vec2> {
    let pairs = count / 2;
    let mut out = Vec::with_capacity(count);
    if count % 2 == 1 {
        out.push(Vec2::ZERO);
    }
    for k in 0..pairs {
        let r = ((k as f64 + 0.5) / pairs as f64).sqrt();
        let a = GOLDEN_ANGLE * k as f64 + phase.get(k).copied().unwrap_or(0.0);
        let v = Vec2::new(r * a.cos(), r * a.sin());
        out.push(v);
        out.push(-v);
    }
    out
}

/// Angular jitter of sunflower pairs; zero keeps the layout fully deterministic.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Jitter {
    pub amplitude: f64,
    pub seed: u64,
}

/// Place `P` equal-weight particles per blob inside `B(z_{i,0}, ε)`.
pub fn init_blobs(
    specs: &[BlobSpec],
    p: HelixParams,
    domain: DiskDomain,
    delta: f64,
    eta0: f64,
    jitter: Option<Jitter>,
) -> Result<ParticleSystem, SimError> {
    validate_specs(specs, domain.radius(), eta0)?;
    let mut positions = Vec::new();
    let mut weights = Vec::new();
    let mut blob_id = Vec::new();
    let mut rng = ChaCha8Rng::seed_from_u64(jitter.map_or(0, |j| j.seed));
    for (i, s) in specs.iter().enumerate() {
        let phase: Vec<f64> = match jitter {
            Some(j) if j.amplitude > 0.0 => (0..s.particles / 2).map(|_| rng.gen_range(-j.amplitude..j.amplitude)).collect(),
            _ => Vec::new(),
        };
        let w = s.circulation / s.particles as f64;
        for off in sunflower(s.particles, &phase) {
            positions.push(s.center + s.eps * off);
            weights.push(w);
            blob_id.push(i);
        }
    }
    Ok(ParticleSystem::new(positions, weights, blob_id, specs[0].eps, delta, p, domain)?)
}

/// Rescaled velocity at every particle.
pub fn particle_velocity(sys: &ParticleSystem, backend: &VelocityBackend) -> Result<Vec<Vec2>, SimError> {
    let v = match backend {
        VelocityBackend::Direct => flow::velocity_self(sys),
        other => other.velocity(sys, &sys.positions)?,
    };
    Ok(flow::rescaled_velocity(&v, sys.eps)?)
}

/// Largest step allowed by `dt ≤ ½ δ / max|v|` for a given rescaled field.
pub fn guard_limit(delta: f64, v: &[Vec2]) -> (f64, f64) {
    let vmax = v.iter().map(|u| u.norm()).fold(0.0, f64::max);
    let limit = if vmax > 0.0 { 0.5 * delta / vmax } else { f64::INFINITY };
    (limit, vmax)
}

/// One classical RK4 step of `dx/dt = v(x)/|ln ε|`.
///
/// The guard is checked against the first-stage speeds; `t` only labels
/// errors. Weights are untouched.
pub fn step_rk4(sys: &ParticleSystem, dt: f64, backend: &VelocityBackend, t: f64) -> Result<ParticleSystem, SimError> {
    let k1 = particle_velocity(sys, backend)?;
    let (limit, vmax) = guard_limit(sys.delta, &k1);
    if !vmax.is_finite() {
        return Err(SimError::NonFinite(t));
    }
    if dt.abs() > limit {
        return Err(SimError::StabilityGuard { dt: dt.abs(), vmax, suggested: 0.9 * limit });
    }
    let stage = |k: &[Vec2], c: f64| -> Result<ParticleSystem, SimError> {
        let pos: Vec<Point2> = sys.positions.iter().zip(k).map(|(&x, &v)| x + c * v).collect();
        check_inside(sys, &pos, t)?;
        Ok(sys.with_positions(pos))
    };
    let k2 = particle_velocity(&stage(&k1, 0.5 * dt)?, backend)?;
    let k3 = particle_velocity(&stage(&k2, 0.5 * dt)?, backend)?;
    let k4 = particle_velocity(&stage(&k3, dt)?, backend)?;
    let pos: Vec<Point2> = (0..sys.len())
        .map(|j| sys.positions[j] + (dt / 6.0) * (k1[j] + 2.0 * k2[j] + 2.0 * k3[j] + k4[j]))
        .collect();
    if pos.iter().any(|x| !x.is_finite()) {
        return Err(SimError::NonFinite(t));
    }
    check_inside(sys, &pos, t + dt)?;
    Ok(sys.with_positions(pos))
}

fn check_inside(sys: &ParticleSystem, pos: &[Point2], t: f64) -> Result<(), SimError> {
    match pos.iter().position(|x| !sys.domain.contains(*x)) {
        Some(index) => Err(SimError::ParticleEscape { index, t }),
        None => Ok(()),
    }
}

/// Velocity backend requested by a configuration.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum BackendChoice {
    #[default]
    Direct,
    Grid,
}

/// Everything needed for one run.
#[derive(Debug, Clone, PartialEq)]
pub struct SimConfig {
    pub h: f64,
    pub r_u: f64,
    pub blobs: Vec<BlobSpec>,
    /// Rescaled-time step; `None` selects [`default_dt`].
    pub dt: Option<f64>,
    pub t_final: f64,
    pub backend: BackendChoice,
    /// Regularisation length; `None` selects the initial particle spacing.
    pub delta: Option<f64>,
    pub grid_n: usize,
    /// Annulus half-width; `None` computes it from the blob radii.
    pub eta0: Option<f64>,
    /// Steps between diagnostics records; `None` aims for about 100 records.
    pub cadence: Option<usize>,
    pub seed: u64,
    /// Amplitude of the seeded angular jitter of the layout (radians).
    pub jitter: f64,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            h: 1.0,
            r_u: 2.0,
            blobs: Vec::new(),
            dt: None,
            t_final: 1.0,
            backend: BackendChoice::Direct,
            delta: None,
            grid_n: 129,
            eta0: None,
            cadence: None,
            seed: 0,
            jitter: 0.0,
        }
    }
}

/// Default particles per blob.
pub const DEFAULT_PARTICLES: usize = 2000;

impl SimConfig {
    pub fn params(&self) -> Result<HelixParams, SimError> {
        Ok(HelixParams::new(self.h)?)
    }

    pub fn eps(&self) -> Result<f64, SimError> {
        self.blobs.first().map(|b| b.eps).ok_or_else(|| SimError::Config("at least one blob is required".into()))
    }

    pub fn resolved_eta0(&self) -> f64 {
        self.eta0.unwrap_or_else(|| eta0(&self.blobs, self.r_u))
    }

    pub fn resolved_delta(&self) -> Result<f64, SimError> {
        match self.delta {
            Some(d) => Ok(d),
            None => {
                let eps = self.eps()?;
                let p = self.blobs.iter().map(|b| b.particles).max().unwrap_or(1);
                Ok(flow::default_delta(eps, p))
            }
        }
    }

    pub fn resolved_dt(&self) -> Result<f64, SimError> {
        match self.dt {
            Some(dt) => Ok(dt),
            None => Ok(default_dt(&self.blobs, &self.params()?, self.resolved_delta()?)),
        }
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let p = self.params()?;
        if !(self.r_u.is_finite() && self.r_u > 0.0) {
            return Err(SimError::Config(format!("r_u must be positive, got {}", self.r_u)));
        }
        if !(self.t_final.is_finite() && self.t_final >= 0.0) {
            return Err(SimError::Config(format!("t_final must be nonnegative, got {}", self.t_final)));
        }
        if let Some(dt) = self.dt {
            if !(dt.is_finite() && dt > 0.0) {
                return Err(SimError::Config(format!("dt must be positive, got {dt}")));
            }
        }
        if let Some(d) = self.delta {
            if !(d.is_finite() && d > 0.0) {
                return Err(SimError::Config(format!("delta must be positive, got {d}")));
            }
        }
        if self.cadence == Some(0) {
            return Err(SimError::Config("cadence must be at least 1".into()));
        }
        let e0 = self.resolved_eta0();
        if !(e0.is_finite() && e0 > 0.0) {
            return Err(SimError::Config(format!("eta0 must be positive, got {e0}")));
        }
        validate_specs(&self.blobs, self.r_u, e0)?;
        let _ = p;
        Ok(())
    }
}

/// Default rescaled step.
///
/// A uniform blob of circulation `γ` and radius `ε` spins with edge speed
/// about `u = |γ| |X| / (2πhε |ln ε|)` in rescaled time. The step is the
/// smaller of `0.4 δ / u` (inside the `½ δ / max|v|` guard with margin) and
/// one fortieth of the edge turnover period `2πε / u`.
pub fn default_dt(specs: &[BlobSpec], p: &HelixParams, delta: f64) -> f64 {
    let mut dt = f64::INFINITY;
    for s in specs {
        let u = s.circulation.abs() * kernel::lifted_norm(s.center, p) / (2.0 * PI * p.h() * s.eps * s.eps.ln().abs());
        dt = dt.min(0.4 * delta / u).min(2.0 * PI * s.eps / u / 40.0);
    }
    dt
}

/// Result of [`run`].
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub records: Vec<DiagnosticsRecord>,
    pub final_state: ParticleSystem,
    /// Particle positions at each record time.
    pub snapshots: Vec<(f64, Vec<Point2>)>,
    /// First step at which some blob left its annulus, if any.
    pub support_violation: Option<f64>,
    pub steps: usize,
    pub dt: f64,
    pub delta: f64,
    pub eta0: f64,
}

/// Build the initial particle system for a configuration.
pub fn initial_state(config: &SimConfig) -> Result<ParticleSystem, SimError> {
    config.validate()?;
    let jitter = (config.jitter > 0.0).then_some(Jitter { amplitude: config.jitter, seed: config.seed });
    init_blobs(
        &config.blobs,
        config.params()?,
        DiskDomain::new(config.r_u)?,
        config.resolved_delta()?,
        config.resolved_eta0(),
        jitter,
    )
}

/// Advance to `t_final`, calling `on_record` for each diagnostics record.
///
/// The step is shrunk so that a whole number of steps lands on `t_final`.
pub fn run_with<F>(config: &SimConfig, mut on_record: F) -> Result<RunOutput, SimError>
where
    F: FnMut(&DiagnosticsRecord, &ParticleSystem),
{
    let mut sys = initial_state(config)?;
    let p = config.params()?;
    let eps = config.eps()?;
    let e0 = config.resolved_eta0();
    let backend = match config.backend {
        BackendChoice::Direct => VelocityBackend::Direct,
        BackendChoice::Grid => VelocityBackend::grid(&sys.domain, &p, config.grid_n)?,
    };
    let ctx = RecordContext {
        r0: config.blobs.iter().map(|b| b.center.norm()).collect(),
        eta0: e0,
        r_eps: diagnostics::r_eps(eps).unwrap_or(eps),
    };
    let steps = if config.t_final > 0.0 { (config.t_final / config.resolved_dt()?).ceil() as usize } else { 0 };
    let dt = if steps > 0 { config.t_final / steps as f64 } else { 0.0 };
    let cadence = config.cadence.unwrap_or((steps / 100).max(1));

    let mut records = Vec::new();
    let mut snapshots = Vec::new();
    let mut emit = |sys: &ParticleSystem, t: f64, records: &mut Vec<DiagnosticsRecord>| -> Result<(), SimError> {
        let rec = diagnostics::record(sys, t, &ctx)?;
        on_record(&rec, sys);
        records.push(rec);
        snapshots.push((t, sys.positions.clone()));
        Ok(())
    };
    emit(&sys, 0.0, &mut records)?;
    let mut violation = (!inside_annuli(&sys, &ctx)).then_some(0.0);
    for n in 0..steps {
        let t = n as f64 * dt;
        sys = step_rk4(&sys, dt, &backend, t)?;
        let t_next = if n + 1 == steps { config.t_final } else { (n + 1) as f64 * dt };
        if violation.is_none() && !inside_annuli(&sys, &ctx) {
            violation = Some(t_next);
        }
        if (n + 1) % cadence == 0 || n + 1 == steps {
            emit(&sys, t_next, &mut records)?;
        }
    }
    Ok(RunOutput {
        records,
        final_state: sys,
        snapshots,
        support_violation: violation,
        steps,
        dt,
        delta: config.resolved_delta()?,
        eta0: e0,
    })
}

pub fn run(config: &SimConfig) -> Result<RunOutput, SimError> {
    run_with(config, |_, _| {})
}

fn inside_annuli(sys: &ParticleSystem, ctx: &RecordContext) -> bool {
    (0..sys.len()).all(|k| (sys.positions[k].norm() - ctx.r0[sys.blob_id[k]]).abs() < ctx.eta0)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params() -> HelixParams {
        HelixParams::new(1.0).unwrap()
    }

    fn domain() -> DiskDomain {
        DiskDomain::new(2.0).unwrap()
    }

    #[test]
    fn nu_examples() {
        let s = BlobSpec::new(Vec2::new(3f64.sqrt(), 0.0), 0.01, 8.0 * PI, 1);
        assert!((nu(&s, &params()) + 1.0).abs() < 1e-15);
        let s = BlobSpec::new(Vec2::new(1.0, 0.0), 0.01, 1.0, 1);
        assert!((nu(&s, &params()) + 0.056_269_769_8).abs() < 1e-9);
    }

    #[test]
    fn leading_order_rotates_clockwise_for_positive_circulation() {
        let s = BlobSpec::new(Vec2::new(3f64.sqrt(), 0.0), 0.01, 8.0 * PI, 1);
        let p = params();
        assert_eq!(leading_order(&s, &p, 0.0), s.center);
        let z = leading_order(&s, &p, PI / 2.0);
        assert!((z - Vec2::new(0.0, -(3f64.sqrt()))).norm() < 1e-14);
        for t in [0.3, 1.7, 25.0] {
            assert!((leading_order(&s, &p, t).norm() - s.center.norm()).abs() < 1e-14);
        }
    }

    #[test]
    fn leading_order_satisfies_its_ode() {
        let s = BlobSpec::new(Vec2::new(0.6, -0.4), 0.01, 1.7, 1);
        let p = params();
        let (t, h) = (0.8, 1e-5);
        let fd = (leading_order(&s, &p, t + h) - leading_order(&s, &p, t - h)) / (2.0 * h);
        let rhs = nu(&s, &p) * leading_order(&s, &p, t).perp();
        assert!((fd - rhs).norm() < 1e-9);
        let st = LeadingOrderState::at(&[s], &p, t);
        assert_eq!(st.z[0], leading_order(&s, &p, t));
    }

    #[test]
    fn eta0_uses_both_separation_sets() {
        let a = BlobSpec::new(Vec2::new(0.5, 0.0), 0.01, 1.0, 1);
        let b = BlobSpec::new(Vec2::new(1.0, 0.0), 0.01, 1.0, 1);
        assert!((eta0(&[a, b], 2.0) - 0.125).abs() < 1e-15);
        assert!((eta0(&[b], 1.2) - 0.05).abs() < 1e-15);
    }

    #[test]
    fn single_particle_blob() {
        let s = BlobSpec::new(Vec2::new(0.7, 0.2), 0.05, 1.5, 1);
        let sys = init_blobs(&[s], params(), domain(), 1e-3, 0.25, None).unwrap();
        assert_eq!(sys.positions, vec![s.center]);
        assert_eq!(sys.weights, vec![1.5]);
    }

    #[test]
    fn uniform_disk_moment_and_centre() {
        let z = Vec2::new(1.0, 0.0);
        for count in [2000, 5000, 5001] {
            let s = BlobSpec::new(z, 0.01, 1.0, count);
            let sys = init_blobs(&[s], params(), domain(), 1e-3, 0.25, None).unwrap();
            let gamma: f64 = sys.weights.iter().sum();
            assert!((gamma - 1.0).abs() < 1e-12);
            let b = crate::diagnostics::center_of_mass(&sys, 0).unwrap();
            assert!((b - z).norm() < 1e-12);
            let m: f64 = sys.positions.iter().zip(&sys.weights).map(|(y, w)| w * (*y - z).norm_sq()).sum::<f64>() / gamma;
            let exact = 0.5 * 1e-4;
            assert!((m - exact).abs() < 0.01 * exact, "{count}: {m}");
            assert!(sys.positions.iter().all(|y| (*y - z).norm() < 0.01));
        }
    }

    #[test]
    fn spec_validation() {
        let p = params();
        let a = BlobSpec::new(Vec2::new(1.0, 0.0), 0.01, 1.0, 10);
        let same = BlobSpec::new(Vec2::new(0.0, 1.0), 0.01, 1.0, 10);
        assert!(matches!(init_blobs(&[a, same], p, domain(), 1e-3, 0.1, None), Err(SimError::EqualRadii(0, 1))));
        let far = BlobSpec::new(Vec2::new(1.995, 0.0), 0.01, 1.0, 10);
        assert!(matches!(init_blobs(&[far], p, domain(), 1e-3, 0.1, None), Err(SimError::BlobOutsideDomain { .. })));
        let near = BlobSpec::new(Vec2::new(1.05, 0.0), 0.01, 1.0, 10);
        assert!(matches!(init_blobs(&[a, near], p, domain(), 1e-3, 0.1, None), Err(SimError::Overlap(0, 1, _))));
        let other_eps = BlobSpec::new(Vec2::new(0.4, 0.0), 0.02, 1.0, 10);
        assert!(matches!(init_blobs(&[a, other_eps], p, domain(), 1e-3, 0.1, None), Err(SimError::MixedEps(..))));
        let zero = BlobSpec::new(Vec2::new(0.4, 0.0), 0.01, 0.0, 10);
        assert!(matches!(init_blobs(&[zero], p, domain(), 1e-3, 0.1, None), Err(SimError::Config(_))));
    }

    #[test]
    fn zero_circulation_leaves_positions_fixed() {
        let pts = vec![Vec2::new(0.3, 0.1), Vec2::new(-0.2, 0.5)];
        let sys = ParticleSystem::new(pts.clone(), vec![0.0, 0.0], vec![0, 0], 0.05, 0.01, params(), domain()).unwrap();
        let next = step_rk4(&sys, 0.1, &VelocityBackend::Direct, 0.0).unwrap();
        assert_eq!(next.positions, pts);
    }

    fn single(x: Point2, w: f64) -> ParticleSystem {
        ParticleSystem::new(vec![x], vec![w], vec![0], 0.05, 0.01, params(), domain()).unwrap()
    }

    #[test]
    fn single_particle_stays_on_its_circle() {
        // speed of the self-term, rescaled: |w H ln δ / (2|X|)| / |ln ε|
        let x0 = Vec2::new(0.9, 0.0);
        let sys = single(x0, 1.0);
        let v = particle_velocity(&sys, &VelocityBackend::Direct).unwrap()[0];
        let omega = v.norm() / x0.norm();
        let drift = |dt: f64| {
            let steps = (1.0 / dt).round() as usize;
            let mut s = sys.clone();
            for n in 0..steps {
                s = step_rk4(&s, dt, &VelocityBackend::Direct, n as f64 * dt).unwrap();
            }
            (s.positions[0].norm() - x0.norm()).abs()
        };
        let dt = 0.2 * sys.delta / v.norm();
        let (e1, e2) = (drift(dt), drift(dt / 2.0));
        assert!(omega * dt < 0.1);
        assert!(e1 < 1e-10, "{e1}");
        // order 4 unless already at round-off
        assert!(e2 < e1 / 10.0 || e1 < 1e-14, "{e1} {e2}");
    }

    #[test]
    fn time_reversal_error_is_fifth_order() {
        let s = BlobSpec::new(Vec2::new(1.0, 0.0), 0.05, 1.0, 60);
        let sys = init_blobs(&[s], params(), domain(), 0.02, 0.25, None).unwrap();
        let v = particle_velocity(&sys, &VelocityBackend::Direct).unwrap();
        let (limit, _) = guard_limit(sys.delta, &v);
        let err = |dt: f64| {
            let fwd = step_rk4(&sys, dt, &VelocityBackend::Direct, 0.0).unwrap();
            let back = step_rk4(&fwd, -dt, &VelocityBackend::Direct, dt).unwrap();
            back.positions.iter().zip(&sys.positions).map(|(a, b)| (*a - *b).norm()).fold(0.0, f64::max)
        };
        let (e1, e2) = (err(0.8 * limit), err(0.4 * limit));
        let order = (e1 / e2).log2();
        assert!(order > 4.5, "order {order} ({e1} {e2})");
    }

    #[test]
    fn stability_guard_suggests_a_step() {
        let s = BlobSpec::new(Vec2::new(1.0, 0.0), 0.05, 1.0, 30);
        let sys = init_blobs(&[s], params(), domain(), 0.02, 0.25, None).unwrap();
        match step_rk4(&sys, 10.0, &VelocityBackend::Direct, 0.0) {
            Err(SimError::StabilityGuard { suggested, .. }) => {
                assert!(suggested > 0.0 && suggested < 10.0);
                assert!(step_rk4(&sys, suggested, &VelocityBackend::Direct, 0.0).is_ok());
            }
            other => panic!("expected guard error, got {other:?}"),
        }
    }

    #[test]
    fn escaping_particle_aborts() {
        // a strong point vortex beside one near the wall pushes it out
        let pts = vec![Vec2::new(1.9, 0.0), Vec2::new(1.85, 0.05)];
        let sys = ParticleSystem::new(pts, vec![50.0, 50.0], vec![0, 1], 0.05, 0.5, params(), DiskDomain::new(1.92).unwrap()).unwrap();
        let v = particle_velocity(&sys, &VelocityBackend::Direct).unwrap();
        let (limit, _) = guard_limit(sys.delta, &v);
        let mut s = sys;
        let mut escaped = false;
        for n in 0..200 {
            match step_rk4(&s, 0.9 * limit, &VelocityBackend::Direct, n as f64) {
                Ok(next) => s = next,
                Err(SimError::ParticleEscape { .. }) => {
                    escaped = true;
                    break;
                }
                Err(e) => panic!("{e}"),
            }
        }
        assert!(escaped);
    }

    fn small_config(t_final: f64) -> SimConfig {
        SimConfig {
            blobs: vec![BlobSpec::new(Vec2::new(1.0, 0.0), 0.05, 1.0, 40)],
            t_final,
            delta: Some(0.02),
            ..SimConfig::default()
        }
    }

    #[test]
    fn zero_horizon_gives_initial_record_only() {
        let out = run(&small_config(0.0)).unwrap();
        assert_eq!(out.records.len(), 1);
        assert_eq!(out.steps, 0);
        assert_eq!(out.records[0].t, 0.0);
    }

    #[test]
    fn run_is_deterministic_and_conserves_circulation() {
        let cfg = SimConfig { cadence: Some(5), ..small_config(0.05) };
        let a = run(&cfg).unwrap();
        let b = run(&cfg).unwrap();
        assert_eq!(a.records, b.records);
        assert!(a.records.len() >= 2);
        assert_eq!(a.final_state.weights, initial_state(&cfg).unwrap().weights);
        assert!((a.records.last().unwrap().t - 0.05).abs() < 1e-15);
        assert!(a.support_violation.is_none());
    }

    #[test]
    fn annulus_violation_is_recorded_not_fatal() {
        let cfg = SimConfig { eta0: Some(0.051), ..small_config(0.5) };
        let out = run(&cfg).unwrap();
        assert!(out.records.iter().any(|r| !r.support_ok) == out.support_violation.is_some());
    }

    #[test]
    fn config_validation() {
        let mut cfg = small_config(1.0);
        cfg.dt = Some(-1.0);
        assert!(matches!(cfg.validate(), Err(SimError::Config(_))));
        let mut cfg = small_config(1.0);
        cfg.h = 0.0;
        assert!(matches!(cfg.validate(), Err(SimError::Kernel(_))));
        let mut cfg = small_config(1.0);
        cfg.blobs.clear();
        assert!(cfg.validate().is_err());
    }
}
