//! Velocity of the particle system.
//!
//! The direct backend sums the free-space kernel over all particles with
//! the logarithm and the `1/|𝒯x − 𝒯y|²` factor regularised as
//! `|𝒯x − 𝒯y|² + δ²`. Per-source data (`𝒯(y_j)` and `w_j sqrt|Y_j|`) is
//! precomputed once per evaluation, so the pair loop is a plain 2D
//! regularised Biot–Savart sum in the flattened coordinates.

use std::f64::consts::PI;

use rayon::prelude::*;
use thiserror::Error;

use crate::domain_solver::{self, DiskDomain, EllipticSystem, Grid, SolverError};
use crate::geometry::{Point2, Vec2};
use crate::kernel::{self, HelixParams};
use crate::fastmath;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FlowError {
    #[error("array length mismatch: expected {expected}, got {got}")]
    LengthMismatch { expected: usize, got: usize },
    #[error("regularisation length must be positive, got {0}")]
    InvalidDelta(f64),
    #[error("concentration scale must lie in (0, 1), got {0}")]
    InvalidEps(f64),
    #[error("particle {index} at ({x}, {y}) is outside the disk")]
    OutsideDomain { index: usize, x: f64, y: f64 },
    #[error("unknown blob index {0}")]
    UnknownBlob(usize),
    #[error("exterior field needs at least two blobs, system has {0}")]
    TooFewBlobs(usize),
    #[error(transparent)]
    Solver(#[from] SolverError),
}

/// Regularised vortex blobs.
#[derive(Debug, Clone, PartialEq)]
pub struct ParticleSystem {
    pub positions: Vec<Point2>,
    pub weights: Vec<f64>,
    pub blob_id: Vec<usize>,
    pub eps: f64,
    pub delta: f64,
    pub params: HelixParams,
    pub domain: DiskDomain,
}

impl ParticleSystem {
    pub fn new(
        positions: Vec<Point2>,
        weights: Vec<f64>,
        blob_id: Vec<usize>,
        eps: f64,
        delta: f64,
        params: HelixParams,
        domain: DiskDomain,
    ) -> Result<Self, FlowError> {
        if weights.len() != positions.len() {
            return Err(FlowError::LengthMismatch { expected: positions.len(), got: weights.len() });
        }
        if blob_id.len() != positions.len() {
            return Err(FlowError::LengthMismatch { expected: positions.len(), got: blob_id.len() });
        }
        if !(delta.is_finite() && delta > 0.0) {
            return Err(FlowError::InvalidDelta(delta));
        }
        if !(eps > 0.0 && eps < 1.0) {
            return Err(FlowError::InvalidEps(eps));
        }
        if let Some(index) = positions.iter().position(|x| !domain.contains(*x)) {
            let x = positions[index];
            return Err(FlowError::OutsideDomain { index, x: x.x, y: x.y });
        }
        Ok(ParticleSystem { positions, weights, blob_id, eps, delta, params, domain })
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    /// Number of blobs (one more than the largest blob index).
    pub fn blob_count(&self) -> usize {
        self.blob_id.iter().max().map_or(0, |m| m + 1)
    }

    /// Total circulation of blob `i`.
    pub fn circulation(&self, blob: usize) -> f64 {
        self.members(blob).map(|k| self.weights[k]).sum()
    }

    /// Indices of the particles of blob `i`.
    pub fn members(&self, blob: usize) -> impl Iterator<Item = usize> + '_ {
        self.blob_id.iter().enumerate().filter(move |(_, &b)| b == blob).map(|(k, _)| k)
    }

    pub fn with_positions(&self, positions: Vec<Point2>) -> ParticleSystem {
        ParticleSystem { positions, ..self.clone() }
    }
}

/// Default regularisation: the initial inter-particle spacing `2ε / sqrt(P/π)`.
pub fn default_delta(eps: f64, particles_per_blob: usize) -> f64 {
    2.0 * eps / (particles_per_blob.max(1) as f64 / PI).sqrt()
}

/// Source data laid out for the pair loop.
#[derive(Debug, Clone, Default)]
pub struct Sources {
    tx: Vec<f64>,
    ty: Vec<f64>,
    strength: Vec<f64>,
}

impl Sources {
    pub fn from_particles<'a>(
        particles: impl Iterator<Item = (Point2, f64)> + 'a,
        p: &HelixParams,
    ) -> Sources {
        let mut s = Sources::default();
        for (y, w) in particles {
            let t = kernel::diffeo(y, p);
            s.tx.push(t.x);
            s.ty.push(t.y);
            s.strength.push(w * kernel::lifted_norm(y, p).sqrt());
        }
        s
    }

    pub fn all(sys: &ParticleSystem) -> Sources {
        Sources::from_particles(sys.positions.iter().copied().zip(sys.weights.iter().copied()), &sys.params)
    }

    pub fn len(&self) -> usize {
        self.tx.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tx.is_empty()
    }
}

/// Regularised sums at one target: `Σ c_j ln(r_j² + δ²)` and `Σ c_j d_j/(r_j² + δ²)`.
#[inline]
fn pair_sums(src: &Sources, t: Point2, delta2: f64) -> (f64, f64, f64) {
    const LANES: usize = 8;
    let n = src.len();
    let mut log_acc = [0.0f64; LANES];
    let mut kx_acc = [0.0f64; LANES];
    let mut ky_acc = [0.0f64; LANES];
    let chunks = n / LANES;
    for c in 0..chunks {
        let base = c * LANES;
        let tx = &src.tx[base..base + LANES];
        let ty = &src.ty[base..base + LANES];
        let st = &src.strength[base..base + LANES];
        let mut r2 = [0.0f64; LANES];
        let mut dx = [0.0f64; LANES];
        let mut dy = [0.0f64; LANES];
        for l in 0..LANES {
            dx[l] = t.x - tx[l];
            dy[l] = t.y - ty[l];
            r2[l] = dx[l] * dx[l] + dy[l] * dy[l] + delta2;
        }
        let logs = fastmath::ln_lanes(r2);
        for l in 0..LANES {
            let inv = st[l] / r2[l];
            log_acc[l] += st[l] * logs[l];
            kx_acc[l] += inv * dx[l];
            ky_acc[l] += inv * dy[l];
        }
    }
    let mut log_sum: f64 = log_acc.iter().sum();
    let mut kx: f64 = kx_acc.iter().sum();
    let mut ky: f64 = ky_acc.iter().sum();
    for j in chunks * LANES..n {
        let dx = t.x - src.tx[j];
        let dy = t.y - src.ty[j];
        let r2 = dx * dx + dy * dy + delta2;
        log_sum += src.strength[j] * r2.ln();
        let inv = src.strength[j] / r2;
        kx += inv * dx;
        ky += inv * dy;
    }
    (log_sum, kx, ky)
}

/// Pair sums at every source location, each unordered pair visited once.
///
/// The log term is symmetric and the kernel term antisymmetric in the pair,
/// so the row for `i` accumulates into `i` and scatters into `j > i`. The
/// diagonal contributes `c_i ln δ²` to the log sum only.
fn self_pair_sums(src: &Sources, delta2: f64) -> Vec<(f64, f64, f64)> {
    const LANES: usize = 8;
    let n = src.len();
    let mut log_acc = vec![0.0f64; n];
    let mut kx_acc = vec![0.0f64; n];
    let mut ky_acc = vec![0.0f64; n];
    let ln_d2 = delta2.ln();
    for i in 0..n {
        let (xi, yi, ci) = (src.tx[i], src.ty[i], src.strength[i]);
        let mut li = [0.0f64; LANES];
        let mut kxi = [0.0f64; LANES];
        let mut kyi = [0.0f64; LANES];
        let start = i + 1;
        let chunks = (n - start) / LANES;
        for c in 0..chunks {
            let base = start + c * LANES;
            let tx = &src.tx[base..base + LANES];
            let ty = &src.ty[base..base + LANES];
            let st = &src.strength[base..base + LANES];
            let mut r2 = [0.0f64; LANES];
            let mut dx = [0.0f64; LANES];
            let mut dy = [0.0f64; LANES];
            for l in 0..LANES {
                dx[l] = xi - tx[l];
                dy[l] = yi - ty[l];
                r2[l] = dx[l].mul_add(dx[l], dy[l].mul_add(dy[l], delta2));
            }
            let logs = fastmath::ln_lanes(r2);
            let lj = &mut log_acc[base..base + LANES];
            let kxj = &mut kx_acc[base..base + LANES];
            let kyj = &mut ky_acc[base..base + LANES];
            for l in 0..LANES {
                let inv = 1.0 / r2[l];
                let gx = dx[l] * inv;
                let gy = dy[l] * inv;
                li[l] = st[l].mul_add(logs[l], li[l]);
                kxi[l] = st[l].mul_add(gx, kxi[l]);
                kyi[l] = st[l].mul_add(gy, kyi[l]);
                lj[l] = ci.mul_add(logs[l], lj[l]);
                kxj[l] = (-ci).mul_add(gx, kxj[l]);
                kyj[l] = (-ci).mul_add(gy, kyj[l]);
            }
        }
        let mut l_sum: f64 = li.iter().sum();
        let mut kx_sum: f64 = kxi.iter().sum();
        let mut ky_sum: f64 = kyi.iter().sum();
        for j in start + chunks * LANES..n {
            let dx = xi - src.tx[j];
            let dy = yi - src.ty[j];
            let r2 = dx * dx + dy * dy + delta2;
            let lg = fastmath::ln(r2);
            let gx = dx / r2;
            let gy = dy / r2;
            l_sum += src.strength[j] * lg;
            kx_sum += src.strength[j] * gx;
            ky_sum += src.strength[j] * gy;
            log_acc[j] += ci * lg;
            kx_acc[j] -= ci * gx;
            ky_acc[j] -= ci * gy;
        }
        log_acc[i] += l_sum + ci * ln_d2;
        kx_acc[i] += kx_sum;
        ky_acc[i] += ky_sum;
    }
    (0..n).map(|k| (log_acc[k], kx_acc[k], ky_acc[k])).collect()
}

/// Induced field at one point, split into its kernel parts.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct InducedField {
    /// Regularised local energy `ψ(x) = Σ w_j G_K(x, y_j)`.
    pub psi: f64,
    /// Singular part `v_K` (the `D𝒯` term).
    pub v_k: Vec2,
}

impl InducedField {
    /// `v_L = x⊥ ψ / (2|X|²)`.
    pub fn v_l(&self, x: Point2, p: &HelixParams) -> Vec2 {
        let bx2 = x.norm_sq() + p.h() * p.h();
        (self.psi / (2.0 * bx2)) * x.perp()
    }

    pub fn velocity(&self, x: Point2, p: &HelixParams) -> Vec2 {
        self.v_k + self.v_l(x, p)
    }
}

/// Evaluate the induced field of `src` at one target.
pub fn induced_at(src: &Sources, x: Point2, p: &HelixParams, delta: f64) -> InducedField {
    let t = kernel::diffeo(x, p);
    let (log_sum, kx, ky) = pair_sums(src, t, delta * delta);
    let pref = kernel::lifted_norm(x, p).sqrt() / (2.0 * PI * p.h());
    let psi = pref * 0.5 * log_sum;
    let v_k = (pref * kernel::diffeo_jacobian(x, p).mul_vec(Vec2::new(kx, ky))).perp();
    InducedField { psi, v_k }
}

/// Induced field at every evaluation point, in parallel over targets.
pub fn induced(src: &Sources, points: &[Point2], p: &HelixParams, delta: f64) -> Vec<InducedField> {
    points.par_iter().map(|&x| induced_at(src, x, p, delta)).collect()
}

/// Regularised direct Biot–Savart velocity with the free-space kernel.
pub fn velocity_direct(sys: &ParticleSystem, eval_points: &[Point2]) -> Vec<Vec2> {
    let src = Sources::all(sys);
    let p = sys.params;
    induced(&src, eval_points, &p, sys.delta)
        .iter()
        .zip(eval_points)
        .map(|(f, &x)| f.velocity(x, &p))
        .collect()
}

/// Induced field at the particles themselves.
///
/// Single-threaded pools use the symmetric pair sweep, which does half the
/// work; otherwise targets are split across threads. Both orders are fixed,
/// so results are reproducible for a given thread count.
pub fn induced_self(sys: &ParticleSystem) -> Vec<InducedField> {
    let src = Sources::all(sys);
    let p = sys.params;
    if rayon::current_num_threads() > 1 {
        return induced(&src, &sys.positions, &p, sys.delta);
    }
    let sums = self_pair_sums(&src, sys.delta * sys.delta);
    sys.positions
        .iter()
        .zip(sums)
        .map(|(&x, (log_sum, kx, ky))| {
            let pref = kernel::lifted_norm(x, &p).sqrt() / (2.0 * PI * p.h());
            let v_k = (pref * kernel::diffeo_jacobian(x, &p).mul_vec(Vec2::new(kx, ky))).perp();
            InducedField { psi: pref * 0.5 * log_sum, v_k }
        })
        .collect()
}

/// Direct velocity at every particle.
pub fn velocity_self(sys: &ParticleSystem) -> Vec<Vec2> {
    let p = sys.params;
    induced_self(sys).iter().zip(&sys.positions).map(|(f, &x)| f.velocity(x, &p)).collect()
}

/// Which velocity evaluation drives the dynamics.
#[derive(Debug, Clone)]
pub enum VelocityBackend {
    /// Free-space direct summation (drops the bounded regular part).
    Direct,
    /// Cloud-in-cell deposit, elliptic solve on the disk, interpolated `∇⊥Ψ`.
    Grid(Box<EllipticSystem>),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BackendKind {
    Direct,
    Grid,
}

impl VelocityBackend {
    pub fn grid(domain: &DiskDomain, p: &HelixParams, n: usize) -> Result<Self, FlowError> {
        let grid = Grid::covering(domain, n)?;
        Ok(VelocityBackend::Grid(Box::new(domain_solver::assemble_operator(&grid, p, domain))))
    }

    pub fn kind(&self) -> BackendKind {
        match self {
            VelocityBackend::Direct => BackendKind::Direct,
            VelocityBackend::Grid(_) => BackendKind::Grid,
        }
    }

    /// Unrescaled velocity at `points`.
    pub fn velocity(&self, sys: &ParticleSystem, points: &[Point2]) -> Result<Vec<Vec2>, FlowError> {
        match self {
            VelocityBackend::Direct => Ok(velocity_direct(sys, points)),
            VelocityBackend::Grid(system) => Ok(grid_velocity(system, sys, points)?),
        }
    }
}

/// Bounded-domain velocity from the grid solver.
pub fn grid_velocity(system: &EllipticSystem, sys: &ParticleSystem, points: &[Point2]) -> Result<Vec<Vec2>, SolverError> {
    let grid = system.grid();
    let omega = domain_solver::deposit(grid, &sys.positions, &sys.weights)?.masked(grid);
    let psi = system.solve_stream(&omega)?;
    domain_solver::curl_interp(grid, &psi, points)
}

/// `v = v_K + v_L + v_R` at a set of points.
#[derive(Debug, Clone, PartialEq)]
pub struct VelocitySplit {
    pub v_k: Vec<Vec2>,
    pub v_l: Vec<Vec2>,
    /// Bounded remainder; all zero when `remainder_available` is false.
    pub v_r: Vec<Vec2>,
    /// Only the grid backend carries the boundary contribution.
    pub remainder_available: bool,
}

/// Decompose the velocity at `eval_points` given the local energy there.
pub fn velocity_split(
    sys: &ParticleSystem,
    eval_points: &[Point2],
    psi_values: &[f64],
    backend: &VelocityBackend,
) -> Result<VelocitySplit, FlowError> {
    if psi_values.len() != eval_points.len() {
        return Err(FlowError::LengthMismatch { expected: eval_points.len(), got: psi_values.len() });
    }
    let p = sys.params;
    let src = Sources::all(sys);
    let fields = induced(&src, eval_points, &p, sys.delta);
    let v_k: Vec<Vec2> = fields.iter().map(|f| f.v_k).collect();
    let v_l: Vec<Vec2> = eval_points
        .iter()
        .zip(psi_values)
        .map(|(&x, &psi)| InducedField { psi, v_k: Vec2::ZERO }.v_l(x, &p))
        .collect();
    let (v_r, remainder_available) = match backend {
        VelocityBackend::Direct => (vec![Vec2::ZERO; eval_points.len()], false),
        VelocityBackend::Grid(system) => {
            let total = grid_velocity(system, sys, eval_points)?;
            let v_r = total.iter().zip(v_k.iter().zip(&v_l)).map(|(&t, (&a, &b))| t - a - b).collect();
            (v_r, true)
        }
    };
    Ok(VelocitySplit { v_k, v_l, v_r, remainder_available })
}

/// Velocity at `eval_points` induced by every blob except `blob`.
pub fn exterior_field(sys: &ParticleSystem, blob: usize, eval_points: &[Point2]) -> Result<Vec<Vec2>, FlowError> {
    let count = sys.blob_count();
    if blob >= count {
        return Err(FlowError::UnknownBlob(blob));
    }
    if count < 2 {
        return Ok(vec![Vec2::ZERO; eval_points.len()]);
    }
    Ok(field_of(sys, eval_points, |b| b != blob))
}

/// Velocity induced by the particles of `blob` alone.
pub fn own_field(sys: &ParticleSystem, blob: usize, eval_points: &[Point2]) -> Result<Vec<Vec2>, FlowError> {
    if blob >= sys.blob_count() {
        return Err(FlowError::UnknownBlob(blob));
    }
    Ok(field_of(sys, eval_points, |b| b == blob))
}

fn field_of(sys: &ParticleSystem, eval_points: &[Point2], keep: impl Fn(usize) -> bool) -> Vec<Vec2> {
    let p = sys.params;
    let src = Sources::from_particles(
        (0..sys.len()).filter(|&k| keep(sys.blob_id[k])).map(|k| (sys.positions[k], sys.weights[k])),
        &p,
    );
    induced(&src, eval_points, &p, sys.delta)
        .iter()
        .zip(eval_points)
        .map(|(f, &x)| f.velocity(x, &p))
        .collect()
}

/// Time rescaling factor `1/|ln ε|`.
pub fn rescale_factor(eps: f64) -> Result<f64, FlowError> {
    if !(eps > 0.0 && eps < 1.0) {
        return Err(FlowError::InvalidEps(eps));
    }
    Ok(1.0 / eps.ln().abs())
}

/// Multiply every vector by `1/|ln ε|`.
pub fn rescaled_velocity(v: &[Vec2], eps: f64) -> Result<Vec<Vec2>, FlowError> {
    let s = rescale_factor(eps)?;
    Ok(v.iter().map(|&u| s * u).collect())
}
