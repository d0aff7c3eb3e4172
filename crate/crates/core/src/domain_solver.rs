//! Finite-difference backend for `div(K∇Ψ) = ω` on a disk with `Ψ = 0` on
//! the boundary.
//!
//! The operator is assembled from a discrete energy: each face between two
//! grid neighbours contributes `K₁₁` or `K₂₂` (evaluated at the face
//! midpoint) times the squared difference, and each cell contributes the
//! mixed `K₁₂` term through cell-averaged differences. The resulting 9-point
//! matrix is symmetric and reduces to the 5-point Laplacian when `K = I`.
//! Nodes on or outside the circle are Dirichlet nodes.

use std::f64::consts::PI;
use std::io::{self, Write};

use rayon::prelude::*;
use thiserror::Error;

use crate::geometry::{Point2, Vec2};
use crate::kernel::{self, HelixParams};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SolverError {
    #[error("disk radius must be finite and positive, got {0}")]
    InvalidRadius(f64),
    #[error("grid needs at least {min} nodes per side, got {n}")]
    GridTooSmall { n: usize, min: usize },
    #[error("point ({0}, {1}) lies outside the grid")]
    OutsideGrid(f64, f64),
    #[error("field has {got} values but the grid has {expected} nodes")]
    SizeMismatch { expected: usize, got: usize },
    #[error("conjugate gradient did not converge in {iterations} iterations (relative residual {last_residual:e})")]
    NotConverged {
        iterations: usize,
        last_residual: f64,
        residual_history: Vec<f64>,
    },
}

/// The disk `B(0, R_U)` used as the cross-section domain.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DiskDomain {
    radius: f64,
}

impl DiskDomain {
    pub fn new(radius: f64) -> Result<Self, SolverError> {
        if radius.is_finite() && radius > 0.0 {
            Ok(DiskDomain { radius })
        } else {
            Err(SolverError::InvalidRadius(radius))
        }
    }

    pub fn radius(&self) -> f64 {
        self.radius
    }

    pub fn contains(&self, x: Point2) -> bool {
        x.norm() < self.radius
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NodeKind {
    /// Strictly inside the disk; carries an unknown.
    Interior,
    /// On or outside the circle with at least one interior neighbour.
    Boundary,
    Exterior,
}

/// Uniform node-centred grid on the square `[-R_U, R_U]²`.
#[derive(Debug, Clone)]
pub struct Grid {
    n: usize,
    spacing: f64,
    origin: Point2,
    mask: Vec<NodeKind>,
}

pub const MIN_GRID_NODES: usize = 9;

// Neighbour offsets in the order used by the 9-point stencil rows.
const OFFSETS: [(isize, isize); 9] = [
    (-1, -1),
    (0, -1),
    (1, -1),
    (-1, 0),
    (0, 0),
    (1, 0),
    (-1, 1),
    (0, 1),
    (1, 1),
];
const CENTER: usize = 4;

fn slot(di: isize, dj: isize) -> usize {
    ((dj + 1) * 3 + (di + 1)) as usize
}

impl Grid {
    pub fn covering(domain: &DiskDomain, n: usize) -> Result<Self, SolverError> {
        if n < MIN_GRID_NODES {
            return Err(SolverError::GridTooSmall { n, min: MIN_GRID_NODES });
        }
        let r = domain.radius();
        let spacing = 2.0 * r / (n - 1) as f64;
        let origin = Vec2::new(-r, -r);
        let mut grid = Grid { n, spacing, origin, mask: vec![NodeKind::Exterior; n * n] };
        for j in 0..n {
            for i in 0..n {
                if domain.contains(grid.node(i, j)) {
                    grid.mask[j * n + i] = NodeKind::Interior;
                }
            }
        }
        for j in 0..n {
            for i in 0..n {
                if grid.mask[j * n + i] == NodeKind::Interior {
                    continue;
                }
                let touches_interior = OFFSETS.iter().any(|&(di, dj)| {
                    let (ii, jj) = (i as isize + di, j as isize + dj);
                    ii >= 0
                        && jj >= 0
                        && (ii as usize) < n
                        && (jj as usize) < n
                        && grid.mask[jj as usize * n + ii as usize] == NodeKind::Interior
                });
                if touches_interior {
                    grid.mask[j * n + i] = NodeKind::Boundary;
                }
            }
        }
        Ok(grid)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn spacing(&self) -> f64 {
        self.spacing
    }

    pub fn origin(&self) -> Point2 {
        self.origin
    }

    pub fn len(&self) -> usize {
        self.n * self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn mask(&self) -> &[NodeKind] {
        &self.mask
    }

    #[inline]
    pub fn index(&self, i: usize, j: usize) -> usize {
        j * self.n + i
    }

    #[inline]
    pub fn node(&self, i: usize, j: usize) -> Point2 {
        Vec2::new(self.origin.x + i as f64 * self.spacing, self.origin.y + j as f64 * self.spacing)
    }

    pub fn node_at(&self, idx: usize) -> Point2 {
        self.node(idx % self.n, idx / self.n)
    }

    pub fn is_interior(&self, idx: usize) -> bool {
        self.mask[idx] == NodeKind::Interior
    }

    /// Lower-left cell index and fractional offsets of `x`.
    pub fn locate(&self, x: Point2) -> Result<(usize, usize, f64, f64), SolverError> {
        let fx = (x.x - self.origin.x) / self.spacing;
        let fy = (x.y - self.origin.y) / self.spacing;
        let last = (self.n - 1) as f64;
        if !(fx >= 0.0 && fy >= 0.0 && fx <= last && fy <= last) {
            return Err(SolverError::OutsideGrid(x.x, x.y));
        }
        let i = (fx.floor() as usize).min(self.n - 2);
        let j = (fy.floor() as usize).min(self.n - 2);
        Ok((i, j, fx - i as f64, fy - j as f64))
    }

    fn neighbour(&self, idx: usize, k: usize) -> usize {
        let (di, dj) = OFFSETS[k];
        (idx as isize + dj * self.n as isize + di) as usize
    }
}

/// Per-node scalar samples on a [`Grid`].
#[derive(Debug, Clone, PartialEq)]
pub struct ScalarField {
    pub values: Vec<f64>,
}

impl ScalarField {
    pub fn zeros(grid: &Grid) -> Self {
        ScalarField { values: vec![0.0; grid.len()] }
    }

    pub fn from_fn(grid: &Grid, f: impl Fn(Point2) -> f64) -> Self {
        ScalarField { values: (0..grid.len()).map(|k| f(grid.node_at(k))).collect() }
    }

    /// Zero every non-interior node.
    pub fn masked(mut self, grid: &Grid) -> Self {
        for (v, kind) in self.values.iter_mut().zip(grid.mask()) {
            if *kind != NodeKind::Interior {
                *v = 0.0;
            }
        }
        self
    }

    fn check(&self, grid: &Grid) -> Result<(), SolverError> {
        if self.values.len() != grid.len() {
            Err(SolverError::SizeMismatch { expected: grid.len(), got: self.values.len() })
        } else {
            Ok(())
        }
    }

    /// Bilinear interpolation at `x`.
    pub fn interpolate(&self, grid: &Grid, x: Point2) -> Result<f64, SolverError> {
        let (i, j, tx, ty) = grid.locate(x)?;
        let v = |ii, jj| self.values[grid.index(ii, jj)];
        Ok((1.0 - tx) * (1.0 - ty) * v(i, j)
            + tx * (1.0 - ty) * v(i + 1, j)
            + (1.0 - tx) * ty * v(i, j + 1)
            + tx * ty * v(i + 1, j + 1))
    }
}

/// Per-node 2-vectors on a [`Grid`].
#[derive(Debug, Clone, PartialEq)]
pub struct VectorField {
    pub values: Vec<Vec2>,
}

impl VectorField {
    pub fn interpolate(&self, grid: &Grid, x: Point2) -> Result<Vec2, SolverError> {
        let (i, j, tx, ty) = grid.locate(x)?;
        let v = |ii, jj| self.values[grid.index(ii, jj)];
        Ok((1.0 - tx) * (1.0 - ty) * v(i, j)
            + tx * (1.0 - ty) * v(i + 1, j)
            + (1.0 - tx) * ty * v(i, j + 1)
            + tx * ty * v(i + 1, j + 1))
    }
}

/// Cloud-in-cell deposition of point circulations onto a vorticity field.
///
/// `spacing² · Σ nodes` equals the total circulation.
pub fn deposit(grid: &Grid, positions: &[Point2], weights: &[f64]) -> Result<ScalarField, SolverError> {
    if positions.len() != weights.len() {
        return Err(SolverError::SizeMismatch { expected: positions.len(), got: weights.len() });
    }
    let inv_area = 1.0 / (grid.spacing * grid.spacing);
    let mut field = ScalarField::zeros(grid);
    for (&x, &w) in positions.iter().zip(weights) {
        let (i, j, tx, ty) = grid.locate(x)?;
        let q = w * inv_area;
        field.values[grid.index(i, j)] += q * (1.0 - tx) * (1.0 - ty);
        field.values[grid.index(i + 1, j)] += q * tx * (1.0 - ty);
        field.values[grid.index(i, j + 1)] += q * (1.0 - tx) * ty;
        field.values[grid.index(i + 1, j + 1)] += q * tx * ty;
    }
    Ok(field)
}

/// Convergence controls for the conjugate-gradient solve.
#[derive(Debug, Clone, Copy)]
pub struct SolverSettings {
    pub rel_tol: f64,
    /// Iteration cap as a multiple of the grid side `n`.
    pub max_iter_per_node: usize,
}

impl Default for SolverSettings {
    fn default() -> Self {
        SolverSettings { rel_tol: 1e-10, max_iter_per_node: 50 }
    }
}

/// Assembled discretisation of `−div(K∇·)`, scaled by `spacing²`.
#[derive(Debug, Clone)]
pub struct EllipticSystem {
    grid: Grid,
    params: HelixParams,
    domain: DiskDomain,
    coef: Vec<[f64; 9]>,
    interior: Vec<usize>,
    settings: SolverSettings,
}

/// Assemble the symmetric positive-definite operator on the grid.
pub fn assemble_operator(grid: &Grid, p: &HelixParams, domain: &DiskDomain) -> EllipticSystem {
    assemble_with(grid, domain, *p, |x| {
        let k = kernel::k_matrix(x, p);
        (k.a11, k.a12, k.a22)
    })
}

/// Assembly with an arbitrary symmetric coefficient field `x ↦ (k11, k12, k22)`.
pub fn assemble_with(
    grid: &Grid,
    domain: &DiskDomain,
    params: HelixParams,
    coeff: impl Fn(Point2) -> (f64, f64, f64) + Sync,
) -> EllipticSystem {
    let n = grid.n;
    let s = grid.spacing;
    let coef: Vec<[f64; 9]> = (0..grid.len())
        .into_par_iter()
        .map(|idx| {
            let mut row = [0.0; 9];
            let (i, j) = (idx % n, idx / n);
            if i == 0 || j == 0 || i == n - 1 || j == n - 1 {
                return row;
            }
            let x = grid.node(i, j);
            // x-faces
            for di in [-1isize, 1] {
                let (k11, _, _) = coeff(x + Vec2::new(0.5 * di as f64 * s, 0.0));
                row[CENTER] += k11;
                row[slot(di, 0)] -= k11;
            }
            // y-faces
            for dj in [-1isize, 1] {
                let (_, _, k22) = coeff(x + Vec2::new(0.0, 0.5 * dj as f64 * s));
                row[CENTER] += k22;
                row[slot(0, dj)] -= k22;
            }
            // mixed term from the four cells sharing this node
            for (ci, cj) in [(-1isize, -1isize), (0, -1), (-1, 0), (0, 0)] {
                let center = x + Vec2::new((ci as f64 + 0.5) * s, (cj as f64 + 0.5) * s);
                let (_, k12, _) = coeff(center);
                // cell corners relative to this node, with their Δx/Δy signs
                let corners = [(ci, cj), (ci + 1, cj), (ci, cj + 1), (ci + 1, cj + 1)];
                let ax = [-1.0, 1.0, -1.0, 1.0];
                let ay = [-1.0, -1.0, 1.0, 1.0];
                let me = corners.iter().position(|&(a, b)| a == 0 && b == 0).unwrap();
                for (c, &(a, b)) in corners.iter().enumerate() {
                    let v = 0.25 * k12 * (ax[me] * ay[c] + ay[me] * ax[c]);
                    row[slot(a, b)] += v;
                }
            }
            row
        })
        .collect();
    let interior = (0..grid.len()).filter(|&k| grid.is_interior(k)).collect();
    EllipticSystem {
        grid: grid.clone(),
        params,
        domain: *domain,
        coef,
        interior,
        settings: SolverSettings::default(),
    }
}

const CHUNK: usize = 4096;

fn dot(a: &[f64], b: &[f64]) -> f64 {
    // fixed chunking keeps the reduction order independent of the thread count
    let partial: Vec<f64> = a
        .par_chunks(CHUNK)
        .zip(b.par_chunks(CHUNK))
        .map(|(x, y)| x.iter().zip(y).map(|(p, q)| p * q).sum())
        .collect();
    partial.iter().sum()
}

impl EllipticSystem {
    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn params(&self) -> &HelixParams {
        &self.params
    }

    pub fn domain(&self) -> &DiskDomain {
        &self.domain
    }

    pub fn settings(&self) -> SolverSettings {
        self.settings
    }

    pub fn with_settings(mut self, settings: SolverSettings) -> Self {
        self.settings = settings;
        self
    }

    /// Stencil row at node `idx` (neighbour order: row-major 3×3 block).
    pub fn row(&self, idx: usize) -> [f64; 9] {
        self.coef[idx]
    }

    /// Largest `|A_ij − A_ji|` over interior pairs, relative to the largest
    /// stencil entry.
    pub fn symmetry_defect(&self) -> f64 {
        let grid = &self.grid;
        let mut worst: f64 = 0.0;
        let mut scale: f64 = 0.0;
        for idx in (0..grid.len()).filter(|&i| grid.is_interior(i)) {
            for k in 0..9 {
                let nb = grid.neighbour(idx, k);
                scale = scale.max(self.coef[idx][k].abs());
                if grid.is_interior(nb) {
                    // the opposite offset sits at the mirrored slot of the 3×3 block
                    worst = worst.max((self.coef[idx][k] - self.coef[nb][8 - k]).abs());
                }
            }
        }
        if scale > 0.0 { worst / scale } else { 0.0 }
    }

    /// `(A u)` on interior rows, zero elsewhere. `u` is used as given on all nodes.
    pub fn apply(&self, u: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; u.len()];
        self.apply_into(u, &mut out);
        out
    }

    fn apply_into(&self, u: &[f64], out: &mut [f64]) {
        let grid = &self.grid;
        out.par_iter_mut().enumerate().for_each(|(idx, o)| {
            *o = if grid.is_interior(idx) {
                let row = &self.coef[idx];
                (0..9).map(|k| row[k] * u[grid.neighbour(idx, k)]).sum()
            } else {
                0.0
            };
        });
    }

    /// Discrete Dirichlet energy `uᵀ A u` of a field vanishing off the interior,
    /// an approximation of `∫ K∇u·∇u`.
    pub fn energy(&self, u: &ScalarField) -> f64 {
        let masked = u.clone().masked(&self.grid);
        let au = self.apply(&masked.values);
        dot(&masked.values, &au)
    }

    /// Solve `div(K∇Ψ) = ω` with `Ψ = 0` off the interior.
    pub fn solve_stream(&self, omega: &ScalarField) -> Result<ScalarField, SolverError> {
        omega.check(&self.grid)?;
        let s2 = self.grid.spacing * self.grid.spacing;
        let rhs: Vec<f64> = omega
            .values
            .iter()
            .enumerate()
            .map(|(k, w)| if self.grid.is_interior(k) { -s2 * w } else { 0.0 })
            .collect();
        let u = self.cg(&rhs)?;
        Ok(ScalarField { values: u })
    }

    /// Solve `div(K∇u) = source` with `u = boundary` on every non-interior node.
    pub fn solve_dirichlet(
        &self,
        source: &ScalarField,
        boundary: &ScalarField,
    ) -> Result<ScalarField, SolverError> {
        source.check(&self.grid)?;
        boundary.check(&self.grid)?;
        let s2 = self.grid.spacing * self.grid.spacing;
        let lifted: Vec<f64> = boundary
            .values
            .iter()
            .enumerate()
            .map(|(k, &g)| if self.grid.is_interior(k) { 0.0 } else { g })
            .collect();
        let a_lift = self.apply(&lifted);
        let rhs: Vec<f64> = (0..self.grid.len())
            .map(|k| if self.grid.is_interior(k) { -s2 * source.values[k] - a_lift[k] } else { 0.0 })
            .collect();
        let mut u = self.cg(&rhs)?;
        for (k, v) in u.iter_mut().enumerate() {
            if !self.grid.is_interior(k) {
                *v = lifted[k];
            }
        }
        Ok(ScalarField { values: u })
    }

    /// Jacobi-preconditioned conjugate gradient on the interior unknowns.
    fn cg(&self, rhs: &[f64]) -> Result<Vec<f64>, SolverError> {
        let len = rhs.len();
        let mut x = vec![0.0; len];
        let b_norm = dot(rhs, rhs).sqrt();
        if b_norm == 0.0 {
            return Ok(x);
        }
        let inv_diag: Vec<f64> = (0..len)
            .map(|k| if self.grid.is_interior(k) { 1.0 / self.coef[k][CENTER] } else { 0.0 })
            .collect();
        let mut r = rhs.to_vec();
        let mut z: Vec<f64> = r.iter().zip(&inv_diag).map(|(a, b)| a * b).collect();
        let mut d = z.clone();
        let mut rz = dot(&r, &z);
        let mut ad = vec![0.0; len];
        let max_iter = self.settings.max_iter_per_node * self.grid.n;
        let mut history = Vec::new();
        for _ in 0..max_iter {
            self.apply_into(&d, &mut ad);
            let alpha = rz / dot(&d, &ad);
            for &k in &self.interior {
                x[k] += alpha * d[k];
                r[k] -= alpha * ad[k];
            }
            let rel = dot(&r, &r).sqrt() / b_norm;
            history.push(rel);
            if rel <= self.settings.rel_tol {
                return Ok(x);
            }
            for &k in &self.interior {
                z[k] = r[k] * inv_diag[k];
            }
            let rz_new = dot(&r, &z);
            let beta = rz_new / rz;
            rz = rz_new;
            for &k in &self.interior {
                d[k] = z[k] + beta * d[k];
            }
        }
        Err(SolverError::NotConverged {
            iterations: max_iter,
            last_residual: *history.last().unwrap_or(&f64::NAN),
            residual_history: history,
        })
    }

    /// Regular part `x ↦ S_{K,U}(x, y)` of the bounded-domain Green's function.
    ///
    /// Solves `ℒS = −(sqrt(det D𝒯(y))/(2π f(y))) ln|𝒯x − 𝒯y| div(K∇a)` with
    /// `a = sqrt(det D𝒯)/f`, and `S = −G_K(·, y)` on the Dirichlet nodes.
    pub fn regular_part_probe(&self, y: Point2) -> Result<ScalarField, SolverError> {
        let p = self.params;
        let grid = &self.grid;
        if !self.domain.contains(y) {
            return Err(SolverError::OutsideGrid(y.x, y.y));
        }
        let amplitude = |x: Point2| kernel::diffeo_jacobian(x, &p).det().sqrt() / kernel::radial_factor(x, &p);
        let prefactor = -amplitude(y) / (2.0 * PI);
        let ty = kernel::diffeo(y, &p);
        let s = grid.spacing;
        let source = ScalarField {
            values: (0..grid.len())
                .into_par_iter()
                .map(|k| {
                    if !grid.is_interior(k) {
                        return 0.0;
                    }
                    let x = grid.node_at(k);
                    let log_dist = if (x - y).norm() < 0.5 * s {
                        cell_average_log(x, s, |z| (kernel::diffeo(z, &p) - ty).norm())
                    } else {
                        (kernel::diffeo(x, &p) - ty).norm().ln()
                    };
                    prefactor * log_dist * div_k_grad(x, &p, &amplitude)
                })
                .collect(),
        };
        let boundary = ScalarField {
            values: (0..grid.len())
                .map(|k| {
                    if grid.is_interior(k) {
                        0.0
                    } else {
                        let x = grid.node_at(k);
                        kernel::green_free(x, y, &p).map(|g| -g).unwrap_or(0.0)
                    }
                })
                .collect(),
        };
        self.solve_dirichlet(&source, &boundary)
    }
}

/// `div(K∇a)(x)` by nested central differences.
pub fn div_k_grad(x: Point2, p: &HelixParams, a: &dyn Fn(Point2) -> f64) -> f64 {
    let tau = 1e-3;
    let ex = Vec2::new(tau, 0.0);
    let ey = Vec2::new(0.0, tau);
    let flux = |z: Point2| {
        let g = Vec2::new((a(z + ex) - a(z - ex)) / (2.0 * tau), (a(z + ey) - a(z - ey)) / (2.0 * tau));
        kernel::k_matrix(z, p).mul_vec(g)
    };
    (flux(x + ex).x - flux(x - ex).x) / (2.0 * tau) + (flux(x + ey).y - flux(x - ey).y) / (2.0 * tau)
}

/// Mean of `ln dist(z)` over the grid cell of side `s` centred at `x`.
fn cell_average_log(x: Point2, s: f64, dist: impl Fn(Point2) -> f64) -> f64 {
    const SUB: usize = 16;
    let h = s / SUB as f64;
    let mut acc = 0.0;
    for a in 0..SUB {
        for b in 0..SUB {
            let z = x + Vec2::new((a as f64 + 0.5) * h - 0.5 * s, (b as f64 + 0.5) * h - 0.5 * s);
            acc += dist(z).ln();
        }
    }
    acc / (SUB * SUB) as f64
}

/// Nodal `∇⊥Ψ` by central differences (one-sided on the outer ring of nodes).
pub fn curl_field(grid: &Grid, psi: &ScalarField) -> VectorField {
    let n = grid.n;
    let s = grid.spacing;
    let v = |i: usize, j: usize| psi.values[grid.index(i, j)];
    let values = (0..grid.len())
        .map(|idx| {
            let (i, j) = (idx % n, idx / n);
            let dx = if i == 0 {
                (v(1, j) - v(0, j)) / s
            } else if i == n - 1 {
                (v(n - 1, j) - v(n - 2, j)) / s
            } else {
                (v(i + 1, j) - v(i - 1, j)) / (2.0 * s)
            };
            let dy = if j == 0 {
                (v(i, 1) - v(i, 0)) / s
            } else if j == n - 1 {
                (v(i, n - 1) - v(i, n - 2)) / s
            } else {
                (v(i, j + 1) - v(i, j - 1)) / (2.0 * s)
            };
            Vec2::new(-dy, dx)
        })
        .collect();
    VectorField { values }
}

/// `v = ∇⊥Ψ` interpolated bilinearly at `positions`.
pub fn curl_interp(grid: &Grid, psi: &ScalarField, positions: &[Point2]) -> Result<Vec<Vec2>, SolverError> {
    psi.check(grid)?;
    let field = curl_field(grid, psi);
    positions.iter().map(|&x| field.interpolate(grid, x)).collect()
}

/// Debug export: one `index,x1,x2,value` row per node.
pub fn write_field_csv<W: Write>(grid: &Grid, field: &ScalarField, mut out: W) -> io::Result<()> {
    writeln!(out, "index,x1,x2,value")?;
    for (k, v) in field.values.iter().enumerate() {
        let x = grid.node_at(k);
        writeln!(out, "{},{:?},{:?},{:?}", k, x.x, x.y, v)?;
    }
    Ok(())
}

/// Manufactured solution `Ψ*(x) = (R² − |x|²)²`, which vanishes to second
/// order on the circle.
pub fn manufactured_psi(x: Point2, radius: f64) -> f64 {
    let q = radius * radius - x.norm_sq();
    q * q
}

/// `div(K∇Ψ*)` in closed form. `K x = (h²/|X|²) x`, so the flux is radial.
pub fn manufactured_omega(x: Point2, radius: f64, p: &HelixParams) -> f64 {
    let h2 = p.h() * p.h();
    let q = x.norm_sq();
    let r2 = radius * radius;
    -8.0 * h2 * (r2 - q) / (q + h2) + 8.0 * h2 * q * (r2 + h2) / ((q + h2) * (q + h2))
}

/// Analytic `∇⊥Ψ*`.
pub fn manufactured_velocity(x: Point2, radius: f64) -> Vec2 {
    let grad = (-4.0 * (radius * radius - x.norm_sq())) * x;
    grad.perp()
}

/// Result of one manufactured-solution solve.
#[derive(Debug, Clone, Copy)]
pub struct ManufacturedError {
    pub n: usize,
    pub spacing: f64,
    pub l2_error: f64,
}

/// Solve the manufactured problem on an `n`-node grid and return the
/// discrete L² error over interior nodes.
pub fn manufactured_solve(n: usize, domain: &DiskDomain, p: &HelixParams) -> Result<ManufacturedError, SolverError> {
    let grid = Grid::covering(domain, n)?;
    let system = assemble_operator(&grid, p, domain);
    let r = domain.radius();
    let omega = ScalarField::from_fn(&grid, |x| manufactured_omega(x, r, p)).masked(&grid);
    let psi = system.solve_stream(&omega)?;
    let s2 = grid.spacing * grid.spacing;
    let err2: f64 = (0..grid.len())
        .filter(|&k| grid.is_interior(k))
        .map(|k| {
            let e = psi.values[k] - manufactured_psi(grid.node_at(k), r);
            e * e * s2
        })
        .sum();
    Ok(ManufacturedError { n, spacing: grid.spacing, l2_error: err2.sqrt() })
}

/// Observed orders `log(e_k/e_{k+1}) / log(s_k/s_{k+1})` between successive levels.
pub fn convergence_orders(levels: &[ManufacturedError]) -> Vec<f64> {
    levels
        .windows(2)
        .map(|w| (w[0].l2_error / w[1].l2_error).ln() / (w[0].spacing / w[1].spacing).ln())
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn setup(n: usize, h: f64) -> (Grid, EllipticSystem, HelixParams, DiskDomain) {
        let dom = DiskDomain::new(1.0).unwrap();
        let p = HelixParams::new(h).unwrap();
        let grid = Grid::covering(&dom, n).unwrap();
        let sys = assemble_operator(&grid, &p, &dom);
        (grid, sys, p, dom)
    }

    fn random_interior(grid: &Grid, rng: &mut ChaCha8Rng) -> Vec<f64> {
        (0..grid.len()).map(|k| if grid.is_interior(k) { rng.gen_range(-1.0..1.0) } else { 0.0 }).collect()
    }

    #[test]
    fn grid_rejects_tiny_sizes() {
        let dom = DiskDomain::new(1.0).unwrap();
        assert!(matches!(Grid::covering(&dom, 4), Err(SolverError::GridTooSmall { .. })));
        assert!(DiskDomain::new(0.0).is_err());
    }

    #[test]
    fn mask_follows_disk() {
        let dom = DiskDomain::new(1.0).unwrap();
        let grid = Grid::covering(&dom, 21).unwrap();
        for k in 0..grid.len() {
            let x = grid.node_at(k);
            assert_eq!(grid.is_interior(k), x.norm() < 1.0);
        }
        assert!(grid.mask().contains(&NodeKind::Boundary));
    }

    #[test]
    fn deposit_on_node_and_cell_center() {
        let dom = DiskDomain::new(1.0).unwrap();
        let grid = Grid::covering(&dom, 11).unwrap();
        let s = grid.spacing();
        let node = grid.node(5, 5);
        let f = deposit(&grid, &[node], &[1.0]).unwrap();
        assert!((f.values[grid.index(5, 5)] - 1.0 / (s * s)).abs() < 1e-12);
        assert!((f.values.iter().sum::<f64>() - 1.0 / (s * s)).abs() < 1e-9);
        let centre = node + Vec2::new(0.5 * s, 0.5 * s);
        let f = deposit(&grid, &[centre], &[1.0]).unwrap();
        for (i, j) in [(5, 5), (6, 5), (5, 6), (6, 6)] {
            assert!((f.values[grid.index(i, j)] - 0.25 / (s * s)).abs() < 1e-10);
        }
        assert!(deposit(&grid, &[Vec2::new(2.0, 0.0)], &[1.0]).is_err());
    }

    #[test]
    fn deposit_preserves_circulation() {
        let dom = DiskDomain::new(1.0).unwrap();
        let grid = Grid::covering(&dom, 33).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let pts: Vec<Point2> = (0..1000)
            .map(|_| {
                let r = 0.9 * rng.gen::<f64>().sqrt();
                Vec2::new(r, 0.0).rotated(rng.gen_range(0.0..6.3))
            })
            .collect();
        let w: Vec<f64> = (0..1000).map(|_| rng.gen_range(-1.0..2.0)).collect();
        let f = deposit(&grid, &pts, &w).unwrap();
        let total: f64 = w.iter().sum();
        let s2 = grid.spacing() * grid.spacing();
        assert!((s2 * f.values.iter().sum::<f64>() - total).abs() <= 1e-12 * total.abs().max(1.0));
    }

    #[test]
    fn isotropic_limit_is_five_point() {
        let dom = DiskDomain::new(1.0).unwrap();
        let grid = Grid::covering(&dom, 17).unwrap();
        let p = HelixParams::new(1.0).unwrap();
        let sys = assemble_with(&grid, &dom, p, |_| (1.0, 0.0, 1.0));
        let row = sys.row(grid.index(8, 8));
        assert_eq!(row, [0.0, -1.0, 0.0, -1.0, 4.0, -1.0, 0.0, -1.0, 0.0]);
        // very large pitch: K → I
        let big = HelixParams::new(1e8).unwrap();
        let sys = assemble_operator(&grid, &big, &dom);
        let row = sys.row(grid.index(11, 5));
        let expected = [0.0, -1.0, 0.0, -1.0, 4.0, -1.0, 0.0, -1.0, 0.0];
        for k in 0..9 {
            assert!((row[k] - expected[k]).abs() < 1e-12);
        }
    }

    #[test]
    fn operator_symmetric_and_positive() {
        let (grid, sys, _, _) = setup(33, 0.6);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..10 {
            let u = random_interior(&grid, &mut rng);
            let v = random_interior(&grid, &mut rng);
            let lhs = dot(&sys.apply(&u), &v);
            let rhs = dot(&u, &sys.apply(&v));
            assert!((lhs - rhs).abs() <= 1e-12 * lhs.abs().max(1.0));
        }
        assert!(sys.symmetry_defect() < 1e-14);
        for _ in 0..100 {
            let u = random_interior(&grid, &mut rng);
            assert!(dot(&sys.apply(&u), &u) > 0.0);
        }
    }

    #[test]
    fn zero_source_gives_zero_stream() {
        let (grid, sys, _, _) = setup(17, 1.0);
        let psi = sys.solve_stream(&ScalarField::zeros(&grid)).unwrap();
        assert!(psi.values.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn manufactured_omega_matches_finite_differences() {
        let p = HelixParams::new(0.8).unwrap();
        let r = 1.3;
        for x in [Vec2::new(0.2, 0.1), Vec2::new(-0.7, 0.5), Vec2::new(0.0, -1.0)] {
            let fd = div_k_grad(x, &p, &|z| manufactured_psi(z, r));
            let an = manufactured_omega(x, r, &p);
            assert!((fd - an).abs() < 1e-5 * an.abs().max(1.0), "{fd} vs {an}");
        }
    }

    #[test]
    fn manufactured_solution_converges() {
        let dom = DiskDomain::new(1.0).unwrap();
        let p = HelixParams::new(1.0).unwrap();
        let levels: Vec<_> = [33, 65, 129].iter().map(|&n| manufactured_solve(n, &dom, &p).unwrap()).collect();
        let orders = convergence_orders(&levels);
        assert!(levels[2].l2_error < levels[0].l2_error);
        for o in orders {
            assert!(o > 1.7, "{levels:?}");
        }
    }

    #[test]
    fn solve_is_linear() {
        let (grid, sys, _, _) = setup(33, 1.0);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let w1 = ScalarField { values: random_interior(&grid, &mut rng) };
        let w2 = ScalarField { values: random_interior(&grid, &mut rng) };
        let (a, b) = (0.7, -1.9);
        let combo = ScalarField {
            values: w1.values.iter().zip(&w2.values).map(|(x, y)| a * x + b * y).collect(),
        };
        let p1 = sys.solve_stream(&w1).unwrap();
        let p2 = sys.solve_stream(&w2).unwrap();
        let pc = sys.solve_stream(&combo).unwrap();
        let scale = pc.values.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        for k in 0..grid.len() {
            let lin = a * p1.values[k] + b * p2.values[k];
            assert!((pc.values[k] - lin).abs() < 1e-8 * scale);
        }
    }

    #[test]
    fn mirror_symmetry() {
        let (grid, sys, _, _) = setup(41, 1.0);
        let omega = ScalarField::from_fn(&grid, |x| {
            (-((x - Vec2::new(0.3, 0.2)).norm_sq()) / 0.02).exp() + (-((x - Vec2::new(0.3, -0.2)).norm_sq()) / 0.02).exp()
        })
        .masked(&grid);
        let psi = sys.solve_stream(&omega).unwrap();
        let n = grid.n();
        let scale = psi.values.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        for j in 0..n {
            for i in 0..n {
                let a = psi.values[grid.index(i, j)];
                let b = psi.values[grid.index(i, n - 1 - j)];
                assert!((a - b).abs() < 1e-8 * scale);
            }
        }
    }

    #[test]
    fn curl_of_linear_field_is_constant() {
        let dom = DiskDomain::new(1.0).unwrap();
        let grid = Grid::covering(&dom, 17).unwrap();
        let psi = ScalarField::from_fn(&grid, |x| 2.5 * x.x - 1.0);
        let pts = [Vec2::new(0.1, 0.2), Vec2::new(-0.5, 0.33), Vec2::new(0.0, -0.71)];
        for v in curl_interp(&grid, &psi, &pts).unwrap() {
            assert!((v - Vec2::new(0.0, 2.5)).norm() < 1e-12);
        }
        assert!(curl_interp(&grid, &psi, &[Vec2::new(1.5, 0.0)]).is_err());
    }

    #[test]
    fn curl_of_radial_field_is_tangential() {
        let dom = DiskDomain::new(1.0).unwrap();
        for n in [33, 65] {
            let grid = Grid::covering(&dom, n).unwrap();
            let psi = ScalarField::from_fn(&grid, |x| (-2.0 * x.norm_sq()).exp());
            let pts: Vec<Point2> = (0..20).map(|k| Vec2::new(0.6, 0.0).rotated(0.31 * k as f64)).collect();
            let v = curl_interp(&grid, &psi, &pts).unwrap();
            let worst = pts.iter().zip(&v).map(|(x, v)| (x.dot(*v) / v.norm()).abs()).fold(0.0, f64::max);
            assert!(worst < 2.0 * grid.spacing() * grid.spacing(), "n={n} worst={worst}");
        }
    }

    #[test]
    fn curl_interp_matches_manufactured_velocity() {
        let dom = DiskDomain::new(1.0).unwrap();
        let mut errs = Vec::new();
        for n in [33, 65, 129] {
            let grid = Grid::covering(&dom, n).unwrap();
            let psi = ScalarField::from_fn(&grid, |x| manufactured_psi(x, 1.0));
            let pts: Vec<Point2> = (0..16).map(|k| Vec2::new(0.55, 0.1).rotated(0.4 * k as f64)).collect();
            let v = curl_interp(&grid, &psi, &pts).unwrap();
            let e = pts.iter().zip(&v).map(|(x, v)| (*v - manufactured_velocity(*x, 1.0)).norm()).fold(0.0, f64::max);
            errs.push(e);
        }
        assert!(errs[0] / errs[1] > 3.0 && errs[1] / errs[2] > 3.0, "{errs:?}");
    }

    #[test]
    fn dirichlet_data_is_kept() {
        let (grid, sys, _, _) = setup(17, 1.0);
        let g = ScalarField::from_fn(&grid, |x| x.x + 2.0);
        let u = sys.solve_dirichlet(&ScalarField::zeros(&grid), &g).unwrap();
        for k in 0..grid.len() {
            if !grid.is_interior(k) {
                assert_eq!(u.values[k], g.values[k]);
            }
        }
    }

    #[test]
    fn non_convergence_reports_history() {
        let (grid, sys, _, _) = setup(33, 1.0);
        let sys = sys.with_settings(SolverSettings { rel_tol: 1e-14, max_iter_per_node: 0 });
        let omega = ScalarField::from_fn(&grid, |_| 1.0).masked(&grid);
        match sys.solve_stream(&omega) {
            Err(SolverError::NotConverged { iterations, .. }) => assert_eq!(iterations, 0),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn field_csv_has_header_and_rows() {
        let dom = DiskDomain::new(1.0).unwrap();
        let grid = Grid::covering(&dom, 9).unwrap();
        let mut buf = Vec::new();
        write_field_csv(&grid, &ScalarField::zeros(&grid), &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 82);
        assert!(text.starts_with("index,x1,x2,value"));
    }
}
