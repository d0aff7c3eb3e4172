//! Lift of the planar vorticity to the helically symmetric 3D field
//! `curl U(x) = (1/h) ω(R̃_{−x₃/h}(x₁, x₂)) ξ(x)`, and the predicted
//! filaments.

use std::f64::consts::PI;
use std::io::{self, Write};

use rayon::prelude::*;

use crate::geometry::{Point2, Point3, Vec2, Vec3};
use crate::kernel::HelixParams;
use crate::sim::{self, BlobSpec};

/// `ξ(x) = (−x₂, x₁, h)`.
pub fn xi_field(x: Point3, p: &HelixParams) -> Vec3 {
    Vec3::new(-x.y, x.x, p.h())
}

/// Screw motion `S_θ x = R_θ x + hθ e₃`.
pub fn helical_map(theta: f64, x: Point3, p: &HelixParams) -> Point3 {
    let r = x.horizontal().rotated(theta);
    Point3::new(r.x, r.y, x.z + p.h() * theta)
}

/// Rotation about the vertical axis.
pub fn rotate_about_axis(theta: f64, v: Vec3) -> Vec3 {
    let r = v.horizontal().rotated(theta);
    Vec3::new(r.x, r.y, v.z)
}

/// Gaussian kernel-density estimate of the planar vorticity,
/// `ω(x) = Σ w_j exp(−|x − y_j|²/(2σ²)) / (2πσ²)`.
#[derive(Debug, Clone)]
pub struct Omega2d {
    positions: Vec<Point2>,
    weights: Vec<f64>,
    bandwidth: f64,
}

impl Omega2d {
    /// Panics if the slices differ in length or the bandwidth is not positive.
    pub fn new(positions: Vec<Point2>, weights: Vec<f64>, bandwidth: f64) -> Self {
        assert_eq!(positions.len(), weights.len(), "positions and weights differ in length");
        assert!(bandwidth > 0.0, "bandwidth must be positive");
        Omega2d { positions, weights, bandwidth }
    }

    pub fn bandwidth(&self) -> f64 {
        self.bandwidth
    }

    pub fn eval(&self, x: Point2) -> f64 {
        let s2 = self.bandwidth * self.bandwidth;
        let norm = 1.0 / (2.0 * PI * s2);
        // contributions beyond 12σ are below 1e-31 of the peak
        let cutoff = 144.0 * s2;
        let mut acc = 0.0;
        for (y, w) in self.positions.iter().zip(&self.weights) {
            let r2 = (x - *y).norm_sq();
            if r2 < cutoff {
                acc += w * (-0.5 * r2 / s2).exp();
            }
        }
        norm * acc
    }

    /// Total circulation carried by the estimate.
    pub fn circulation(&self) -> f64 {
        self.weights.iter().sum()
    }
}

/// Lifted vorticity at one point.
pub fn vorticity_at(x: Point3, omega: &Omega2d, p: &HelixParams) -> Vec3 {
    let back = x.horizontal().rotated(-x.z / p.h());
    xi_field(x, p).scale(omega.eval(back) / p.h())
}

/// Lifted vorticity at every sample, in parallel.
pub fn vorticity3d(samples: &[Point3], omega: &Omega2d, p: &HelixParams) -> Vec<Vec3> {
    samples.par_iter().map(|&x| vorticity_at(x, omega, p)).collect()
}

/// Second-order central-difference divergence of the lifted field at `x`.
pub fn divergence_fd(x: Point3, omega: &Omega2d, p: &HelixParams, step: f64) -> f64 {
    let f = |y: Point3| vorticity_at(y, omega, p);
    let e = |dx: f64, dy: f64, dz: f64| Point3::new(x.x + dx, x.y + dy, x.z + dz);
    let dx = (f(e(step, 0.0, 0.0)).x - f(e(-step, 0.0, 0.0)).x) / (2.0 * step);
    let dy = (f(e(0.0, step, 0.0)).y - f(e(0.0, -step, 0.0)).y) / (2.0 * step);
    let dz = (f(e(0.0, 0.0, step)).z - f(e(0.0, 0.0, -step)).z) / (2.0 * step);
    dx + dy + dz
}

/// Predicted filament `σ ↦ (R̃_σ z(t), hσ)` with `z(t)` the leading-order centre.
pub fn helix_curve(spec: &BlobSpec, p: &HelixParams, t: f64, sigmas: &[f64]) -> Vec<Point3> {
    let z = sim::leading_order(spec, p, t);
    sigmas
        .iter()
        .map(|&s| {
            let r = z.rotated(s);
            Point3::new(r.x, r.y, p.h() * s)
        })
        .collect()
}

/// Sample points filling a tube around the helix through `center`.
///
/// `levels` heights cover one pitch `[0, 2πh)`; at each height an
/// `n × n` square of half-width `half_width` is centred on the rotated
/// centre `R̃_{x₃/h} center`.
pub fn tube_samples(center: Point2, half_width: f64, n: usize, levels: usize, p: &HelixParams) -> Vec<Point3> {
    let mut out = Vec::with_capacity(n * n * levels);
    let step = if n > 1 { 2.0 * half_width / (n - 1) as f64 } else { 0.0 };
    for l in 0..levels {
        let z = 2.0 * PI * p.h() * l as f64 / levels.max(1) as f64;
        let c = center.rotated(z / p.h());
        for i in 0..n {
            for j in 0..n {
                let off = if n > 1 { Vec2::new(-half_width + step * i as f64, -half_width + step * j as f64) } else { Vec2::ZERO };
                let q = c + off;
                out.push(Point3::new(q.x, q.y, z));
            }
        }
    }
    out
}

/// Point cloud: `x1,x2,x3,magnitude,w1,w2,w3`.
pub fn write_point_cloud<W: Write>(samples: &[Point3], field: &[Vec3], mut out: W) -> io::Result<()> {
    writeln!(out, "x1,x2,x3,magnitude,w1,w2,w3")?;
    for (x, w) in samples.iter().zip(field) {
        writeln!(out, "{:?},{:?},{:?},{:?},{:?},{:?},{:?}", x.x, x.y, x.z, w.norm(), w.x, w.y, w.z)?;
    }
    Ok(())
}

/// One polyline of a filament export.
#[derive(Debug, Clone, PartialEq)]
pub struct Filament {
    pub blob: usize,
    pub t: f64,
    pub points: Vec<Point3>,
}

/// Filament polylines: `blob,t,k,x1,x2,x3`.
pub fn write_filaments<W: Write>(filaments: &[Filament], mut out: W) -> io::Result<()> {
    writeln!(out, "blob,t,k,x1,x2,x3")?;
    for f in filaments {
        for (k, x) in f.points.iter().enumerate() {
            writeln!(out, "{},{:?},{},{:?},{:?},{:?}", f.blob, f.t, k, x.x, x.y, x.z)?;
        }
    }
    Ok(())
}
