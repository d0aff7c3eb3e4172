//! Closed-form geometry of the helical reduction.
//!
//! Everything here is a pure function of the point(s) and the pitch `h`:
//! the anisotropic coefficient matrix `K(x)`, its inverse square root
//! `Λ(x)`, the radial flattening map `𝒯(x) = ρ(|x|²) x` whose Jacobian is
//! `ρ(|x|²) Λ(x)`, and the singular free-space Green's kernel
//! `G_K(x, y) = H(x, y) ln|𝒯(x) − 𝒯(y)|` with its gradient.

use std::f64::consts::PI;

use thiserror::Error;

use crate::geometry::{Point2, SymMat2, Vec2};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum KernelError {
    #[error("helix pitch must be finite and strictly positive, got {0}")]
    InvalidPitch(f64),
    #[error("kernel evaluated at coincident points ({0}, {1})")]
    CoincidentPoints(f64, f64),
}

/// Pitch of the helical symmetry.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HelixParams {
    h: f64,
}

impl HelixParams {
    pub fn new(h: f64) -> Result<Self, KernelError> {
        if h.is_finite() && h > 0.0 {
            Ok(HelixParams { h })
        } else {
            Err(KernelError::InvalidPitch(h))
        }
    }

    #[inline]
    pub fn h(&self) -> f64 {
        self.h
    }
}

/// `|X| = sqrt(|x|² + h²)`.
#[inline]
pub fn lifted_norm(x: Point2, p: &HelixParams) -> f64 {
    (x.norm_sq() + p.h * p.h).sqrt()
}

/// `N(x) = x xᵀ`.
#[inline]
pub fn n_matrix(x: Point2) -> SymMat2 {
    SymMat2::new(x.x * x.x, x.x * x.y, x.y * x.y)
}

/// The coefficient matrix `K(x) = I − N(x)/(h² + |x|²)`.
///
/// Eigenvalue 1 along `x⊥` and `h²/|X|²` along `x`.
pub fn k_matrix(x: Point2, p: &HelixParams) -> SymMat2 {
    let h2 = p.h * p.h;
    let inv = 1.0 / (x.norm_sq() + h2);
    SymMat2::new((h2 + x.y * x.y) * inv, -x.x * x.y * inv, (h2 + x.x * x.x) * inv)
}

/// `Λ(x) = I + N(x)/(h|X| + h²)`, the inverse square root of `K(x)`.
pub fn lambda_matrix(x: Point2, p: &HelixParams) -> SymMat2 {
    let big_x = lifted_norm(x, p);
    let c = 1.0 / (p.h * big_x + p.h * p.h);
    let n = n_matrix(x);
    SymMat2::new(1.0 + c * n.a11, c * n.a12, 1.0 + c * n.a22)
}

/// `Λ(x)⁻¹ = I − N(x)/(h|X| + |X|²)`.
pub fn lambda_inverse(x: Point2, p: &HelixParams) -> SymMat2 {
    let big_x = lifted_norm(x, p);
    let c = 1.0 / (p.h * big_x + big_x * big_x);
    let n = n_matrix(x);
    SymMat2::new(1.0 - c * n.a11, -c * n.a12, 1.0 - c * n.a22)
}

/// Logarithmic derivative of `ρ`: `g(s) = 1 / (2(h sqrt(s + h²) + h²))`.
#[inline]
pub fn rho_log_derivative(s: f64, p: &HelixParams) -> f64 {
    1.0 / (2.0 * (p.h * (s + p.h * p.h).sqrt() + p.h * p.h))
}

/// `ρ(s) = exp(∫₀ˢ g)`, evaluated in closed form.
///
/// With `w = sqrt(s + h²)` the integral is `(w − h)/h − ln((w + h)/(2h))`.
#[inline]
pub fn rho(s: f64, p: &HelixParams) -> f64 {
    let h = p.h;
    let w = (s + h * h).sqrt();
    ((w - h) / h).exp() * (2.0 * h / (w + h))
}

/// Radial factor `f(x) = ρ(|x|²)`.
#[inline]
pub fn radial_factor(x: Point2, p: &HelixParams) -> f64 {
    rho(x.norm_sq(), p)
}

/// The flattening diffeomorphism `𝒯(x) = ρ(|x|²) x`.
#[inline]
pub fn diffeo(x: Point2, p: &HelixParams) -> Point2 {
    radial_factor(x, p) * x
}

/// `D𝒯(x) = f(x) Λ(x)`.
pub fn diffeo_jacobian(x: Point2, p: &HelixParams) -> SymMat2 {
    lambda_matrix(x, p).scale(radial_factor(x, p))
}

/// `H(x, y) = sqrt(|X||Y|) / (2πh)`.
#[inline]
pub fn h_weight(x: Point2, y: Point2, p: &HelixParams) -> f64 {
    (lifted_norm(x, p) * lifted_norm(y, p)).sqrt() / (2.0 * PI * p.h)
}

fn check_distinct(x: Point2, y: Point2) -> Result<(), KernelError> {
    if x == y {
        Err(KernelError::CoincidentPoints(x.x, x.y))
    } else {
        Ok(())
    }
}

/// Singular part of the Green's function, `G_K(x, y) = H(x, y) ln|𝒯(x) − 𝒯(y)|`.
pub fn green_free(x: Point2, y: Point2, p: &HelixParams) -> Result<f64, KernelError> {
    check_distinct(x, y)?;
    let d = diffeo(x, p) - diffeo(y, p);
    Ok(h_weight(x, y, p) * 0.5 * d.norm_sq().ln())
}

/// `∇ₓ G_K(x, y)`.
///
/// Two terms: `(H/2)(x/|X|²) ln|𝒯x − 𝒯y|` from the weight, and
/// `H D𝒯(x)(𝒯x − 𝒯y)/|𝒯x − 𝒯y|²` from the logarithm.
pub fn grad_green_free(x: Point2, y: Point2, p: &HelixParams) -> Result<Vec2, KernelError> {
    check_distinct(x, y)?;
    let big_x2 = x.norm_sq() + p.h * p.h;
    let d = diffeo(x, p) - diffeo(y, p);
    let d2 = d.norm_sq();
    let hw = h_weight(x, y, p);
    let weight_term = (0.5 * hw / big_x2 * 0.5 * d2.ln()) * x;
    let log_term = (hw / d2) * diffeo_jacobian(x, p).mul_vec(d);
    Ok(weight_term + log_term)
}

/// `∇ₓ⊥ G_K(x, y)`, the velocity induced at `x` by a unit point vortex at `y`.
pub fn grad_perp_green_free(x: Point2, y: Point2, p: &HelixParams) -> Result<Vec2, KernelError> {
    grad_green_free(x, y, p).map(Vec2::perp)
}
