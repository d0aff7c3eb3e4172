//! Branch-free natural logarithm over fixed-width lanes.
//!
//! `f64::ln` is an opaque libm call and blocks vectorisation of the pair
//! loop. This version splits `x = 2^e m` with `m ∈ [√½, √2)` and sums the
//! `atanh` series of `s = (m − 1)/(m + 1)` to full double precision.
//! Inputs must be positive, finite and normal.

use std::f64::consts::{LN_2, SQRT_2};

const MANTISSA_MASK: u64 = (1u64 << 52) - 1;
const EXP_BIAS: u64 = 1023;
const MAGIC_BITS: u64 = 0x4330_0000_0000_0000;
const MAGIC: f64 = 4_503_599_627_370_496.0;

// 2/(2k + 1) for k = 0..=11
const SERIES: [f64; 12] = [
    2.0,
    2.0 / 3.0,
    2.0 / 5.0,
    2.0 / 7.0,
    2.0 / 9.0,
    2.0 / 11.0,
    2.0 / 13.0,
    2.0 / 15.0,
    2.0 / 17.0,
    2.0 / 19.0,
    2.0 / 21.0,
    2.0 / 23.0,
];

#[inline(always)]
fn ln_one(x: f64) -> f64 {
    let bits = x.to_bits();
    // Exponent as a float without an int conversion: 2^52 + biased exponent.
    let e_biased = f64::from_bits((bits >> 52) | MAGIC_BITS) - MAGIC;
    let m0 = f64::from_bits((bits & MANTISSA_MASK) | (EXP_BIAS << 52));
    let big = ((m0 > SQRT_2) as u64) as f64;
    let m = m0 * (1.0 - 0.5 * big);
    let e = e_biased - EXP_BIAS as f64 + big;
    let s = (m - 1.0) / (m + 1.0);
    let z = s * s;
    let mut poly = SERIES[11];
    for k in (0..11).rev() {
        poly = poly.mul_add(z, SERIES[k]);
    }
    e.mul_add(LN_2, s * poly)
}

/// Natural log of each lane.
#[inline(always)]
pub fn ln_lanes<const N: usize>(x: [f64; N]) -> [f64; N] {
    let mut out = [0.0; N];
    for l in 0..N {
        out[l] = ln_one(x[l]);
    }
    out
}

/// Scalar entry point, mainly for testing.
pub fn ln(x: f64) -> f64 {
    ln_one(x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn exact_points() {
        assert_eq!(ln(1.0), 0.0);
        assert!((ln(2.0) - LN_2).abs() < 1e-16);
        assert!((ln(std::f64::consts::E) - 1.0).abs() < 2e-16);
    }

    #[test]
    fn lanes_agree_with_scalar() {
        let x = [1e-12, 0.3, 1.0, 1.5, 7.0, 1e5, 2.0f64.sqrt(), 0.7];
        let l = ln_lanes(x);
        for k in 0..8 {
            assert_eq!(l[k], ln(x[k]));
        }
    }

    proptest! {
        #[test]
        fn matches_std_ln(x in 1e-300f64..1e300) {
            let a = ln(x);
            let b = x.ln();
            prop_assert!((a - b).abs() <= 4.0 * f64::EPSILON * b.abs().max(1.0), "{} vs {}", a, b);
        }

        #[test]
        fn matches_near_one(x in 0.5f64..2.0) {
            let a = ln(x);
            let b = x.ln();
            prop_assert!((a - b).abs() <= 2e-16, "{} vs {}", a, b);
        }
    }
}
