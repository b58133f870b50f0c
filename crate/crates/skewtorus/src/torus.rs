//! Angle reduction, torus metrics, and the exact fiber lattice.
//!
//! Fiber coordinates that enter integer-matrix dynamics are snapped to the
//! dyadic grid (2 pi / 2^48) Z before each integer step. On that grid the
//! toral automorphism action is exact modular arithmetic on u64 words, so
//! A^{-k} o A^k is the identity bit for bit at every k and the coupling
//! term recomputed by an inverse map matches the forward pass exactly.
//!
//! The conversion pair is lossless: `from_lattice` performs a single
//! rounding of t * (2 pi / 2^48) whose relative error is below 1.2e-16,
//! and `to_lattice` multiplies by the correctly rounded 2^48 / (2 pi),
//! leaving a total drift under 0.1 lattice units, well inside the 0.5
//! needed for round-to-nearest to recover t. A unit test sweeps the edge
//! cases; the property suite hammers random points.

use crate::error::{Error, Result};
use crate::linalg::IntMat2;

pub const TAU: f64 = std::f64::consts::TAU;

/// Number of fractional bits in the fiber lattice.
pub const LATTICE_BITS: u32 = 48;
/// Lattice resolution: the circle is split into 2^48 equal parts.
pub const LATTICE_SIZE: u64 = 1 << LATTICE_BITS;
const LATTICE_MASK: u64 = LATTICE_SIZE - 1;

/// Exact power-of-two scaling of tau; multiplication by it rounds once.
const RAD_PER_UNIT: f64 = TAU / LATTICE_SIZE as f64;
const UNITS_PER_RAD: f64 = LATTICE_SIZE as f64 / TAU;

/// Default cap for `apply_mat_power`.
pub const DEFAULT_MAX_POWER: u64 = 1 << 20;

/// Reduces an angle to the canonical interval [0, 2 pi). Errors on
/// non-finite input; `wrap` is the unchecked internal variant.
pub fn reduce_mod_2pi(v: f64) -> Result<f64> {
    if !v.is_finite() {
        return Err(Error::NonFinite("reduce_mod_2pi"));
    }
    Ok(wrap(v))
}

/// Unchecked reduction to [0, 2 pi). fmod is exact, so values already in
/// range pass through bit for bit and reduction is idempotent. The final
/// guard handles tiny negatives whose shift by tau rounds up to tau.
pub(crate) fn wrap(v: f64) -> f64 {
    let r = v % TAU;
    let r = if r < 0.0 { r + TAU } else { r };
    if r >= TAU {
        0.0
    } else {
        r
    }
}

pub fn reduce_point2(p: [f64; 2]) -> Result<[f64; 2]> {
    Ok([reduce_mod_2pi(p[0])?, reduce_mod_2pi(p[1])?])
}

pub fn reduce_point4(p: [f64; 4]) -> Result<[f64; 4]> {
    Ok([
        reduce_mod_2pi(p[0])?,
        reduce_mod_2pi(p[1])?,
        reduce_mod_2pi(p[2])?,
        reduce_mod_2pi(p[3])?,
    ])
}

/// Distance on the circle R/2piZ.
pub fn circle_dist(a: f64, b: f64) -> f64 {
    let d = wrap(a - b);
    d.min(TAU - d)
}

/// Distance on the 2-torus: max of the component circle distances.
pub fn torus_dist2(p: [f64; 2], q: [f64; 2]) -> f64 {
    circle_dist(p[0], q[0]).max(circle_dist(p[1], q[1]))
}

/// Distance on the 4-torus: max of the component circle distances.
pub fn torus_dist4(p: [f64; 4], q: [f64; 4]) -> f64 {
    let mut d = 0.0_f64;
    for i in 0..4 {
        d = d.max(circle_dist(p[i], q[i]));
    }
    d
}

/// Snaps an angle to the nearest lattice point, as an index in [0, 2^48).
pub fn to_lattice(v: f64) -> u64 {
    let r = wrap(v);
    // r < tau, so r * UNITS_PER_RAD <= 2^48 and the cast is in range; an
    // exact hit on 2^48 wraps to index 0 via the mask.
    let t = (r * UNITS_PER_RAD).round() as u64;
    t & LATTICE_MASK
}

/// Angle of a lattice point. One rounding; exact inverse of `to_lattice`
/// on lattice indices.
pub fn from_lattice(t: u64) -> f64 {
    (t & LATTICE_MASK) as f64 * RAD_PER_UNIT
}

/// An integer matrix reduced mod 2^48, acting exactly on lattice indices.
/// u64 wrapping arithmetic is exact mod 2^64, hence exact mod 2^48 after
/// masking, so applications, products and powers all commute with the
/// reduction from Z.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ModMat2 {
    m: [[u64; 2]; 2],
}

const LATTICE_MODULUS: i64 = LATTICE_SIZE as i64;

impl ModMat2 {
    pub fn from_int(a: &IntMat2) -> Self {
        let r = |x: i64| x.rem_euclid(LATTICE_MODULUS) as u64;
        Self {
            m: [[r(a.a), r(a.b)], [r(a.c), r(a.d)]],
        }
    }

    pub fn identity() -> Self {
        Self {
            m: [[1, 0], [0, 1]],
        }
    }

    pub fn mul(&self, other: &Self) -> Self {
        let mut out = [[0u64; 2]; 2];
        for i in 0..2 {
            for j in 0..2 {
                out[i][j] = self.m[i][0]
                    .wrapping_mul(other.m[0][j])
                    .wrapping_add(self.m[i][1].wrapping_mul(other.m[1][j]))
                    & LATTICE_MASK;
            }
        }
        Self { m: out }
    }

    pub fn pow(&self, k: u32) -> Self {
        let mut out = Self::identity();
        for _ in 0..k {
            out = out.mul(self);
        }
        out
    }

    pub fn apply(&self, t: [u64; 2]) -> [u64; 2] {
        [
            self.m[0][0]
                .wrapping_mul(t[0])
                .wrapping_add(self.m[0][1].wrapping_mul(t[1]))
                & LATTICE_MASK,
            self.m[1][0]
                .wrapping_mul(t[0])
                .wrapping_add(self.m[1][1].wrapping_mul(t[1]))
                & LATTICE_MASK,
        ]
    }
}

/// One application of an integer matrix to a point of the 2-torus,
/// through the exact lattice.
pub fn apply_int_mat(a: &IntMat2, p: [f64; 2]) -> Result<[f64; 2]> {
    if !p[0].is_finite() || !p[1].is_finite() {
        return Err(Error::NonFinite("apply_int_mat"));
    }
    let t = ModMat2::from_int(a).apply([to_lattice(p[0]), to_lattice(p[1])]);
    Ok([from_lattice(t[0]), from_lattice(t[1])])
}

/// k-th power action (k may be negative; the matrix must then have
/// determinant 1 so the integer inverse exists). Applied stepwise; on the
/// lattice this is identical to applying the reduced k-th power at once.
pub fn apply_mat_power(a: &IntMat2, k: i64, p: [f64; 2], max_power: u64) -> Result<[f64; 2]> {
    if !p[0].is_finite() || !p[1].is_finite() {
        return Err(Error::NonFinite("apply_mat_power"));
    }
    if k.unsigned_abs() > max_power {
        return Err(Error::PowerTooLarge { k, max: max_power });
    }
    let step = if k >= 0 {
        ModMat2::from_int(a)
    } else {
        ModMat2::from_int(&a.inverse()?)
    };
    let mut t = [to_lattice(p[0]), to_lattice(p[1])];
    for _ in 0..k.unsigned_abs() {
        t = step.apply(t);
    }
    Ok([from_lattice(t[0]), from_lattice(t[1])])
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn reduction_examples() {
        assert_abs_diff_eq!(reduce_mod_2pi(7.0).unwrap(), 7.0 - TAU, epsilon = 1e-15);
        assert_eq!(reduce_mod_2pi(TAU).unwrap(), 0.0);
        assert_eq!(reduce_mod_2pi(0.0).unwrap(), 0.0);
        let x = 1.234567;
        assert_eq!(reduce_mod_2pi(x).unwrap(), x);
        assert!(reduce_mod_2pi(f64::NAN).is_err());
        assert!(reduce_mod_2pi(f64::INFINITY).is_err());
        // Idempotent even for a tiny negative that lands on tau after shift.
        let r = wrap(-1e-20);
        assert!(r >= 0.0 && r < TAU);
        assert_eq!(wrap(r), r);
    }

    #[test]
    fn circle_distance_wraps() {
        assert_abs_diff_eq!(circle_dist(0.1, TAU - 0.1), 0.2, epsilon = 1e-15);
        assert_abs_diff_eq!(
            torus_dist4([0.1, 0.0, 0.0, 0.0], [TAU - 0.1, 0.0, 0.0, 3.0]),
            3.0,
            epsilon = 1e-15
        );
    }

    #[test]
    fn lattice_roundtrip_is_exact() {
        // Edge cases plus a coarse sweep; the property tests randomize.
        for t in [
            0u64,
            1,
            2,
            LATTICE_SIZE / 2,
            LATTICE_SIZE - 2,
            LATTICE_SIZE - 1,
            12_345_678_901_234,
        ] {
            assert_eq!(to_lattice(from_lattice(t)), t, "t={t}");
        }
        let mut t = 1u64;
        for _ in 0..1000 {
            t = t.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407) & (LATTICE_SIZE - 1);
            assert_eq!(to_lattice(from_lattice(t)), t);
        }
    }

    #[test]
    fn pi_is_a_lattice_point() {
        // fl(2 pi) = 2 fl(pi), so pi sits exactly at index 2^47.
        assert_eq!(to_lattice(std::f64::consts::PI), LATTICE_SIZE / 2);
        assert_eq!(from_lattice(LATTICE_SIZE / 2), std::f64::consts::PI);
    }

    #[test]
    fn int_mat_example_on_pi_pi() {
        // [[2,1],[1,1]] (pi, pi) = (3 pi, 2 pi) = (pi, 0) exactly.
        let p = apply_int_mat(&IntMat2::cat(), [std::f64::consts::PI, std::f64::consts::PI])
            .unwrap();
        assert_eq!(p, [std::f64::consts::PI, 0.0]);
    }

    #[test]
    fn power_inverse_is_bit_exact() {
        let a = IntMat2::cat();
        let p = [1.234567, 5.432109];
        for k in [1i64, 2, 7, 20, 200] {
            let fwd = apply_mat_power(&a, k, p, DEFAULT_MAX_POWER).unwrap();
            let back = apply_mat_power(&a, -k, fwd, DEFAULT_MAX_POWER).unwrap();
            // The first application snapped p to the lattice; from there the
            // round trip is exact.
            let snapped = [from_lattice(to_lattice(p[0])), from_lattice(to_lattice(p[1]))];
            assert_eq!(back, snapped, "k={k}");
        }
    }

    #[test]
    fn stepwise_equals_reduced_power() {
        let a = IntMat2::new(3, 2, 1, 1);
        let t0 = [987_654_321u64, 123_456_789_123];
        let m = ModMat2::from_int(&a);
        let mut t = t0;
        for _ in 0..37 {
            t = m.apply(t);
        }
        assert_eq!(t, m.pow(37).apply(t0));
    }

    #[test]
    fn power_cap_and_negative_power_validation() {
        let a = IntMat2::cat();
        assert!(matches!(
            apply_mat_power(&a, 1 << 30, [0.0, 0.0], DEFAULT_MAX_POWER),
            Err(Error::PowerTooLarge { .. })
        ));
        let bad = IntMat2::new(2, 0, 0, 2); // det 4: no integer inverse
        assert!(apply_mat_power(&bad, -1, [0.0, 0.0], DEFAULT_MAX_POWER).is_err());
    }
}
