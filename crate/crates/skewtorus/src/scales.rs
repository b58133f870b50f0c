//! Derived scales, thresholds, and critical regions.
//!
//! Everything here is a pure function of the coupling strength N and two
//! small exponents: delta (density-loss budget for hyperbolic times) and
//! delta_tilde (critical-strip exponent). The runner echoes these values
//! into its manifest so configurations are auditable.

use crate::error::{Error, Result};
use crate::maps::Point4;
use crate::torus::circle_dist;
use std::f64::consts::{FRAC_PI_2, PI};

/// Scale pack derived from N. `theta1`/`theta2` are cone apertures,
/// `t_window` the window radius for the two-sided contraction proxy,
/// `r0` the guaranteed stable-leaf radius, `eta` the bad-piece production
/// rate, `k_ratio` the good-to-bad piece ratio target, `eps1..eps3` the
/// slack exponents of the derivative, length, and distortion estimates,
/// and `beta` the perturbation proximity slack.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct Scales {
    pub n: u32,
    pub delta: f64,
    pub delta_tilde: f64,
    pub theta1: f64,
    pub theta2: f64,
    pub theta3: f64,
    pub t_window: i64,
    pub r0: f64,
    pub eta: f64,
    pub k_ratio: f64,
    pub eps1: f64,
    pub eps2: f64,
    pub eps3: f64,
    pub beta: f64,
}

pub const DEFAULT_DELTA: f64 = 0.01;
pub const DEFAULT_DELTA_TILDE: f64 = 0.1;

impl Scales {
    /// Derives the full scale pack from N with the given exponents.
    pub fn derive(n: u32, delta: f64, delta_tilde: f64) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidParameter("N must be at least 1".into()));
        }
        if !(delta > 0.0 && delta < 1.0) || !delta.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "delta must lie in (0,1), got {delta}"
            )));
        }
        if !(delta_tilde > 0.0) || !delta_tilde.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "delta_tilde must be positive, got {delta_tilde}"
            )));
        }
        let nf = n as f64;
        let theta2 = nf.powf(-3.0 / 5.0);
        Ok(Self {
            n,
            delta,
            delta_tilde,
            theta1: nf.powf(-2.0 / 5.0),
            theta2,
            theta3: 2.0 * theta2,
            t_window: ((1.0 + 7.0 * delta) / (28.0 * delta)).floor() as i64,
            r0: nf.powf(-7.0),
            eta: 5.0 / (PI * nf.powf(delta_tilde)),
            k_ratio: 10.0,
            eps1: 0.05,
            eps2: 0.05,
            eps3: 0.05,
            beta: 0.01,
        })
    }

    pub fn default_for(n: u32) -> Result<Self> {
        Self::derive(n, DEFAULT_DELTA, DEFAULT_DELTA_TILDE)
    }

    pub fn with_theta3(mut self, theta3: f64) -> Result<Self> {
        // Any aperture in (theta2, 1) keeps the horizontal and vertical
        // theta3-cones transversal.
        if !(theta3 > self.theta2 && theta3 < 1.0) {
            return Err(Error::InvalidParameter(format!(
                "theta3 must lie in (theta2, 1) = ({}, 1), got {theta3}",
                self.theta2
            )));
        }
        self.theta3 = theta3;
        Ok(self)
    }

    pub fn with_k_ratio(mut self, k: f64) -> Result<Self> {
        if !(k > 0.0) || !k.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "K must be positive, got {k}"
            )));
        }
        self.k_ratio = k;
        Ok(self)
    }

    pub fn with_slacks(mut self, eps1: f64, eps2: f64, eps3: f64, beta: f64) -> Result<Self> {
        for (name, v) in [("eps1", eps1), ("eps2", eps2), ("eps3", eps3), ("beta", beta)] {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::InvalidParameter(format!(
                    "{name} must be positive, got {v}"
                )));
            }
        }
        self.eps1 = eps1;
        self.eps2 = eps2;
        self.eps3 = eps3;
        self.beta = beta;
        Ok(self)
    }

    /// Invariant bundle: positivity and the aperture ordering.
    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("theta1", self.theta1),
            ("theta2", self.theta2),
            ("theta3", self.theta3),
            ("r0", self.r0),
            ("eta", self.eta),
            ("k_ratio", self.k_ratio),
            ("eps1", self.eps1),
            ("eps2", self.eps2),
            ("eps3", self.eps3),
            ("beta", self.beta),
        ];
        for (name, v) in fields {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::InvalidParameter(format!(
                    "scale {name} must be positive and finite, got {v}"
                )));
            }
        }
        if !(self.theta2 < self.theta1 && self.theta1 < 1.0) {
            return Err(Error::InvalidParameter(format!(
                "need theta2 < theta1 < 1, got theta1={} theta2={}",
                self.theta1, self.theta2
            )));
        }
        Ok(())
    }

    /// Gap between the two graded critical-region boundaries; it dominates
    /// the stable-leaf radius r0 for every N >= 2.
    pub fn boundary_gap(&self) -> f64 {
        (self.n as f64).powf(-3.0 / 10.0)
    }
}

/// The graded critical regions around the two vanishing-twist circles
/// x (and for the graded pair also y) near pi/2 and 3pi/2.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum RegionKind {
    /// Wide strips (half-width 2 N^{-3/10}) in both x and y.
    Crit1,
    /// Narrow strips (half-width N^{-3/10}) in both x and y.
    Crit2,
    /// Complement of Crit1.
    G1,
    /// Complement of Crit2.
    G2,
    /// Strip in x only, half-width 2 N^{-delta_tilde}.
    CritTilde,
    /// Complement of CritTilde.
    GTilde,
}

#[derive(Debug, Clone, Copy)]
pub struct CriticalRegion {
    pub kind: RegionKind,
    pub n: u32,
    pub delta_tilde: f64,
}

impl CriticalRegion {
    pub fn new(kind: RegionKind, n: u32, delta_tilde: f64) -> Self {
        Self {
            kind,
            n,
            delta_tilde,
        }
    }

    /// Half-width of the underlying interval around pi/2 and 3pi/2.
    pub fn half_width(&self) -> f64 {
        let nf = self.n as f64;
        match self.kind {
            RegionKind::Crit1 | RegionKind::G1 => 2.0 * nf.powf(-3.0 / 10.0),
            RegionKind::Crit2 | RegionKind::G2 => nf.powf(-3.0 / 10.0),
            RegionKind::CritTilde | RegionKind::GTilde => 2.0 * nf.powf(-self.delta_tilde),
        }
    }

    fn near_vanishing_twist(coord: f64, hw: f64) -> bool {
        circle_dist(coord, FRAC_PI_2) < hw || circle_dist(coord, 3.0 * FRAC_PI_2) < hw
    }

    pub fn contains(&self, m: Point4) -> bool {
        let hw = self.half_width();
        match self.kind {
            RegionKind::Crit1 | RegionKind::Crit2 => {
                Self::near_vanishing_twist(m[0], hw) || Self::near_vanishing_twist(m[1], hw)
            }
            RegionKind::G1 | RegionKind::G2 => {
                !(Self::near_vanishing_twist(m[0], hw) || Self::near_vanishing_twist(m[1], hw))
            }
            RegionKind::CritTilde => Self::near_vanishing_twist(m[0], hw),
            RegionKind::GTilde => !Self::near_vanishing_twist(m[0], hw),
        }
    }
}

/// Membership test for a point in a critical region.
pub fn in_critical(m: Point4, region: &CriticalRegion) -> bool {
    region.contains(m)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn scale_values_at_n100() {
        let s = Scales::derive(100, 0.01, 0.1).unwrap();
        s.validate().unwrap();
        assert_abs_diff_eq!(s.theta1, 0.15848931924611134, epsilon = 1e-14);
        assert_abs_diff_eq!(s.theta2, 0.06309573444801933, epsilon = 1e-14);
        assert_abs_diff_eq!(s.r0, 1e-14, epsilon = 1e-22);
        assert_abs_diff_eq!(s.eta, 5.0 / (PI * 100f64.powf(0.1)), epsilon = 1e-15);
        assert_eq!(s.t_window, 3);
        assert_eq!(Scales::derive(100, 0.001, 0.1).unwrap().t_window, 35);
    }

    #[test]
    fn eta_exceeds_one_below_the_recursion_threshold() {
        // 5/(pi N^0.1) > 1 iff N < (5/pi)^10 ~ 104.3, so at N = 100 the
        // bad-piece recursion constant is vacuous and only becomes
        // informative for larger N.
        assert!(Scales::derive(100, 0.01, 0.1).unwrap().eta > 1.0);
        assert!(Scales::derive(105, 0.01, 0.1).unwrap().eta < 1.0);
    }

    #[test]
    fn region_membership_examples() {
        let n = 100;
        let dt = 0.1;
        for kind in [
            RegionKind::Crit1,
            RegionKind::Crit2,
            RegionKind::CritTilde,
        ] {
            let r = CriticalRegion::new(kind, n, dt);
            assert!(r.contains([FRAC_PI_2, 0.0, 0.0, 0.0]), "{kind:?}");
        }
        let tilde = CriticalRegion::new(RegionKind::CritTilde, n, dt);
        assert_abs_diff_eq!(tilde.half_width(), 1.2619146889603869, epsilon = 1e-12);
        assert!(!tilde.contains([FRAC_PI_2 + 1.3, 0.0, 0.0, 0.0]));
        assert!(tilde.contains([3.0 * FRAC_PI_2 - 1.2, 0.0, 0.0, 0.0]));
        // y-strips count for the graded regions but not the tilde strip.
        let c1 = CriticalRegion::new(RegionKind::Crit1, n, dt);
        assert!(c1.contains([0.0, FRAC_PI_2, 0.0, 0.0]));
        assert!(!tilde.contains([0.0, FRAC_PI_2, 0.0, 0.0]));
        // G1 is a subset of G2.
        let g1 = CriticalRegion::new(RegionKind::G1, n, dt);
        let g2 = CriticalRegion::new(RegionKind::G2, n, dt);
        let mut x = 0.0;
        while x < crate::torus::TAU {
            let m = [x, 1.0, 0.0, 0.0];
            if g1.contains(m) {
                assert!(g2.contains(m), "x={x}");
            }
            x += 1e-3;
        }
    }

    #[test]
    fn boundary_gap_dominates_leaf_radius() {
        for n in [2u32, 10, 100, 1000] {
            let s = Scales::default_for(n).unwrap();
            assert!(s.boundary_gap() > s.r0);
        }
    }
}
