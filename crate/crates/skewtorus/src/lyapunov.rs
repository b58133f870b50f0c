//! Lyapunov exponents, Oseledets directions, and the unstable center
//! field of the skew product.
//!
//! Exponents come from a QR cocycle: push an orthonormal frame through
//! the derivative, re-orthonormalize every step, and average the log
//! diagonal of the triangular factor after a burn-in that lets the frame
//! lock onto the Oseledets flag. Directions are computed along stored
//! orbits; backward segments are walked from their deep end using the
//! exact inverse, never by re-applying the forward map to recovered
//! points, which would re-amplify rounding at the top rate.

use crate::error::{Error, Result};
use crate::linalg::{dot2, mat2_vec, mat4_vec, norm2, normalize2, scale2, Vec2};
use crate::maps::{Point4, SkewProduct, System};

pub const DEFAULT_BURN_IN: u64 = 100;
pub const DEFAULT_OSELEDETS_HORIZON: u32 = 32;
/// Largest N at which the unstable center field stays far from underflow.
pub const ALPHA_CAP: u32 = 20;
pub const DEFAULT_ALPHA_ITER: u32 = 8;

/// Result of a QR exponent run.
#[derive(Debug, Clone, serde::Serialize)]
pub struct LyapunovReport {
    /// Exponents sorted in descending order.
    pub exponents: Vec<f64>,
    /// Steps that contributed to the averages (after burn-in).
    pub steps: u64,
    pub burn_in: u64,
    pub seed_point: Point4,
    /// Number of re-orthonormalizations performed (one per step here).
    pub renormalizations: u64,
}

impl LyapunovReport {
    /// Sum of all exponents; zero for volume-preserving cocycles up to
    /// rounding.
    pub fn sum(&self) -> f64 {
        self.exponents.iter().sum()
    }
}

/// Exponents of the derivative cocycle restricted to the (x, y) plane.
pub fn center_exponents(sys: &System, m: Point4, n: u64, burn_in: u64) -> Result<LyapunovReport> {
    if n == 0 {
        return Err(Error::InvalidParameter(
            "exponent run needs at least one step".into(),
        ));
    }
    // A fixed frame away from the coordinate axes; axis vectors can be
    // eigendirections at symmetric points.
    let s = std::f64::consts::FRAC_1_SQRT_2;
    let mut q = [[s, s], [s, -s]];
    let mut sums = [0.0f64; 2];
    let mut p = m;
    let mut renorms = 0u64;
    for step in 0..(burn_in + n) {
        let d = sys.df_center(p)?;
        let v0 = mat2_vec(&d, q[0]);
        let v1 = mat2_vec(&d, q[1]);
        let r00 = norm2(v0);
        if !(r00 > 0.0) || !r00.is_finite() {
            return Err(Error::DegenerateFrame {
                steps: step as usize,
            });
        }
        q[0] = scale2(v0, 1.0 / r00);
        let r01 = dot2(q[0], v1);
        let w = [v1[0] - r01 * q[0][0], v1[1] - r01 * q[0][1]];
        let r11 = norm2(w);
        if !(r11 > 0.0) || !r11.is_finite() {
            return Err(Error::DegenerateFrame {
                steps: step as usize,
            });
        }
        q[1] = scale2(w, 1.0 / r11);
        renorms += 1;
        if step >= burn_in {
            sums[0] += r00.ln();
            sums[1] += r11.ln();
        }
        p = sys.apply(p)?;
    }
    let mut exps = vec![sums[0] / n as f64, sums[1] / n as f64];
    exps.sort_by(|a, b| b.partial_cmp(a).unwrap());
    Ok(LyapunovReport {
        exponents: exps,
        steps: n,
        burn_in,
        seed_point: m,
        renormalizations: renorms,
    })
}

/// All four exponents of the full derivative cocycle.
pub fn full_exponents(
    f: &SkewProduct,
    m: Point4,
    n: u64,
    burn_in: u64,
) -> Result<LyapunovReport> {
    if n == 0 {
        return Err(Error::InvalidParameter(
            "exponent run needs at least one step".into(),
        ));
    }
    // Hadamard frame: orthonormal and transversal to both the center
    // plane and the fiber plane, unlike the standard basis.
    let h = 0.5f64;
    let mut q: [[f64; 4]; 4] = [
        [h, h, h, h],
        [h, -h, h, -h],
        [h, h, -h, -h],
        [h, -h, -h, h],
    ];
    let mut sums = [0.0f64; 4];
    let mut p = m;
    let mut renorms = 0u64;
    for step in 0..(burn_in + n) {
        let d = f.df_full(p)?;
        let mut v: [[f64; 4]; 4] = [[0.0; 4]; 4];
        for i in 0..4 {
            v[i] = mat4_vec(&d, q[i]);
        }
        for i in 0..4 {
            for j in 0..i {
                let proj: f64 = (0..4).map(|k| q[j][k] * v[i][k]).sum();
                for k in 0..4 {
                    v[i][k] -= proj * q[j][k];
                }
            }
            let r: f64 = (0..4).map(|k| v[i][k] * v[i][k]).sum::<f64>().sqrt();
            if !(r > 0.0) || !r.is_finite() {
                return Err(Error::DegenerateFrame {
                    steps: step as usize,
                });
            }
            for k in 0..4 {
                q[i][k] = v[i][k] / r;
            }
            if step >= burn_in {
                sums[i] += r.ln();
            }
        }
        renorms += 1;
        p = f.apply(p)?;
    }
    let mut exps: Vec<f64> = sums.iter().map(|s| s / n as f64).collect();
    exps.sort_by(|a, b| b.partial_cmp(a).unwrap());
    Ok(LyapunovReport {
        exponents: exps,
        steps: n,
        burn_in,
        seed_point: m,
        renormalizations: renorms,
    })
}

/// Estimated expanding and contracting directions of the center cocycle
/// at a point, with a self-consistency flag from comparing two horizons.
#[derive(Debug, Clone, Copy, serde::Serialize)]
pub struct OseledetsFrame {
    pub e_plus: Vec2,
    pub e_minus: Vec2,
    pub plus_converged: bool,
    pub minus_converged: bool,
    /// Angle between the full-horizon and half-horizon estimates.
    pub plus_angle_delta: f64,
    pub minus_angle_delta: f64,
}

const OSELEDETS_ANGLE_TOL: f64 = 1e-6;

/// Estimates the Oseledets directions of the center cocycle at `m`.
/// The expanding direction is the pushforward of a generic vector from
/// `n_back` steps in the past; the contracting one is the pullback of a
/// generic vector from `n_fwd` steps in the future. Weak convergence is
/// reported through the flags, not as an error: near the vanishing-twist
/// strips the two directions genuinely approach each other.
pub fn oseledets_directions(
    f: &SkewProduct,
    m: Point4,
    n_back: u32,
    n_fwd: u32,
) -> Result<OseledetsFrame> {
    if n_back == 0 || n_fwd == 0 {
        return Err(Error::InvalidParameter(
            "oseledets horizons must be positive".into(),
        ));
    }
    let mut back = Vec::with_capacity(n_back as usize + 1);
    back.push(m);
    for j in 0..n_back {
        let prev = *back.last().unwrap();
        back.push(f.inverse(prev)?);
        let _ = j;
    }
    let e_plus_full = push_forward(f, &back, n_back)?;
    let e_plus_half = push_forward(f, &back, n_back.div_ceil(2))?;
    let plus_angle_delta = line_angle(e_plus_full, e_plus_half);

    let mut fwd = Vec::with_capacity(n_fwd as usize + 1);
    fwd.push(m);
    for _ in 0..n_fwd {
        let prev = *fwd.last().unwrap();
        fwd.push(f.apply(prev)?);
    }
    let e_minus_full = pull_back(f, &fwd, n_fwd)?;
    let e_minus_half = pull_back(f, &fwd, n_fwd.div_ceil(2))?;
    let minus_angle_delta = line_angle(e_minus_full, e_minus_half);

    Ok(OseledetsFrame {
        e_plus: orient(e_plus_full),
        e_minus: orient(e_minus_full),
        plus_converged: plus_angle_delta <= OSELEDETS_ANGLE_TOL,
        minus_converged: minus_angle_delta <= OSELEDETS_ANGLE_TOL,
        plus_angle_delta,
        minus_angle_delta,
    })
}

/// Pushes a generic seed from backward-orbit depth `depth` up to the base
/// point, normalizing each step.
fn push_forward(f: &SkewProduct, back: &[Point4], depth: u32) -> Result<Vec2> {
    let s = std::f64::consts::FRAC_1_SQRT_2;
    let mut v = [s, s];
    for j in (1..=depth as usize).rev() {
        v = normalize2(mat2_vec(&f.df_center(back[j])?, v))?;
    }
    Ok(v)
}

/// Pulls a generic seed from forward-orbit depth `depth` back to the base
/// point, normalizing each step.
fn pull_back(f: &SkewProduct, fwd: &[Point4], depth: u32) -> Result<Vec2> {
    let s = std::f64::consts::FRAC_1_SQRT_2;
    let mut v = [s, -s];
    for j in (1..=depth as usize).rev() {
        v = normalize2(mat2_vec(&f.df_center_inverse(fwd[j - 1])?, v))?;
    }
    Ok(v)
}

fn line_angle(a: Vec2, b: Vec2) -> f64 {
    dot2(a, b).abs().min(1.0).acos()
}

fn orient(v: Vec2) -> Vec2 {
    if v[0] < 0.0 || (v[0] == 0.0 && v[1] < 0.0) {
        [-v[0], -v[1]]
    } else {
        v
    }
}

/// Center pair of the strong-unstable direction at `m`, normalized so the
/// fiber pair equals e^u. Magnitude is of order lambda^N; the cap keeps
/// the computation away from the single-precision-like regime where the
/// bound lambda^{2N} is below rounding noise.
pub fn alpha_field(f: &SkewProduct, m: Point4, n_iter: u32) -> Result<Vec2> {
    if f.is_perturbed() {
        return Err(Error::InvalidParameter(
            "the unstable center field is defined for the unperturbed map".into(),
        ));
    }
    if f.n() > ALPHA_CAP {
        return Err(Error::AlphaUnderflow {
            n: f.n(),
            cap: ALPHA_CAP,
        });
    }
    if n_iter == 0 {
        return Err(Error::InvalidParameter(
            "alpha needs at least one pushforward".into(),
        ));
    }
    let mut back = Vec::with_capacity(n_iter as usize + 1);
    back.push(m);
    for _ in 0..n_iter {
        let prev = *back.last().unwrap();
        back.push(f.inverse(prev)?);
    }
    let eu = f.hyperbolic().e_u;
    let mu2n = f.hyperbolic().mu.powi(2 * f.n() as i32);
    let mut v = [0.0, 0.0, eu[0], eu[1]];
    for j in (1..=n_iter as usize).rev() {
        v = mat4_vec(&f.df_full(back[j])?, v);
        for entry in v.iter_mut() {
            *entry /= mu2n;
        }
    }
    // Rescale so the fiber pair is exactly e^u.
    let c = v[2] * eu[0] + v[3] * eu[1];
    if !c.is_finite() || c.abs() < 1e-280 {
        return Err(Error::AlphaUnderflow {
            n: f.n(),
            cap: ALPHA_CAP,
        });
    }
    Ok([v[0] / c, v[1] / c])
}
