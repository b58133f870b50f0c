//! Hyperbolic-time (Pliss) extraction, set-membership proxies for the
//! contraction sets, and the closed-form density identity.

use crate::error::{Error, Result};
use crate::linalg::{mat2_vec, norm2};
use crate::lyapunov::DEFAULT_OSELEDETS_HORIZON;
use crate::maps::{Point4, SkewProduct};
use rand::Rng;

/// Slope parameters for Pliss-time extraction, in nats per iterate.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct PlissParams {
    pub eps: f64,
    pub alpha1: f64,
    pub alpha2: f64,
}

impl PlissParams {
    pub fn new(eps: f64, alpha1: f64, alpha2: f64) -> Result<Self> {
        if !(eps > 0.0) || !eps.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "eps must be positive, got {eps}"
            )));
        }
        if !(alpha1 < alpha2) || !alpha1.is_finite() || !alpha2.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "need alpha1 < alpha2, got {alpha1} >= {alpha2}"
            )));
        }
        Ok(Self { eps, alpha1, alpha2 })
    }

    /// The scheme used by the contraction-set analysis: eps = (log N)/6,
    /// alpha1 = -log N - log 2, alpha2 = -(1 - delta) log N.
    pub fn derive(n: u32, delta: f64) -> Result<Self> {
        if n < 2 {
            return Err(Error::InvalidParameter("derived slopes need N >= 2".into()));
        }
        if !(delta > 0.0 && delta < 1.0) {
            return Err(Error::InvalidParameter(format!(
                "delta must lie in (0,1), got {delta}"
            )));
        }
        let ln_n = (n as f64).ln();
        Self::new(
            ln_n / 6.0,
            -ln_n - std::f64::consts::LN_2,
            -(1.0 - delta) * ln_n,
        )
    }
}

/// Output of `pliss_times`.
#[derive(Debug, Clone, serde::Serialize)]
pub struct PlissReport {
    /// Indices k such that every forward average within the window is at
    /// most alpha2 + eps; sorted ascending.
    pub times: Vec<usize>,
    pub horizon: usize,
    /// Fraction of Pliss indices among the first horizon - ceil(horizon/10)
    /// slots; the trailing slots are excluded because their constraint set
    /// is short and accepts too easily.
    pub density: f64,
    /// Plain fraction over the whole window, the quantity the density
    /// lemma bounds from below.
    pub raw_density: f64,
    /// Theoretical lower bound eps / (alpha2 + eps - alpha1).
    pub bound: f64,
    pub window_average: f64,
    /// Whether the window average is at most alpha2; the lower bound is
    /// only meaningful when it is.
    pub average_compatible: bool,
}

/// Finds every index k in [0, horizon) such that for all n with
/// k < n <= horizon: (a_k + ... + a_{n-1})/(n - k) <= alpha2 + eps.
///
/// Linear-time scan from the right: with b_i = a_i - (alpha2 + eps),
/// maxsum_k = b_k + max(0, maxsum_{k+1}) is the largest forward partial
/// sum starting at k, and k qualifies iff maxsum_k <= 0.
pub fn pliss_times(seq: &[f64], params: &PlissParams, horizon: usize) -> Result<PlissReport> {
    if horizon > seq.len() {
        return Err(Error::InvalidParameter(format!(
            "horizon {horizon} exceeds sequence length {}",
            seq.len()
        )));
    }
    let window = &seq[..horizon];
    for (index, &value) in window.iter().enumerate() {
        if !value.is_finite() {
            return Err(Error::NonFinite("pliss_times"));
        }
        if value <= params.alpha1 {
            return Err(Error::PlissPrecondition {
                index,
                value,
                alpha1: params.alpha1,
            });
        }
    }
    let slope = params.alpha2 + params.eps;
    let mut times = Vec::new();
    let mut maxsum = f64::NEG_INFINITY;
    let mut flags = vec![false; horizon];
    for k in (0..horizon).rev() {
        let b = window[k] - slope;
        maxsum = b + maxsum.max(0.0);
        if maxsum <= 0.0 {
            flags[k] = true;
        }
    }
    for (k, &flag) in flags.iter().enumerate() {
        if flag {
            times.push(k);
        }
    }
    let window_average = if horizon == 0 {
        0.0
    } else {
        window.iter().sum::<f64>() / horizon as f64
    };
    let edge = horizon.div_ceil(10);
    let interior = horizon - edge;
    let interior_count = times.iter().filter(|&&k| k < interior).count();
    let density = if interior == 0 {
        0.0
    } else {
        interior_count as f64 / interior as f64
    };
    let raw_density = if horizon == 0 {
        0.0
    } else {
        times.len() as f64 / horizon as f64
    };
    Ok(PlissReport {
        times,
        horizon,
        density,
        raw_density,
        bound: params.eps / (params.alpha2 + params.eps - params.alpha1),
        window_average,
        average_compatible: horizon == 0 || window_average <= params.alpha2,
    })
}

/// Brute-force reference: checks the defining inequality for every (k, n)
/// pair. Quadratic; used by tests as the oracle for `pliss_times`.
pub fn pliss_times_brute(seq: &[f64], params: &PlissParams, horizon: usize) -> Vec<usize> {
    let slope = params.alpha2 + params.eps;
    let mut out = Vec::new();
    'outer: for k in 0..horizon.min(seq.len()) {
        let mut sum = 0.0;
        for n in (k + 1)..=horizon.min(seq.len()) {
            sum += seq[n - 1];
            if sum / (n - k) as f64 > slope {
                continue 'outer;
            }
        }
        out.push(k);
    }
    out
}

/// Configuration of the finite-horizon contraction-set proxies.
#[derive(Debug, Clone, Copy, serde::Serialize)]
pub struct SetProxyConfig {
    pub n: u32,
    pub delta: f64,
    pub horizon: u32,
    /// Log of the per-step contraction threshold: -(4/5) log N.
    pub log_threshold: f64,
    /// Window radius for the intersection set: floor((1+7 delta)/(28 delta)).
    pub t_window: i64,
}

pub const DEFAULT_PROXY_HORIZON: u32 = 64;

impl SetProxyConfig {
    pub fn new(n: u32, delta: f64, horizon: u32) -> Result<Self> {
        if n < 2 {
            return Err(Error::InvalidParameter("proxy needs N >= 2".into()));
        }
        if !(delta > 0.0 && delta < 1.0) {
            return Err(Error::InvalidParameter(format!(
                "delta must lie in (0,1), got {delta}"
            )));
        }
        Ok(Self {
            n,
            delta,
            horizon,
            log_threshold: -0.8 * (n as f64).ln(),
            t_window: ((1.0 + 7.0 * delta) / (28.0 * delta)).floor() as i64,
        })
    }

    /// Measure target for the intersection test: (1-7 delta)/(1+7 delta).
    pub fn measure_target(&self) -> f64 {
        (1.0 - 7.0 * self.delta) / (1.0 + 7.0 * self.delta)
    }
}

/// Membership flags of the contraction-set proxies at one point.
#[derive(Debug, Clone, Copy, serde::Serialize)]
pub struct ZFlags {
    pub z_minus: bool,
    pub z_plus: bool,
    pub z: bool,
    /// Earliest step at which a proxy inequality failed, if any.
    pub first_failure_n: Option<u32>,
}

/// Tests the finite-horizon contraction proxies at `m`:
/// backward set: |Df^n(m) restricted to E^-| < N^{-4n/5} for 1 <= n <= horizon,
/// forward set: the mirrored inequality along E^+ under the inverse map,
/// and the two-sided flag z^-(f^{-1} m) AND z^+(f m).
pub fn z_membership(f: &SkewProduct, m: Point4, proxy: &SetProxyConfig) -> Result<ZFlags> {
    let (zm, fm) = z_minus_proxy(f, m, proxy)?;
    let (zp, fp) = z_plus_proxy(f, m, proxy)?;
    let (z_at_prev, _) = z_minus_proxy(f, f.inverse(m)?, proxy)?;
    let (z_at_next, _) = z_plus_proxy(f, f.apply(m)?, proxy)?;
    let first_failure_n = match (fm, fp) {
        (Some(a), Some(b)) => Some(a.min(b)),
        (Some(a), None) => Some(a),
        (None, Some(b)) => Some(b),
        (None, None) => None,
    };
    Ok(ZFlags {
        z_minus: zm,
        z_plus: zp,
        z: z_at_prev && z_at_next,
        first_failure_n,
    })
}

/// Forward contraction factors along E^- cannot be read off by pushing an
/// E^- estimate forward: any unstable contamination grows like the gap
/// ratio per step and drowns the signal within a few iterates. Instead,
/// walk the forward orbit once, pull a generic vector back from a margin
/// beyond the horizon (the pullback flow converges onto E^- and stays
/// there), and use that the forward factor at each point is the
/// reciprocal of the recorded pullback factor.
fn z_minus_proxy(
    f: &SkewProduct,
    m: Point4,
    proxy: &SetProxyConfig,
) -> Result<(bool, Option<u32>)> {
    let depth = proxy.horizon as usize + DEFAULT_OSELEDETS_HORIZON as usize;
    let mut orbit = Vec::with_capacity(depth + 1);
    orbit.push(m);
    for _ in 0..depth {
        let prev = *orbit.last().unwrap();
        orbit.push(f.apply(prev)?);
    }
    let s = std::f64::consts::FRAC_1_SQRT_2;
    let mut v = [s, -s];
    // log of |Df(q_j) e^-(q_j)| for j = 0..horizon.
    let mut step_logs = vec![0.0f64; proxy.horizon as usize];
    for j in (0..depth).rev() {
        v = mat2_vec(&f.df_center_inverse(orbit[j])?, v);
        let r = norm2(v);
        if !(r > 0.0) || !r.is_finite() {
            return Err(Error::DegenerateFrame { steps: j });
        }
        v = [v[0] / r, v[1] / r];
        if j < proxy.horizon as usize {
            step_logs[j] = -r.ln();
        }
    }
    check_partial_sums(&step_logs, proxy.log_threshold)
}

/// Mirror of `z_minus_proxy` for the inverse map: expansion along E^+ is
/// read from the forward pullback over the backward orbit.
fn z_plus_proxy(
    f: &SkewProduct,
    m: Point4,
    proxy: &SetProxyConfig,
) -> Result<(bool, Option<u32>)> {
    let depth = proxy.horizon as usize + DEFAULT_OSELEDETS_HORIZON as usize;
    let mut orbit = Vec::with_capacity(depth + 1);
    orbit.push(m);
    for _ in 0..depth {
        let prev = *orbit.last().unwrap();
        orbit.push(f.inverse(prev)?);
    }
    let s = std::f64::consts::FRAC_1_SQRT_2;
    let mut v = [s, s];
    let mut step_logs = vec![0.0f64; proxy.horizon as usize];
    for j in (0..depth).rev() {
        // Df at orbit[j+1] maps its tangent space to the one at orbit[j].
        v = mat2_vec(&f.df_center(orbit[j + 1])?, v);
        let r = norm2(v);
        if !(r > 0.0) || !r.is_finite() {
            return Err(Error::DegenerateFrame { steps: j });
        }
        v = [v[0] / r, v[1] / r];
        if j < proxy.horizon as usize {
            step_logs[j] = -r.ln();
        }
    }
    check_partial_sums(&step_logs, proxy.log_threshold)
}

fn check_partial_sums(step_logs: &[f64], log_threshold: f64) -> Result<(bool, Option<u32>)> {
    let mut acc = 0.0f64;
    for (idx, &l) in step_logs.iter().enumerate() {
        let n = (idx + 1) as u32;
        acc += l;
        if acc >= n as f64 * log_threshold {
            return Ok((false, Some(n)));
        }
    }
    Ok((true, None))
}

/// Per-sample record of a measure estimate run.
#[derive(Debug, Clone, Copy, serde::Serialize)]
pub struct SampleMembership {
    pub sample_index: u64,
    pub point: Point4,
    pub z_minus: bool,
    pub z_plus: bool,
    pub z: bool,
    pub x: bool,
    pub first_failure_n: Option<u32>,
}

#[derive(Debug, Clone, serde::Serialize)]
pub struct SetMeasures {
    pub z_fraction: f64,
    pub x_fraction: f64,
    pub target: f64,
    pub sample_count: u64,
    pub horizon: u32,
    pub t_window: i64,
    #[serde(skip)]
    pub rows: Vec<SampleMembership>,
}

/// Monte-Carlo fractions of uniform points passing the Z proxy and the
/// windowed intersection X = all shifts f^{-k}(m), |k| < T, in Z.
pub fn estimate_set_measures(
    f: &SkewProduct,
    proxy: &SetProxyConfig,
    sample_count: u64,
    rng_seed: u64,
) -> Result<SetMeasures> {
    use rayon::prelude::*;
    if sample_count == 0 {
        return Err(Error::InvalidParameter("sample_count must be >= 1".into()));
    }
    let rows: Result<Vec<SampleMembership>> = (0..sample_count)
        .into_par_iter()
        .map(|i| {
            let mut rng = crate::runner::stream_rng(rng_seed, 1, i);
            let m = random_point4(&mut rng);
            let flags = z_membership(f, m, proxy)?;
            let mut x = flags.z;
            if x {
                // Shift both ways; k = 0 is the flag already computed.
                let mut fwd = m;
                let mut bwd = m;
                for _k in 1..proxy.t_window {
                    fwd = f.apply(fwd)?;
                    bwd = f.inverse(bwd)?;
                    if !z_membership(f, fwd, proxy)?.z || !z_membership(f, bwd, proxy)?.z {
                        x = false;
                        break;
                    }
                }
            }
            Ok(SampleMembership {
                sample_index: i,
                point: m,
                z_minus: flags.z_minus,
                z_plus: flags.z_plus,
                z: flags.z,
                x,
                first_failure_n: flags.first_failure_n,
            })
        })
        .collect();
    let rows = rows?;
    let z_count = rows.iter().filter(|r| r.z).count();
    let x_count = rows.iter().filter(|r| r.x).count();
    Ok(SetMeasures {
        z_fraction: z_count as f64 / sample_count as f64,
        x_fraction: x_count as f64 / sample_count as f64,
        target: proxy.measure_target(),
        sample_count,
        horizon: proxy.horizon,
        t_window: proxy.t_window,
        rows,
    })
}

pub fn random_point4<R: Rng>(rng: &mut R) -> Point4 {
    [
        rng.random::<f64>() * crate::torus::TAU,
        rng.random::<f64>() * crate::torus::TAU,
        rng.random::<f64>() * crate::torus::TAU,
        rng.random::<f64>() * crate::torus::TAU,
    ]
}

/// Both closed forms of the Pliss-density bound under the derived slopes,
/// plus the floor 1/(1+7 delta) and the threshold above which the floor
/// holds.
#[derive(Debug, Clone, Copy, serde::Serialize)]
pub struct DensityIdentity {
    /// eps / (alpha2 + eps - alpha1) with the derived slopes.
    pub lhs: f64,
    /// 1 / ((1 + 6 delta) + 6 log 2 / log N).
    pub middle: f64,
    /// 1 / (1 + 7 delta).
    pub floor: f64,
    /// Whether lhs >= floor at this N.
    pub above_floor: bool,
    /// log10 of the smallest N for which the floor holds: (6/delta) log10 2.
    pub n_star_log10: f64,
}

pub fn pliss_density_identity(n: u32, delta: f64) -> Result<DensityIdentity> {
    let params = PlissParams::derive(n, delta)?;
    let lhs = params.eps / (params.alpha2 + params.eps - params.alpha1);
    let ln_n = (n as f64).ln();
    let middle = 1.0 / ((1.0 + 6.0 * delta) + 6.0 * std::f64::consts::LN_2 / ln_n);
    let floor = 1.0 / (1.0 + 7.0 * delta);
    Ok(DensityIdentity {
        lhs,
        middle,
        floor,
        above_floor: lhs >= floor,
        n_star_log10: (6.0 / delta) * std::f64::consts::LOG10_2,
    })
}
