//! Unstable curves, adapted center fields, expansion integrals, the
//! decomposition of n-step integrals over curve pieces, the good/bad
//! piece census, and bounded distortion of unstable Jacobians.
//!
//! Curves live on unstable leaves and are reconstructed through exact
//! leaf states: a lattice anchor plus a real offset along e^u. Walking a
//! straight fiber segment forward from a backward-orbit anchor converges
//! onto the leaf at rate (2N lambda^{2N})^depth, so every node is an
//! independent short computation and levels parallelize freely.

use crate::error::{Error, Result};
use crate::linalg::{mat2_vec, norm2, normalize2, Vec2, Vec4};
use crate::lyapunov::{alpha_field, ALPHA_CAP};
use crate::maps::{LeafTangent, Point4, SkewProduct};
use crate::runner::stream_rng;
use crate::scales::Scales;
use crate::torus::TAU;
use rand::Rng;
use rayon::prelude::*;

pub const DEFAULT_PIECE_CAP: u64 = 1_000_000;
pub const DEFAULT_CURVE_NODES: usize = 257;
pub const DEFAULT_PIECE_NODES: usize = 17;
const QUAD_REL_TOL: f64 = 1e-4;
const QUAD_MAX_LEVELS: u32 = 17;

/// Parametrization convention of a curve.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum CurveMode {
    /// Fiber arc parametrization: the tangent is (alpha, e^u) scaled by
    /// 1 / (lambda^N |P_x e^u|), so the fiber displacement is exactly
    /// linear in t and images scale t by exactly mu^{2N}.
    Fibered,
    /// Unit x-speed parametrization; pieces are cut where the
    /// accumulated x-length crosses multiples of 2 pi.
    General,
}

#[derive(Debug, Clone, Copy)]
pub struct CurveSample {
    pub t: f64,
    pub point: Point4,
    pub tangent: Vec4,
}

#[derive(Debug, Clone)]
pub struct UCurve {
    pub mode: CurveMode,
    pub n: u32,
    pub seed: Point4,
    pub samples: Vec<CurveSample>,
    pub x_length: f64,
    /// True when fibered-exact tangents (via the alpha field) were
    /// requested but unavailable, and pushforward directions were used.
    pub fallback_used: bool,
}

/// A unit center field along a curve.
#[derive(Debug, Clone)]
pub enum AdaptedField {
    Constant(Vec2),
    Sampled { ts: Vec<f64>, values: Vec<Vec2> },
}

impl AdaptedField {
    pub fn constant(v: Vec2) -> Result<Self> {
        Ok(AdaptedField::Constant(normalize2(v)?))
    }

    pub fn eval(&self, t: f64) -> Vec2 {
        match self {
            AdaptedField::Constant(v) => *v,
            AdaptedField::Sampled { ts, values } => {
                if values.is_empty() {
                    return [1.0, 0.0];
                }
                let i = match ts.binary_search_by(|a| a.partial_cmp(&t).unwrap()) {
                    Ok(i) => return values[i],
                    Err(i) => i,
                };
                if i == 0 {
                    values[0]
                } else if i >= values.len() {
                    values[values.len() - 1]
                } else {
                    let w = (t - ts[i - 1]) / (ts[i] - ts[i - 1]);
                    let a = values[i - 1];
                    let b = values[i];
                    let v = [a[0] + w * (b[0] - a[0]), a[1] + w * (b[1] - a[1])];
                    normalize2(v).unwrap_or(b)
                }
            }
        }
    }
}

/// Membership of a center vector in the admissible cone
/// N^{delta_tilde} |u| >= |v|.
pub fn in_admissible(v: Vec2, n: u32, delta_tilde: f64) -> bool {
    (n as f64).powf(delta_tilde) * v[0].abs() >= v[1].abs()
}

#[derive(Debug, Clone, serde::Serialize)]
pub struct FieldStats {
    pub holder_c: f64,
    pub holder_exponent: f64,
    /// 20 N^2 lambda^N; underflows to zero for N around 37 and beyond,
    /// where the flag below is necessarily false.
    pub bound: f64,
    pub adapted: bool,
}

/// Estimated Holder data of field values along a polyline; a lower bound
/// of the true constant, as only sample pairs enter.
pub fn field_stats(ts: &[f64], values: &[Vec2], n: u32) -> FieldStats {
    let mut c: f64 = 0.0;
    for i in 0..values.len() {
        for j in (i + 1)..values.len() {
            let d = (ts[j] - ts[i]).abs();
            if d > 0.0 {
                let dv = norm2([values[j][0] - values[i][0], values[j][1] - values[i][1]]);
                c = c.max(dv / d.sqrt());
            }
        }
    }
    let nf = n as f64;
    let lam = crate::linalg::eigendata(&crate::linalg::IntMat2::cat())
        .map(|e| e.lambda)
        .unwrap_or(0.0);
    let bound = 20.0 * nf * nf * lam.powi(n as i32);
    FieldStats {
        holder_c: c,
        holder_exponent: 0.5,
        bound,
        adapted: c < bound,
    }
}

// ---------------------------------------------------------------------------
// Leaf charts: exact local coordinates on an unstable leaf.

struct LeafChart<'a> {
    f: &'a SkewProduct,
    /// Walk length; the last `k` steps rise above the source level.
    depth: usize,
    k: usize,
    /// Backward orbit of the anchor down to the walk start.
    back: Vec<Point4>,
    /// Offset along e^u at the walk start per unit of top-level
    /// parameter: lambda^{N (2 depth - 1)} / |P_x e^u|.
    off0: f64,
    seed_tangent: LeafTangent,
    lam_n_px: f64,
}

/// Walk length for charts at subdivision level k: enough steps that the
/// straight-segment seeding error (contracted per step by 2N lambda^{2N})
/// falls below f64 resolution, capped so the starting offset stays inside
/// the f64 exponent range.
fn chart_depth(f: &SkewProduct, k: u32) -> Result<usize> {
    let n = f.n() as f64;
    let ln_mu = f.hyperbolic().mu.ln();
    let per_step = 2.0 * n * ln_mu - (2.0 * n).ln();
    if per_step <= 0.0 {
        return Err(Error::InvalidParameter(format!(
            "leaf charts need 2N log mu > log 2N; N = {} is too small for this fiber matrix",
            f.n()
        )));
    }
    let d_conv = (34.0 / per_step).ceil() as usize + 1;
    let d_max = ((640.0 / (n * ln_mu) + 1.0) / 2.0).floor() as usize;
    let d = (d_conv + k as usize).min(d_max);
    if d < k as usize {
        return Err(Error::InvalidParameter(format!(
            "subdivision level {k} exceeds the leaf offset precision budget at N = {} (max level {d_max})",
            f.n()
        )));
    }
    Ok(d)
}

/// Everything a single chart evaluation produces.
struct LeafWalk {
    point: Point4,
    tangent4: Vec4,
    /// d x / d t of the top-level curve in fibered parametrization.
    x_speed: f64,
    /// Points of the last k steps (source-level point first); one-step
    /// center derivatives are taken here for field pushforwards.
    trail: Vec<Point4>,
    /// ln of the x-parametrization Jacobian of the k-step map along the walk.
    log_jx: f64,
    /// ln of the fibered (fiber growth) Jacobian over the last k steps.
    log_js: f64,
    /// ln of the arc (full tangent norm) growth over the last k steps.
    log_g4: f64,
}

impl<'a> LeafChart<'a> {
    fn new(f: &'a SkewProduct, anchor: Point4, k: u32) -> Result<Self> {
        if !f.leaf_supported() {
            return Err(Error::InvalidParameter(
                "curve machinery requires shears that leave the fiber coordinates unchanged"
                    .into(),
            ));
        }
        let depth = chart_depth(f, k)?;
        let anchor_depth = depth - k as usize;
        let mut back = Vec::with_capacity(anchor_depth + 1);
        back.push(crate::maps::wrap4(anchor));
        for j in 0..anchor_depth {
            let prev = back[j];
            back.push(f.inverse(prev)?);
        }
        let eig = f.hyperbolic();
        let n = f.n();
        let lam_n = eig.lambda.powi(n as i32);
        let lam_n_px = lam_n * eig.e_u[0];
        let off0 = eig.lambda.powi(((2 * depth - 1) * n as usize) as i32) / eig.e_u[0];
        let seed_tangent = LeafTangent {
            center: [lam_n * eig.e_u[0], 0.0],
            scale: 1.0,
        }
        .normalized()?;
        Ok(Self {
            f,
            depth,
            k: k as usize,
            back,
            off0,
            seed_tangent,
            lam_n_px,
        })
    }

    /// Evaluates the leaf at top-level parameter `tau` (fibered units,
    /// measured along the level-k image).
    fn eval(&self, tau: f64) -> Result<LeafWalk> {
        let start = &self.back[self.back.len() - 1];
        let mut state = self.f.leaf_from_point(*start)?;
        state.offset = tau * self.off0;
        let mut tg = self.seed_tangent;
        let mut trail = Vec::with_capacity(self.k);
        let mut log_jx = 0.0;
        let mut log_js = 0.0;
        let mut log_g4 = 0.0;
        let record_from = self.depth - self.k;
        for step in 0..self.depth {
            if step >= record_from {
                trail.push(self.f.leaf_materialize(&state));
            }
            let prev_x = tg.center[0].abs();
            let prev_s = tg.scale.abs();
            let (ns, raw) = self.f.leaf_apply_with_tangent(&state, &tg)?;
            if step >= record_from {
                log_jx += raw.center[0].abs().ln() - prev_x.ln();
                log_js += raw.scale.abs().ln() - prev_s.ln();
                log_g4 += raw.norm().ln();
            }
            state = ns;
            tg = raw.normalized()?;
        }
        let point = self.f.leaf_materialize(&state);
        let x_speed = tg.center[0] / (tg.scale * self.lam_n_px);
        Ok(LeafWalk {
            point,
            tangent4: self.f.leaf_tangent4(&tg),
            x_speed,
            trail,
            log_jx,
            log_js,
            log_g4,
        })
    }

    /// Unit pushforward of the initial field along the trail.
    fn push_field(&self, walk: &LeafWalk, field: &AdaptedField, source_t: f64) -> Result<Vec2> {
        let mut v = field.eval(source_t);
        for m in &walk.trail {
            v = mat2_vec(&self.f.df_center(*m)?, v);
            let nrm = norm2(v);
            if nrm == 0.0 || !nrm.is_finite() {
                return Err(Error::ZeroVector);
            }
            v = [v[0] / nrm, v[1] / nrm];
        }
        Ok(v)
    }
}

// ---------------------------------------------------------------------------
// Curve construction.

/// Builds a full curve (top-level x-length 2 pi) through `seed`.
///
/// In fibered mode with the alpha field available (unperturbed map,
/// N <= 20) tangents come from the alpha construction; otherwise the
/// chart's pushforward direction is used and `fallback_used` is set.
pub fn make_ucurve(
    f: &SkewProduct,
    seed: Point4,
    mode: CurveMode,
    node_count: usize,
) -> Result<UCurve> {
    if node_count < 9 {
        return Err(Error::InvalidParameter(
            "a curve needs at least 9 nodes".into(),
        ));
    }
    let chart = LeafChart::new(f, seed, 0)?;
    let want_alpha = mode == CurveMode::Fibered && !f.is_perturbed() && f.n() <= ALPHA_CAP;
    let eig = f.hyperbolic();
    let walks: Result<Vec<(f64, LeafWalk, Option<Vec4>)>> = (0..node_count)
        .into_par_iter()
        .map(|i| {
            let t = TAU * i as f64 / (node_count - 1) as f64;
            let walk = chart.eval(t)?;
            let alpha_tangent = if want_alpha {
                match alpha_field(f, walk.point, crate::lyapunov::DEFAULT_ALPHA_ITER) {
                    Ok(a) => {
                        let v = [a[0], a[1], eig.e_u[0], eig.e_u[1]];
                        Some(crate::linalg::normalize4(v)?)
                    }
                    Err(Error::AlphaUnderflow { .. }) => None,
                    Err(e) => return Err(e),
                }
            } else {
                None
            };
            Ok((t, walk, alpha_tangent))
        })
        .collect();
    let walks = walks?;
    // Fibered-exact tangents are only available through the alpha field;
    // everywhere else the pushforward direction stands in for them.
    let fallback_used = mode == CurveMode::Fibered
        && (!want_alpha || walks.iter().any(|(_, _, a)| a.is_none()));
    let mut samples = Vec::with_capacity(node_count);
    let mut x_length = 0.0;
    let mut prev: Option<(f64, f64)> = None;
    for (t, walk, alpha_tangent) in &walks {
        let tangent = match (fallback_used, alpha_tangent) {
            (false, Some(a)) => *a,
            _ => walk.tangent4,
        };
        if let Some((pt, ps)) = prev {
            x_length += 0.5 * (walk.x_speed.abs() + ps) * (t - pt);
        }
        prev = Some((*t, walk.x_speed.abs()));
        samples.push(CurveSample {
            t: *t,
            point: walk.point,
            tangent,
        });
    }
    let mut curve = UCurve {
        mode,
        n: f.n(),
        seed,
        samples,
        x_length,
        fallback_used,
    };
    if mode == CurveMode::General {
        // Reparametrize nodes to equal x-length spacing; t becomes the
        // accumulated x-length.
        let total = curve.x_length;
        let speeds: Vec<f64> = walks.iter().map(|(_, w, _)| w.x_speed.abs()).collect();
        let mut cumx = vec![0.0];
        for i in 1..walks.len() {
            let dt = walks[i].0 - walks[i - 1].0;
            cumx.push(cumx[i - 1] + 0.5 * (speeds[i] + speeds[i - 1]) * dt);
        }
        let targets: Vec<f64> = (0..node_count)
            .map(|i| total * i as f64 / (node_count - 1) as f64)
            .collect();
        let resampled: Result<Vec<CurveSample>> = targets
            .par_iter()
            .map(|&x| {
                let idx = cumx.partition_point(|&c| c < x).min(cumx.len() - 1).max(1);
                let w = if cumx[idx] > cumx[idx - 1] {
                    (x - cumx[idx - 1]) / (cumx[idx] - cumx[idx - 1])
                } else {
                    0.0
                };
                let t = walks[idx - 1].0 + w * (walks[idx].0 - walks[idx - 1].0);
                let walk = chart.eval(t)?;
                Ok(CurveSample {
                    t: x,
                    point: walk.point,
                    tangent: walk.tangent4,
                })
            })
            .collect();
        curve.samples = resampled?;
        curve.fallback_used = false;
    }
    Ok(curve)
}

// ---------------------------------------------------------------------------
// Pieces and subdivision.

#[derive(Debug, Clone)]
pub struct Piece {
    pub level: u32,
    pub index: u64,
    pub full: bool,
    pub samples: Vec<CurveSample>,
    /// Unit pushforward field at the samples.
    pub field: Vec<Vec2>,
    pub x_length: f64,
    /// Pointwise unstable Jacobian of the k-step backward map over the
    /// samples: fiber-arc normalization for fibered curves, full arc
    /// length for general ones.
    pub j_min: f64,
    pub j_max: f64,
    pub source_span: [f64; 2],
    pub good: Option<bool>,
    pub e_value: Option<f64>,
}

impl Piece {
    pub fn jacobian_ratio(&self) -> f64 {
        if self.j_min > 0.0 {
            self.j_max / self.j_min
        } else {
            f64::INFINITY
        }
    }
}

#[derive(Debug, Clone)]
pub struct Subdivision {
    pub level: u32,
    pub mode: CurveMode,
    pub full_count: u64,
    pub pieces: Vec<Piece>,
    pub remainder: Option<Piece>,
}

/// Number of full pieces of the level-k image of a full fibered curve:
/// floor(mu^{2Nk}).
pub fn fibered_full_count(f: &SkewProduct, k: u32) -> f64 {
    f.hyperbolic().mu.powi((2 * f.n() * k) as i32).floor()
}

fn classify(field: &[Vec2], n: u32, delta_tilde: f64) -> bool {
    field.iter().all(|&v| in_admissible(v, n, delta_tilde))
}

/// Classification of one piece: good iff every sampled field vector lies
/// in the admissible cone.
pub fn classify_field(piece: &Piece, delta_tilde: f64, n: u32) -> bool {
    classify(&piece.field, n, delta_tilde)
}

fn build_fibered_piece(
    f: &SkewProduct,
    chart: &LeafChart,
    k: u32,
    index: u64,
    tau0: f64,
    tau1: f64,
    nodes: usize,
    field: &AdaptedField,
    delta_tilde: f64,
) -> Result<Piece> {
    let lam2nk = f.hyperbolic().lambda.powi((2 * f.n() * k) as i32);
    let mut samples = Vec::with_capacity(nodes);
    let mut values = Vec::with_capacity(nodes);
    let mut j_min = f64::INFINITY;
    let mut j_max = 0.0f64;
    let mut x_length = 0.0;
    let mut prev: Option<(f64, (f64, f64))> = None;
    let mut e_acc = 0.0;
    for i in 0..nodes {
        let sigma = tau0 + (tau1 - tau0) * i as f64 / (nodes - 1) as f64;
        let walk = chart.eval(sigma)?;
        let y = chart.push_field(&walk, field, sigma * lam2nk)?;
        let j = (-walk.log_js).exp();
        j_min = j_min.min(j);
        j_max = j_max.max(j);
        let l = norm2(mat2_vec(&f.df_center(walk.point)?, y)).ln();
        if let Some((ps, pl)) = prev {
            let dt = sigma - ps;
            x_length += 0.5 * (walk.x_speed.abs() + pl.1) * dt;
            e_acc += 0.5 * (l + pl.0) * dt;
        }
        prev = Some((sigma, (l, walk.x_speed.abs())));
        samples.push(CurveSample {
            t: sigma - tau0,
            point: walk.point,
            tangent: walk.tangent4,
        });
        values.push(y);
    }
    let span = tau1 - tau0;
    let good = classify(&values, f.n(), delta_tilde);
    Ok(Piece {
        level: k,
        index,
        full: (span - TAU).abs() < 1e-9,
        samples,
        field: values,
        x_length,
        j_min,
        j_max,
        source_span: [tau0 * lam2nk, tau1 * lam2nk],
        good: Some(good),
        e_value: Some(e_acc / span),
    })
}

/// Exhaustive subdivision of the level-k image of a curve into full
/// pieces plus one remainder. Fibered mode cuts at exact multiples of
/// 2 pi of the image fiber parameter; general mode cuts where the
/// accumulated image x-length crosses multiples of 2 pi.
pub fn iterate_subdivide(
    f: &SkewProduct,
    curve: &UCurve,
    k: u32,
    nodes_per_piece: usize,
    cap: u64,
) -> Result<Subdivision> {
    let nodes = nodes_per_piece.max(5);
    let field = AdaptedField::constant([1.0, 0.0])?;
    match curve.mode {
        CurveMode::Fibered => {
            let full = fibered_full_count(f, k);
            if !(full + 1.0 <= cap as f64) {
                return Err(Error::PieceCapExceeded {
                    needed: full + 1.0,
                    cap,
                });
            }
            let full = full as u64;
            let chart = LeafChart::new(f, curve.seed, k)?;
            let pieces: Result<Vec<Piece>> = (0..full)
                .into_par_iter()
                .map(|j| {
                    build_fibered_piece(
                        f,
                        &chart,
                        k,
                        j,
                        TAU * j as f64,
                        TAU * (j + 1) as f64,
                        nodes,
                        &field,
                        crate::scales::DEFAULT_DELTA_TILDE,
                    )
                })
                .collect();
            let mu2nk = f.hyperbolic().mu.powi((2 * f.n() * k) as i32);
            let rem_end = TAU * mu2nk;
            let rem_start = TAU * full as f64;
            let remainder = if rem_end > rem_start + 1e-12 {
                Some(build_fibered_piece(
                    f,
                    &chart,
                    k,
                    full,
                    rem_start,
                    rem_end,
                    nodes,
                    &field,
                    crate::scales::DEFAULT_DELTA_TILDE,
                )?)
            } else {
                None
            };
            Ok(Subdivision {
                level: k,
                mode: curve.mode,
                full_count: full,
                pieces: pieces?,
                remainder,
            })
        }
        CurveMode::General => general_subdivide(f, curve, k, nodes, cap),
    }
}

/// Fixed-grid sweep of the level-k image in fibered parameter, carrying
/// the cumulative x-length that defines general-mode cuts.
struct GeneralSweep {
    sigmas: Vec<f64>,
    cum_x: Vec<f64>,
    /// Interpolated sigma of each 2 pi crossing of cum_x.
    cuts: Vec<f64>,
}

fn general_sweep(f: &SkewProduct, curve: &UCurve, k: u32, cap: u64) -> Result<GeneralSweep> {
    let mu2nk = f.hyperbolic().mu.powi((2 * f.n() * k) as i32);
    if !(mu2nk <= cap as f64) {
        return Err(Error::PieceCapExceeded {
            needed: mu2nk,
            cap,
        });
    }
    let span = TAU * mu2nk;
    let m = ((mu2nk * 384.0).ceil() as usize).clamp(4096, 40_000_000);
    let chart = LeafChart::new(f, curve.seed, k)?;
    let speeds: Result<Vec<f64>> = (0..=m)
        .into_par_iter()
        .map(|i| Ok(chart.eval(span * i as f64 / m as f64)?.x_speed.abs()))
        .collect();
    let speeds = speeds?;
    let h = span / m as f64;
    let mut cum_x = Vec::with_capacity(m + 1);
    let mut sigmas = Vec::with_capacity(m + 1);
    cum_x.push(0.0);
    sigmas.push(0.0);
    for i in 1..=m {
        cum_x.push(cum_x[i - 1] + 0.5 * (speeds[i] + speeds[i - 1]) * h);
        sigmas.push(h * i as f64);
    }
    let mut cuts = Vec::new();
    let mut target = TAU;
    for i in 1..=m {
        while cum_x[i] >= target {
            let w = (target - cum_x[i - 1]) / (cum_x[i] - cum_x[i - 1]);
            cuts.push(sigmas[i - 1] + w * h);
            target += TAU;
        }
    }
    Ok(GeneralSweep {
        sigmas,
        cum_x,
        cuts,
    })
}

fn x_at(sweep: &GeneralSweep, sigma: f64) -> f64 {
    let h = sweep.sigmas[1];
    let i = ((sigma / h) as usize).min(sweep.sigmas.len() - 2);
    let w = (sigma - sweep.sigmas[i]) / h;
    sweep.cum_x[i] + w * (sweep.cum_x[i + 1] - sweep.cum_x[i])
}

fn sigma_at_x(sweep: &GeneralSweep, x: f64) -> f64 {
    let i = sweep
        .cum_x
        .partition_point(|&c| c < x)
        .clamp(1, sweep.cum_x.len() - 1);
    let w = (x - sweep.cum_x[i - 1]) / (sweep.cum_x[i] - sweep.cum_x[i - 1]).max(1e-300);
    sweep.sigmas[i - 1] + w * (sweep.sigmas[i] - sweep.sigmas[i - 1])
}

fn build_general_piece(
    f: &SkewProduct,
    chart: &LeafChart,
    sweep: &GeneralSweep,
    k: u32,
    index: u64,
    sigma0: f64,
    sigma1: f64,
    nodes: usize,
    field: &AdaptedField,
    delta_tilde: f64,
) -> Result<Piece> {
    let lam2nk = f.hyperbolic().lambda.powi((2 * f.n() * k) as i32);
    let x0 = x_at(sweep, sigma0);
    let x1 = x_at(sweep, sigma1);
    let mut samples = Vec::with_capacity(nodes);
    let mut values = Vec::with_capacity(nodes);
    let mut j_min = f64::INFINITY;
    let mut j_max = 0.0f64;
    let mut e_acc = 0.0;
    let mut prev: Option<(f64, f64)> = None;
    for i in 0..nodes {
        let x = x0 + (x1 - x0) * i as f64 / (nodes - 1) as f64;
        let sigma = sigma_at_x(sweep, x.min(x1));
        let walk = chart.eval(sigma)?;
        let y = chart.push_field(&walk, field, sigma * lam2nk)?;
        let j = (-walk.log_g4).exp();
        j_min = j_min.min(j);
        j_max = j_max.max(j);
        let l = norm2(mat2_vec(&f.df_center(walk.point)?, y)).ln();
        if let Some((px, pl)) = prev {
            e_acc += 0.5 * (l + pl) * (x - px);
        }
        prev = Some((x, l));
        samples.push(CurveSample {
            t: x - x0,
            point: walk.point,
            tangent: walk.tangent4,
        });
        values.push(y);
    }
    let good = classify(&values, f.n(), delta_tilde);
    Ok(Piece {
        level: k,
        index,
        full: (x1 - x0 - TAU).abs() < 1e-6,
        samples,
        field: values,
        x_length: x1 - x0,
        j_min,
        j_max,
        source_span: [sigma0 * lam2nk, sigma1 * lam2nk],
        good: Some(good),
        e_value: Some(e_acc / (x1 - x0)),
    })
}

fn general_subdivide(
    f: &SkewProduct,
    curve: &UCurve,
    k: u32,
    nodes: usize,
    cap: u64,
) -> Result<Subdivision> {
    let sweep = general_sweep(f, curve, k, cap)?;
    let field = AdaptedField::constant([1.0, 0.0])?;
    let span = *sweep.sigmas.last().unwrap();
    let mut bounds = vec![0.0];
    bounds.extend_from_slice(&sweep.cuts);
    let chart = LeafChart::new(f, curve.seed, k)?;
    let pieces: Result<Vec<Piece>> = (1..bounds.len())
        .into_par_iter()
        .map(|j| {
            build_general_piece(
                f,
                &chart,
                &sweep,
                k,
                (j - 1) as u64,
                bounds[j - 1],
                bounds[j],
                nodes,
                &field,
                crate::scales::DEFAULT_DELTA_TILDE,
            )
        })
        .collect();
    let last = *bounds.last().unwrap();
    let remainder = if span > last + 1e-9 {
        Some(build_general_piece(
            f,
            &chart,
            &sweep,
            k,
            sweep.cuts.len() as u64,
            last,
            span,
            nodes,
            &field,
            crate::scales::DEFAULT_DELTA_TILDE,
        )?)
    } else {
        None
    };
    Ok(Subdivision {
        level: k,
        mode: CurveMode::General,
        full_count: sweep.cuts.len() as u64,
        pieces: pieces?,
        remainder,
    })
}

/// Statistical surrogate for subdivision beyond the exhaustive cap:
/// source parameters drawn uniformly, each followed to its containing
/// level-k piece. When the image parameter scale exceeds f64 resolution
/// the within-piece phase is drawn uniformly; the piece ensemble keeps
/// the length-weighted distribution either way.
pub fn sample_pieces(
    f: &SkewProduct,
    curve: &UCurve,
    k: u32,
    count: u64,
    nodes_per_piece: usize,
    field: &AdaptedField,
    delta_tilde: f64,
    rng_seed: u64,
) -> Result<Vec<Piece>> {
    let nodes = nodes_per_piece.max(5);
    let mu2nk = f.hyperbolic().mu.powi((2 * f.n() * k) as i32);
    let exact_phase = mu2nk <= (1u64 << 40) as f64;
    (0..count)
        .into_par_iter()
        .map(|i| {
            let mut rng = stream_rng(rng_seed, 7, i);
            let t = rng.random::<f64>() * TAU;
            let chart0 = LeafChart::new(f, curve.seed, 0)?;
            let mut q = chart0.eval(t)?.point;
            for _ in 0..k {
                q = f.apply(q)?;
            }
            let phase = if exact_phase {
                (t * mu2nk).rem_euclid(TAU)
            } else {
                rng.random::<f64>() * TAU
            };
            let chart = LeafChart::new(f, q, k)?;
            let lam2nk = f.hyperbolic().lambda.powi((2 * f.n() * k) as i32);
            let mut piece = build_sampled_piece(
                f,
                &chart,
                k,
                i,
                -phase,
                TAU - phase,
                nodes,
                field,
                delta_tilde,
                curve.mode,
            )?;
            piece.source_span = [
                t - phase * lam2nk,
                t + (TAU - phase) * lam2nk,
            ];
            Ok(piece)
        })
        .collect()
}

#[allow(clippy::too_many_arguments)]
fn build_sampled_piece(
    f: &SkewProduct,
    chart: &LeafChart,
    k: u32,
    index: u64,
    d0: f64,
    d1: f64,
    nodes: usize,
    field: &AdaptedField,
    delta_tilde: f64,
    mode: CurveMode,
) -> Result<Piece> {
    let mut samples = Vec::with_capacity(nodes);
    let mut values = Vec::with_capacity(nodes);
    let mut j_min = f64::INFINITY;
    let mut j_max = 0.0f64;
    let mut x_length = 0.0;
    let mut e_acc = 0.0;
    let mut prev: Option<(f64, (f64, f64))> = None;
    for i in 0..nodes {
        let d = d0 + (d1 - d0) * i as f64 / (nodes - 1) as f64;
        let walk = chart.eval(d)?;
        let y = chart.push_field(&walk, field, 0.0)?;
        let j = match mode {
            CurveMode::Fibered => (-walk.log_js).exp(),
            CurveMode::General => (-walk.log_g4).exp(),
        };
        j_min = j_min.min(j);
        j_max = j_max.max(j);
        let l = norm2(mat2_vec(&f.df_center(walk.point)?, y)).ln();
        if let Some((pd, (pl, ps))) = prev {
            let dt = d - pd;
            x_length += 0.5 * (walk.x_speed.abs() + ps) * dt;
            e_acc += 0.5 * (l + pl) * dt;
        }
        prev = Some((d, (l, walk.x_speed.abs())));
        samples.push(CurveSample {
            t: d - d0,
            point: walk.point,
            tangent: walk.tangent4,
        });
        values.push(y);
    }
    let good = classify(&values, f.n(), delta_tilde);
    Ok(Piece {
        level: k,
        index,
        full: true,
        samples,
        field: values,
        x_length,
        j_min,
        j_max,
        source_span: [d0, d1],
        good: Some(good),
        e_value: Some(e_acc / (d1 - d0)),
    })
}

// ---------------------------------------------------------------------------
// Quadrature and the expansion integrals.

/// Incremental trapezoid refinement with a relative convergence check.
fn trapezoid_adaptive<F>(
    eval: F,
    a: f64,
    b: f64,
    rel_tol: f64,
    min_levels: u32,
    max_levels: u32,
) -> Result<f64>
where
    F: Fn(f64) -> Result<f64> + Sync,
{
    let mut t = 0.5 * (eval(a)? + eval(b)?) * (b - a);
    let mut n: u64 = 1;
    let mut delta = f64::INFINITY;
    for level in 1..=max_levels {
        let h = (b - a) / n as f64;
        let mids: Result<f64> = (0..n)
            .into_par_iter()
            .map(|i| eval(a + (i as f64 + 0.5) * h))
            .try_reduce(|| 0.0, |x, y| Ok(x + y));
        let t_next = 0.5 * t + 0.5 * h * mids?;
        delta = (t_next - t).abs();
        t = t_next;
        n *= 2;
        if level >= min_levels && delta <= rel_tol * t.abs().max(1e-9) {
            return Ok(t);
        }
    }
    Err(Error::QuadratureDiverged {
        refinements: max_levels,
        delta,
    })
}

/// One-step expansion integral E = (1/|curve|) of log |Df X| along the
/// curve, refined until successive estimates differ by less than 1e-4
/// relative.
pub fn e_integral(f: &SkewProduct, curve: &UCurve, field: &AdaptedField) -> Result<f64> {
    let chart = LeafChart::new(f, curve.seed, 0)?;
    // The chart parameter is always the fiber arc; general mode weighs the
    // integrand by the x-speed so the average is taken in x-measure. Field
    // lookups use the fiber parameter as the key, which for general-mode
    // sampled fields is exact to O(lambda^N); constant fields are exact.
    let general = curve.mode == CurveMode::General;
    let norm = if general { curve.x_length } else { TAU };
    let val = trapezoid_adaptive(
        |t| {
            let walk = chart.eval(t)?;
            let v = field.eval(t);
            let l = norm2(mat2_vec(&f.df_center(walk.point)?, v)).ln();
            Ok(if general { l * walk.x_speed.abs() } else { l })
        },
        0.0,
        TAU,
        QUAD_REL_TOL,
        5,
        QUAD_MAX_LEVELS,
    )?;
    Ok(val / norm)
}

/// n-step integral (1/|curve|) of log |Df^n X| along the curve.
pub fn i_n_direct(f: &SkewProduct, curve: &UCurve, field: &AdaptedField, n_steps: u32) -> Result<f64> {
    if n_steps == 0 {
        return Err(Error::InvalidParameter(
            "the n-step integral needs n >= 1".into(),
        ));
    }
    let chart = LeafChart::new(f, curve.seed, 0)?;
    let general = curve.mode == CurveMode::General;
    let norm = if general { curve.x_length } else { TAU };
    let mu2n = f.hyperbolic().mu.powi(2 * f.n() as i32);
    // The integrand oscillates on the scale of the (n-1)-step image, so
    // refinement must start beyond that frequency.
    let min_levels = ((mu2n.powi(n_steps as i32 - 1) * 4.0).log2().ceil() as u32).clamp(5, 15);
    let val = trapezoid_adaptive(
        |t| {
            let walk = chart.eval(t)?;
            let mut m = walk.point;
            let mut v = field.eval(t);
            let mut acc = 0.0;
            for _ in 0..n_steps {
                v = mat2_vec(&f.df_center(m)?, v);
                let nrm = norm2(v);
                acc += nrm.ln();
                v = [v[0] / nrm, v[1] / nrm];
                m = f.apply(m)?;
            }
            Ok(if general { acc * walk.x_speed.abs() } else { acc })
        },
        0.0,
        TAU,
        QUAD_REL_TOL,
        min_levels,
        QUAD_MAX_LEVELS,
    )?;
    Ok(val / norm)
}

#[derive(Debug, Clone, serde::Serialize)]
pub struct DecompositionTerm {
    pub k: u32,
    pub full_pieces: u64,
    pub full_term: f64,
    pub remainder_term: f64,
    pub remainder_bound: f64,
}

#[derive(Debug, Clone, serde::Serialize)]
pub struct Decomposition {
    pub total: f64,
    pub terms: Vec<DecompositionTerm>,
}

/// Decay bound for the remainder term at level k (valid in both modes;
/// the printed constant uses the fiber eigenvalue data and epsilon_1).
pub fn remainder_bound(f: &SkewProduct, scales: &Scales, k: u32) -> f64 {
    let eig = f.hyperbolic();
    let n = f.n() as f64;
    let lam_n = eig.lambda.powi(f.n() as i32);
    let rate = ((-scales.eps1).exp() * eig.mu).powi(-((2 * f.n() * k) as i32));
    rate * (2.0 * n).ln() / (lam_n * (1.0 - 2.0 * lam_n) * eig.e_u[0])
}

/// Evaluates the per-level decomposition of the n-step integral: each
/// level contributes the Jacobian-weighted piece integrals of the
/// pushforward field plus a remainder from the final partial piece. The
/// change of variables is exact in the curve parameter, so the total
/// reproduces `i_n_direct` up to quadrature error.
pub fn i_n_decomposed(
    f: &SkewProduct,
    curve: &UCurve,
    field: &AdaptedField,
    n_steps: u32,
    scales: &Scales,
    cap: u64,
) -> Result<Decomposition> {
    if n_steps == 0 {
        return Err(Error::InvalidParameter(
            "the n-step integral needs n >= 1".into(),
        ));
    }
    let mut terms = Vec::new();
    let mut total = 0.0;
    for k in 0..n_steps {
        let term = match curve.mode {
            CurveMode::Fibered => decomposed_level_fibered(f, curve, field, k, scales, cap)?,
            CurveMode::General => decomposed_level_general(f, curve, field, k, scales, cap)?,
        };
        total += term.full_term + term.remainder_term;
        terms.push(term);
    }
    Ok(Decomposition { total, terms })
}

fn decomposed_level_fibered(
    f: &SkewProduct,
    curve: &UCurve,
    field: &AdaptedField,
    k: u32,
    scales: &Scales,
    cap: u64,
) -> Result<DecompositionTerm> {
    let full = fibered_full_count(f, k);
    if !(full + 1.0 <= cap as f64) {
        return Err(Error::PieceCapExceeded {
            needed: full + 1.0,
            cap,
        });
    }
    let full = full as u64;
    let lam2nk = f.hyperbolic().lambda.powi((2 * f.n() * k) as i32);
    let mu2nk = 1.0 / lam2nk;
    let chart = LeafChart::new(f, curve.seed, k)?;
    let chart = &chart;
    let piece_integral = move |tau0: f64, tau1: f64| -> Result<f64> {
        trapezoid_adaptive(
            |sigma| {
                let walk = chart.eval(sigma)?;
                let y = chart.push_field(&walk, field, sigma * lam2nk)?;
                Ok(norm2(mat2_vec(&f.df_center(walk.point)?, y)).ln())
            },
            tau0,
            tau1,
            QUAD_REL_TOL,
            5,
            QUAD_MAX_LEVELS,
        )
    };
    let sum: Result<f64> = (0..full)
        .into_par_iter()
        .map(|j| piece_integral(TAU * j as f64, TAU * (j + 1) as f64))
        .try_reduce(|| 0.0, |a, b| Ok(a + b));
    let full_term = lam2nk / TAU * sum?;
    let rem_start = TAU * full as f64;
    let rem_end = TAU * mu2nk;
    let remainder_term = if rem_end > rem_start + 1e-12 {
        lam2nk / TAU * piece_integral(rem_start, rem_end)?
    } else {
        0.0
    };
    Ok(DecompositionTerm {
        k,
        full_pieces: full,
        full_term,
        remainder_term,
        remainder_bound: remainder_bound(f, scales, k),
    })
}

fn decomposed_level_general(
    f: &SkewProduct,
    curve: &UCurve,
    field: &AdaptedField,
    k: u32,
    scales: &Scales,
    cap: u64,
) -> Result<DecompositionTerm> {
    let sweep = general_sweep(f, curve, k, cap)?;
    let lam2nk = f.hyperbolic().lambda.powi((2 * f.n() * k) as i32);
    let chart = LeafChart::new(f, curve.seed, k)?;
    // Integrand of the image-side integral: log-growth of the pushforward
    // field times the backward Jacobian, in image x-measure; evaluated on
    // the same grid that defines the cuts so the level sums reorganize the
    // direct integral exactly.
    let m = sweep.sigmas.len() - 1;
    let vals: Result<Vec<f64>> = (0..=m)
        .into_par_iter()
        .map(|i| {
            let sigma = sweep.sigmas[i];
            let walk = chart.eval(sigma)?;
            let y = chart.push_field(&walk, field, sigma * lam2nk)?;
            let l = norm2(mat2_vec(&f.df_center(walk.point)?, y)).ln();
            Ok(l * (-walk.log_jx).exp() * walk.x_speed.abs())
        })
        .collect();
    let vals = vals?;
    let h = sweep.sigmas[1];
    let x_len = curve.x_length;
    let mut cell_sums = vec![0.0f64; m];
    for i in 0..m {
        cell_sums[i] = 0.5 * (vals[i] + vals[i + 1]) * h;
    }
    // Split the trapezoid mass at the cut points.
    let mut piece_sums = vec![0.0f64; sweep.cuts.len() + 1];
    let mut cut_iter = sweep.cuts.iter().peekable();
    let mut piece = 0usize;
    for i in 0..m {
        let s0 = sweep.sigmas[i];
        let s1 = sweep.sigmas[i + 1];
        let mut lo = s0;
        while let Some(&&c) = cut_iter.peek() {
            if c <= s1 {
                piece_sums[piece] += cell_sums[i] * (c - lo) / h;
                lo = c;
                piece += 1;
                cut_iter.next();
            } else {
                break;
            }
        }
        piece_sums[piece] += cell_sums[i] * (s1 - lo) / h;
    }
    let full = sweep.cuts.len() as u64;
    let full_term: f64 = piece_sums[..full as usize].iter().sum::<f64>() / x_len;
    let remainder_term = piece_sums[full as usize] / x_len;
    Ok(DecompositionTerm {
        k,
        full_pieces: full,
        full_term,
        remainder_term,
        remainder_bound: remainder_bound(f, scales, k),
    })
}

// ---------------------------------------------------------------------------
// Census and distortion.

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum CensusMode {
    Exhaustive,
    Sampled(u64),
}

#[derive(Debug, Clone, serde::Serialize)]
pub struct PieceCensus {
    pub k: u32,
    pub mode: String,
    pub pieces: u64,
    pub good: u64,
    pub bad: u64,
    pub good_fraction: f64,
    pub min_j: f64,
    pub max_j: f64,
    pub sum_min_j_good: f64,
    pub sum_max_j_bad: f64,
    pub min_good_e: Option<f64>,
    pub max_abs_e: f64,
    /// #G_k >= K #B_k.
    pub count_ratio_ok: bool,
    /// Jacobian-weighted version of the same comparison.
    pub weighted_ratio_ok: bool,
    /// Sum over full pieces of min J, which telescopes to about 1.
    pub normalization_sum: f64,
    pub normalization_ok: bool,
    /// Every good piece clears the expansion threshold.
    pub good_e_ok: bool,
    /// Level recursion #G_{k+1} >= (1-eta) mu^{2N} #G_k + mu^{2N}/3 #B_k,
    /// in fraction form; None at k = 0, vacuous when eta >= 1.
    pub recursion_ok: Option<bool>,
    pub recursion_vacuous: bool,
}

#[derive(Debug, Clone, serde::Serialize)]
pub struct CensusReport {
    pub n: u32,
    pub delta_tilde: f64,
    pub k_ratio: f64,
    pub good_e_threshold: f64,
    pub rng_seed: u64,
    pub censuses: Vec<PieceCensus>,
}

struct Tally {
    pieces: u64,
    good: u64,
    min_j: f64,
    max_j: f64,
    sum_min_good: f64,
    sum_max_bad: f64,
    sum_min_all: f64,
    min_good_e: f64,
    max_abs_e: f64,
    good_e_failures: u64,
}

impl Tally {
    fn empty() -> Self {
        Tally {
            pieces: 0,
            good: 0,
            min_j: f64::INFINITY,
            max_j: 0.0,
            sum_min_good: 0.0,
            sum_max_bad: 0.0,
            sum_min_all: 0.0,
            min_good_e: f64::INFINITY,
            max_abs_e: 0.0,
            good_e_failures: 0,
        }
    }

    fn add_piece(&mut self, p: &Piece, weight: f64, e_threshold: f64) {
        self.pieces += 1;
        let e = p.e_value.unwrap_or(0.0);
        self.max_abs_e = self.max_abs_e.max(e.abs());
        self.sum_min_all += p.j_min * weight;
        if p.good == Some(true) {
            self.good += 1;
            self.sum_min_good += p.j_min * weight;
            self.min_good_e = self.min_good_e.min(e);
            if e < e_threshold {
                self.good_e_failures += 1;
            }
        } else {
            self.sum_max_bad += p.j_max * weight;
        }
        self.min_j = self.min_j.min(p.j_min);
        self.max_j = self.max_j.max(p.j_max);
    }

    fn merge(mut self, o: Tally) -> Tally {
        self.pieces += o.pieces;
        self.good += o.good;
        self.min_j = self.min_j.min(o.min_j);
        self.max_j = self.max_j.max(o.max_j);
        self.sum_min_good += o.sum_min_good;
        self.sum_max_bad += o.sum_max_bad;
        self.sum_min_all += o.sum_min_all;
        self.min_good_e = self.min_good_e.min(o.min_good_e);
        self.max_abs_e = self.max_abs_e.max(o.max_abs_e);
        self.good_e_failures += o.good_e_failures;
        self
    }
}

/// Runs the good/bad census over levels 0..=k_max with the lemma checks:
/// count ratio, Jacobian-weighted ratio, normalization bracket, good-piece
/// expansion threshold, and the level recursion.
#[allow(clippy::too_many_arguments)]
pub fn piece_census(
    f: &SkewProduct,
    curve: &UCurve,
    field: &AdaptedField,
    k_max: u32,
    scales: &Scales,
    mode: CensusMode,
    cap: u64,
    nodes: usize,
    rng_seed: u64,
) -> Result<CensusReport> {
    let nf = f.n() as f64;
    let e_threshold = if f.is_perturbed() {
        (1.0 - 8.0 * scales.delta_tilde) * nf.ln()
    } else {
        (1.0 - 7.0 * scales.delta_tilde) * nf.ln()
    };
    let kk = scales.k_ratio;
    let mut censuses: Vec<PieceCensus> = Vec::new();
    let mut prev_fracs: Option<(f64, f64)> = None;
    for k in 0..=k_max {
        let (tally, mode_name) = match mode {
            CensusMode::Exhaustive => {
                let full = fibered_full_count(f, k);
                if !(full + 1.0 <= cap as f64) {
                    return Err(Error::PieceCapExceeded {
                        needed: full + 1.0,
                        cap,
                    });
                }
                let full = full as u64;
                let chart = LeafChart::new(f, curve.seed, k)?;
                let tally = (0..full.max(1))
                    .into_par_iter()
                    .map(|j| -> Result<Tally> {
                        let p = build_fibered_piece(
                            f,
                            &chart,
                            k,
                            j,
                            TAU * j as f64,
                            TAU * (j + 1) as f64,
                            nodes,
                            field,
                            scales.delta_tilde,
                        )?;
                        let mut t = Tally::empty();
                        t.add_piece(&p, 1.0, e_threshold);
                        Ok(t)
                    })
                    .try_reduce(Tally::empty, |a, b| Ok(a.merge(b)))?;
                (tally, "exhaustive")
            }
            CensusMode::Sampled(count) => {
                let pieces = sample_pieces(
                    f,
                    curve,
                    k,
                    count,
                    nodes,
                    field,
                    scales.delta_tilde,
                    rng_seed ^ ((k as u64) << 32),
                )?;
                let mut tally = Tally::empty();
                for p in &pieces {
                    // Uniform source parameters select pieces proportionally
                    // to their Jacobian mass; dividing by the per-piece mean
                    // J recovers unweighted Jacobian sums on average.
                    let jbar = 0.5 * (p.j_min + p.j_max);
                    let weight = if jbar > 0.0 {
                        1.0 / (jbar * count as f64)
                    } else {
                        0.0
                    };
                    tally.add_piece(p, weight, e_threshold);
                }
                (tally, "sampled")
            }
        };
        let bad = tally.pieces - tally.good;
        let good_fraction = tally.good as f64 / tally.pieces.max(1) as f64;
        let bracket_lo = (-(scales.eps2 + scales.eps3)).exp();
        let bracket_hi = (2.0 * (scales.eps2 + scales.eps3)).exp();
        let recursion = prev_fracs.map(|(g_prev, b_prev)| {
            good_fraction >= (1.0 - scales.eta) * g_prev + b_prev / 3.0
        });
        censuses.push(PieceCensus {
            k,
            mode: mode_name.to_string(),
            pieces: tally.pieces,
            good: tally.good,
            bad,
            good_fraction,
            min_j: tally.min_j,
            max_j: tally.max_j,
            sum_min_j_good: tally.sum_min_good,
            sum_max_j_bad: tally.sum_max_bad,
            min_good_e: if tally.good > 0 {
                Some(tally.min_good_e)
            } else {
                None
            },
            max_abs_e: tally.max_abs_e,
            count_ratio_ok: tally.good as f64 >= kk * bad as f64,
            weighted_ratio_ok: tally.sum_min_good >= kk * tally.sum_max_bad,
            normalization_sum: tally.sum_min_all,
            normalization_ok: tally.sum_min_all >= bracket_lo && tally.sum_min_all <= bracket_hi,
            good_e_ok: tally.good_e_failures == 0,
            recursion_ok: recursion,
            recursion_vacuous: scales.eta >= 1.0,
        });
        prev_fracs = Some((good_fraction, bad as f64 / tally.pieces.max(1) as f64));
    }
    Ok(CensusReport {
        n: f.n(),
        delta_tilde: scales.delta_tilde,
        k_ratio: kk,
        good_e_threshold: e_threshold,
        rng_seed,
        censuses,
    })
}

/// CSV rows: k, mode, pieces, good, bad, min_J, max_J, sum_minJ_good,
/// sum_maxJ_bad.
pub fn write_census_csv<W: std::io::Write>(report: &CensusReport, w: W) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    wtr.write_record([
        "k",
        "mode",
        "pieces",
        "good",
        "bad",
        "min_J",
        "max_J",
        "sum_minJ_good",
        "sum_maxJ_bad",
    ])
    .map_err(csv_err)?;
    for c in &report.censuses {
        wtr.write_record([
            c.k.to_string(),
            c.mode.clone(),
            c.pieces.to_string(),
            c.good.to_string(),
            c.bad.to_string(),
            format!("{:e}", c.min_j),
            format!("{:e}", c.max_j),
            format!("{:e}", c.sum_min_j_good),
            format!("{:e}", c.sum_max_j_bad),
        ])
        .map_err(csv_err)?;
    }
    wtr.flush()?;
    Ok(())
}

fn csv_err(e: csv::Error) -> Error {
    Error::InvalidParameter(format!("csv write failed: {e}"))
}

#[derive(Debug, Clone, serde::Serialize)]
pub struct DistortionReport {
    pub k: u32,
    pub pieces: u64,
    pub pairs: u64,
    pub worst_log_ratio: f64,
    pub eps3: f64,
    pub within_eps3: bool,
}

/// Worst log-ratio of the backward unstable Jacobian over point pairs on
/// one piece, maximized over sampled pieces.
pub fn bounded_distortion(
    f: &SkewProduct,
    curve: &UCurve,
    k: u32,
    piece_count: u64,
    eps3: f64,
    rng_seed: u64,
) -> Result<DistortionReport> {
    if k == 0 {
        return Ok(DistortionReport {
            k,
            pieces: 0,
            pairs: 0,
            worst_log_ratio: 0.0,
            eps3,
            within_eps3: true,
        });
    }
    let field = AdaptedField::constant([1.0, 0.0])?;
    let pieces = sample_pieces(f, curve, k, piece_count, 9, &field, 0.1, rng_seed)?;
    let mut worst: f64 = 0.0;
    let mut pairs = 0u64;
    for p in &pieces {
        if p.j_min > 0.0 {
            worst = worst.max((p.j_max / p.j_min).ln().abs());
            let n = p.samples.len() as u64;
            pairs += n * (n - 1) / 2;
        }
    }
    Ok(DistortionReport {
        k,
        pieces: pieces.len() as u64,
        pairs,
        worst_log_ratio: worst,
        eps3,
        within_eps3: worst <= eps3,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::maps::Shear;
    use crate::scales::Scales;
    use approx::assert_relative_eq;

    fn curve(n: u32) -> (SkewProduct, UCurve) {
        let f = SkewProduct::unperturbed(n).unwrap();
        let c = make_ucurve(&f, [0.5, 1.1, 2.0, 0.7], CurveMode::Fibered, 129).unwrap();
        (f, c)
    }

    #[test]
    fn full_curve_x_length() {
        let (_, c3) = curve(3);
        // The x-speed of a fibered curve is 1 + O(lambda^N).
        assert!((c3.x_length - TAU).abs() < 0.5, "{}", c3.x_length);
        let (_, c20) = curve(20);
        assert!((c20.x_length - TAU).abs() < 1e-6, "{}", c20.x_length);
    }

    #[test]
    fn tangents_match_alpha_route() {
        let f = SkewProduct::unperturbed(5).unwrap();
        let c = make_ucurve(&f, [1.0, 2.0, 3.0, 4.0], CurveMode::Fibered, 33).unwrap();
        assert!(!c.fallback_used);
        // Curve tangents came from alpha; compare with the chart route.
        let chart = LeafChart::new(&f, c.seed, 0).unwrap();
        for s in c.samples.iter().step_by(8) {
            let w = chart.eval(s.t).unwrap();
            let dot: f64 = (0..4).map(|i| s.tangent[i] * w.tangent4[i]).sum();
            assert!(dot.abs() > 1.0 - 1e-9, "angle defect {}", 1.0 - dot.abs());
        }
    }

    #[test]
    fn piece_counts_match_eigenvalue_powers() {
        let (f, c) = curve(3);
        assert_eq!(fibered_full_count(&f, 1) as u64, 321);
        assert_eq!(fibered_full_count(&f, 2) as u64, 103_681);
        let sub = iterate_subdivide(&f, &c, 1, 9, DEFAULT_PIECE_CAP).unwrap();
        assert_eq!(sub.full_count, 321);
        assert_eq!(sub.pieces.len(), 321);
        assert!(sub.remainder.is_some());
        // k = 0 is the curve itself.
        let sub0 = iterate_subdivide(&f, &c, 0, 9, DEFAULT_PIECE_CAP).unwrap();
        assert_eq!(sub0.full_count, 1);
    }

    #[test]
    fn fibered_jacobian_is_constant() {
        let (f, c) = curve(3);
        let sub = iterate_subdivide(&f, &c, 1, 9, DEFAULT_PIECE_CAP).unwrap();
        let lam6 = f.hyperbolic().lambda.powi(6);
        for p in sub.pieces.iter().step_by(40) {
            assert_relative_eq!(p.j_min, lam6, max_relative = 1e-12);
            assert!(p.jacobian_ratio() - 1.0 < 1e-12);
        }
    }

    #[test]
    fn cap_is_enforced() {
        let (f, c) = curve(3);
        assert!(matches!(
            iterate_subdivide(&f, &c, 2, 9, 1000),
            Err(Error::PieceCapExceeded { .. })
        ));
    }

    #[test]
    fn level_budget_guard_at_large_n() {
        let f = SkewProduct::unperturbed(100).unwrap();
        assert!(chart_depth(&f, 3).is_ok());
        assert!(matches!(
            chart_depth(&f, 5),
            Err(Error::InvalidParameter(_))
        ));
    }

    #[test]
    fn classify_examples() {
        let (f, c) = curve(3);
        let sub = iterate_subdivide(&f, &c, 0, 9, DEFAULT_PIECE_CAP).unwrap();
        let mut p = sub.pieces[0].clone();
        p.field = vec![[1.0, 0.0]; p.samples.len()];
        assert!(classify_field(&p, 0.3, 3));
        p.field = vec![[0.0, 1.0]; p.samples.len()];
        assert!(!classify_field(&p, 0.3, 3));
    }

    #[test]
    fn general_pieces_have_equal_x_lengths() {
        let f = SkewProduct::unperturbed(3).unwrap();
        let c = make_ucurve(&f, [0.2, 0.9, 1.4, 5.0], CurveMode::General, 129).unwrap();
        let sub = iterate_subdivide(&f, &c, 1, 9, DEFAULT_PIECE_CAP).unwrap();
        // General-mode counts drift from mu^{2N} by O(lambda^N mu^{2N});
        // only fibered counts are exact.
        let mu6 = f.hyperbolic().mu.powi(6);
        let slack = f.hyperbolic().lambda.powi(3) / f.hyperbolic().e_u[0];
        let lo = (mu6 * (1.0 - slack) - 1.0) as u64;
        let hi = (mu6 * (1.0 + slack) + 1.0) as u64;
        assert!(
            sub.full_count >= lo && sub.full_count <= hi,
            "{} outside [{lo}, {hi}]",
            sub.full_count
        );
        for p in &sub.pieces {
            assert!((p.x_length - TAU).abs() < 1e-6, "{}", p.x_length);
        }
        if let Some(r) = &sub.remainder {
            assert!(r.x_length < TAU);
        }
    }

    #[test]
    fn decomposition_matches_direct_fibered() {
        let (f, c) = curve(3);
        let field = AdaptedField::constant([1.0, 0.0]).unwrap();
        let scales = Scales::derive(3, 0.01, 0.1).unwrap();
        let direct = i_n_direct(&f, &c, &field, 2).unwrap();
        let dec = i_n_decomposed(&f, &c, &field, 2, &scales, DEFAULT_PIECE_CAP).unwrap();
        assert_relative_eq!(direct, dec.total, max_relative = 1e-3);
        // Remainder terms obey the decay bound, and level 0 has none.
        assert_eq!(dec.terms[0].remainder_term, 0.0);
        for t in &dec.terms {
            assert!(t.remainder_term.abs() <= t.remainder_bound, "k={}", t.k);
        }
    }

    #[test]
    fn decomposition_matches_direct_general() {
        let f = SkewProduct::unperturbed(3).unwrap();
        let c = make_ucurve(&f, [0.7, 0.1, 3.0, 1.0], CurveMode::General, 129).unwrap();
        let field = AdaptedField::constant([1.0, 0.0]).unwrap();
        let scales = Scales::derive(3, 0.01, 0.1).unwrap();
        let direct = i_n_direct(&f, &c, &field, 2).unwrap();
        let dec = i_n_decomposed(&f, &c, &field, 2, &scales, DEFAULT_PIECE_CAP).unwrap();
        assert_relative_eq!(direct, dec.total, max_relative = 1e-3);
    }

    #[test]
    fn one_step_decomposition_is_e_integral() {
        let (f, c) = curve(4);
        let field = AdaptedField::constant([1.0, 0.0]).unwrap();
        let scales = Scales::derive(4, 0.01, 0.1).unwrap();
        let e = e_integral(&f, &c, &field).unwrap();
        let dec = i_n_decomposed(&f, &c, &field, 1, &scales, DEFAULT_PIECE_CAP).unwrap();
        assert_relative_eq!(e, dec.total, max_relative = 1e-6);
        let direct = i_n_direct(&f, &c, &field, 1).unwrap();
        assert_relative_eq!(e, direct, max_relative = 1e-9);
        // Crude two-sided bound.
        assert!(e.abs() <= (2.0 * 4.0f64).ln() + 1e-9);
    }

    #[test]
    fn good_pieces_expand_at_scale() {
        let f = SkewProduct::unperturbed(100).unwrap();
        let c = make_ucurve(&f, [0.3, 0.8, 1.0, 2.0], CurveMode::Fibered, 65).unwrap();
        let field = AdaptedField::constant([1.0, 0.0]).unwrap();
        let scales = Scales::derive(100, 0.01, 0.1).unwrap();
        let rep = piece_census(
            &f,
            &c,
            &field,
            2,
            &scales,
            CensusMode::Sampled(300),
            DEFAULT_PIECE_CAP,
            17,
            11,
        )
        .unwrap();
        for c in &rep.censuses {
            assert!(
                c.good_fraction >= 10.0 / 11.0,
                "k={} fraction {}",
                c.k,
                c.good_fraction
            );
            assert!(c.good_e_ok, "k={} min good E {:?}", c.k, c.min_good_e);
            assert!(c.max_abs_e <= (200.0f64).ln() + 1e-6);
        }
    }

    #[test]
    fn exhaustive_census_small_n() {
        let (f, c) = curve(3);
        let field = AdaptedField::constant([1.0, 0.0]).unwrap();
        let scales = Scales::derive(3, 0.01, 0.4).unwrap();
        let rep = piece_census(
            &f,
            &c,
            &field,
            1,
            &scales,
            CensusMode::Exhaustive,
            DEFAULT_PIECE_CAP,
            9,
            5,
        )
        .unwrap();
        assert_eq!(rep.censuses[0].pieces, 1);
        assert_eq!(rep.censuses[0].good, 1);
        assert_eq!(rep.censuses[1].pieces, 321);
        // The Jacobian sum over full pieces telescopes to about 1.
        assert!((rep.censuses[1].normalization_sum - 1.0).abs() < 0.01);
        let mut out = Vec::new();
        write_census_csv(&rep, &mut out).unwrap();
        let text = String::from_utf8(out).unwrap();
        assert!(text.starts_with("k,mode,pieces,good,bad,min_J,max_J,sum_minJ_good,sum_maxJ_bad"));
        assert_eq!(text.lines().count(), 3);
    }

    #[test]
    fn good_persists_off_critical_strip() {
        // One-step pushforward of the horizontal field stays admissible
        // on every piece whose source avoids the critical strip: the
        // twist there exceeds the admissible slope.
        let (f, c) = curve(3);
        let delta_tilde = 0.5;
        let strip = crate::scales::CriticalRegion::new(
            crate::scales::RegionKind::CritTilde,
            3,
            delta_tilde,
        );
        let field = AdaptedField::constant([1.0, 0.0]).unwrap();
        let chart = LeafChart::new(&f, c.seed, 1).unwrap();
        let lam2n = f.hyperbolic().lambda.powi(2 * 3);
        let mut qualifying = 0;
        for j in 0..321u64 {
            let mut ok = true;
            let mut vals = Vec::new();
            for i in 0..9 {
                let sigma = TAU * (j as f64 + i as f64 / 8.0);
                let walk = chart.eval(sigma).unwrap();
                if strip.contains(walk.trail[0]) {
                    ok = false;
                    break;
                }
                vals.push(chart.push_field(&walk, &field, sigma * lam2n).unwrap());
            }
            if ok {
                qualifying += 1;
                assert!(classify(&vals, 3, delta_tilde), "piece {j}");
            }
        }
        assert!(qualifying > 10, "only {qualifying} qualifying pieces");
    }

    #[test]
    fn distortion_trivial_unperturbed_and_bounded_perturbed() {
        let (f, c) = curve(10);
        let rep = bounded_distortion(&f, &c, 3, 40, 0.05, 3).unwrap();
        assert!(rep.worst_log_ratio < 1e-12, "{}", rep.worst_log_ratio);
        let shear = Shear::new(0, [0, 1, 1, 0], 1e-3).unwrap();
        let g = SkewProduct::new(10, crate::linalg::IntMat2::cat(), vec![], vec![shear]).unwrap();
        let cg = make_ucurve(&g, [0.5, 1.1, 2.0, 0.7], CurveMode::General, 65).unwrap();
        let rep = bounded_distortion(&g, &cg, 3, 60, 0.05, 4).unwrap();
        assert!(rep.worst_log_ratio > 0.0);
        assert!(rep.within_eps3, "worst {}", rep.worst_log_ratio);
    }

    #[test]
    fn pushforward_fields_are_adapted_at_small_n() {
        let f = SkewProduct::unperturbed(10).unwrap();
        let c = make_ucurve(&f, [0.4, 2.2, 0.3, 5.1], CurveMode::Fibered, 65).unwrap();
        let field = AdaptedField::constant([1.0, 0.0]).unwrap();
        for k in 1..=3u32 {
            let pieces = sample_pieces(&f, &c, k, 20, 9, &field, 0.1, 21).unwrap();
            for p in &pieces {
                let ts: Vec<f64> = p.samples.iter().map(|s| s.t).collect();
                let stats = field_stats(&ts, &p.field, 10);
                assert!(
                    stats.holder_c < stats.bound,
                    "k={k} holder {} bound {}",
                    stats.holder_c,
                    stats.bound
                );
            }
        }
    }

    #[test]
    fn constant_field_has_zero_holder_constant() {
        let ts = vec![0.0, 1.0, 2.0];
        let vals = vec![[1.0, 0.0]; 3];
        let stats = field_stats(&ts, &vals, 5);
        assert_eq!(stats.holder_c, 0.0);
        assert!(stats.adapted);
    }
}
