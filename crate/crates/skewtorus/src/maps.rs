//! The skew-product system on the 4-torus, its inverse, derivatives, and
//! optional shear perturbations.
//!
//! The base dynamics on the (x, y) plane is the twist family
//! s_N(x, y) = (2x - y + N sin x, x); the fiber (z, w) evolves under the
//! 2N-th power of an integer hyperbolic matrix A, and the fiber state
//! couples back into x through the first component of A^N (z, w). Fiber
//! coordinates travel on the exact lattice of `torus`, so the fiber flow
//! and the coupling term are reproducible bit for bit in both time
//! directions.

use crate::error::{Error, Result};
use crate::linalg::{
    eigendata, mat2_inv, mat2_mul, mat4_mul, HyperbolicData, IntMat2, Mat2, Mat4,
};
use crate::torus::{from_lattice, to_lattice, wrap, ModMat2};

pub type Point2 = [f64; 2];
pub type Point4 = [f64; 4];

pub(crate) fn ensure_finite4(m: Point4, what: &'static str) -> Result<()> {
    if m.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite(what))
    }
}

pub(crate) fn wrap4(m: Point4) -> Point4 {
    [wrap(m[0]), wrap(m[1]), wrap(m[2]), wrap(m[3])]
}

/// One application of the twist map s_N(x, y) = (2x - y + N sin x, x).
pub fn standard_map(n: u32, p: Point2) -> Result<Point2> {
    if !p[0].is_finite() || !p[1].is_finite() {
        return Err(Error::NonFinite("standard_map"));
    }
    let x = wrap(p[0]);
    let y = wrap(p[1]);
    Ok([wrap(2.0 * x - y + n as f64 * x.sin()), x])
}

/// Exact closed-form inverse of `standard_map`: (x, y) -> (y, 2y - x + N sin y).
pub fn standard_map_inverse(n: u32, p: Point2) -> Result<Point2> {
    if !p[0].is_finite() || !p[1].is_finite() {
        return Err(Error::NonFinite("standard_map_inverse"));
    }
    let x = wrap(p[0]);
    let y = wrap(p[1]);
    Ok([y, wrap(2.0 * y - x + n as f64 * y.sin())])
}

/// A volume-preserving shear of one torus coordinate:
/// m[target] += eps * sin(freq . m), with freq[target] = 0 so the phase is
/// unchanged by the update and the map inverts in closed form.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Shear {
    pub target: usize,
    pub freq: [i64; 4],
    pub eps: f64,
}

impl Shear {
    pub fn new(target: usize, freq: [i64; 4], eps: f64) -> Result<Self> {
        let s = Self { target, freq, eps };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if self.target > 3 {
            return Err(Error::ShearTarget(self.target));
        }
        if self.freq[self.target] != 0 {
            return Err(Error::ShearFrequency {
                target: self.target,
                freq: self.freq[self.target],
            });
        }
        if !self.eps.is_finite() || self.eps < 0.0 {
            return Err(Error::InvalidParameter(format!(
                "shear amplitude must be finite and >= 0, got {}",
                self.eps
            )));
        }
        Ok(())
    }

    fn phase(&self, m: Point4) -> f64 {
        let mut s = 0.0;
        for i in 0..4 {
            s += self.freq[i] as f64 * m[i];
        }
        s
    }

    pub fn apply(&self, mut m: Point4) -> Point4 {
        m[self.target] = wrap(m[self.target] + self.eps * self.phase(m).sin());
        m
    }

    pub fn invert(&self, mut m: Point4) -> Point4 {
        m[self.target] = wrap(m[self.target] - self.eps * self.phase(m).sin());
        m
    }

    /// Contribution to the C^2 size estimate: |eps| (1 + |k| + |k|^2).
    pub fn c2_term(&self) -> f64 {
        let k2: f64 = self.freq.iter().map(|&k| (k * k) as f64).sum();
        let k = k2.sqrt();
        self.eps.abs() * (1.0 + k + k2)
    }

    /// Whether the derivative of this shear preserves the (x, y) plane.
    /// Base-targeting shears always do; fiber-targeting shears only when
    /// their phase ignores the base coordinates.
    pub fn is_center_invariant(&self) -> bool {
        self.target <= 1 || (self.freq[0] == 0 && self.freq[1] == 0)
    }

    /// Restriction of the derivative to the (x, y) plane. Only valid when
    /// `is_center_invariant`; callers gate on that.
    fn center_block(&self, m: Point4) -> Mat2 {
        let c = self.eps * self.phase(m).cos();
        match self.target {
            0 => [[1.0, c * self.freq[1] as f64], [0.0, 1.0]],
            1 => [[1.0, 0.0], [c * self.freq[0] as f64, 1.0]],
            _ => [[1.0, 0.0], [0.0, 1.0]],
        }
    }

    fn full_block(&self, m: Point4) -> Mat4 {
        let c = self.eps * self.phase(m).cos();
        let mut d = [[0.0; 4]; 4];
        for (i, row) in d.iter_mut().enumerate() {
            row[i] = 1.0;
        }
        for j in 0..4 {
            d[self.target][j] += c * self.freq[j] as f64;
        }
        d
    }
}

/// A point of an unstable leaf: an exact lattice anchor for the fiber
/// plus a real offset along the expanding fiber direction e^u. Anchors
/// evolve modularly and offsets by exact eigenvalue scaling, so leaf
/// parametrizations survive the enormous dynamic range between levels
/// (offsets span hundreds of orders of magnitude) without cancellation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LeafState {
    pub center: Point2,
    pub fiber_base: [u64; 2],
    pub offset: f64,
}

/// A tangent vector in leaf coordinates: center part plus a scalar
/// multiple of e^u in the fiber.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LeafTangent {
    pub center: Point2,
    pub scale: f64,
}

impl LeafTangent {
    pub fn zero() -> Self {
        Self {
            center: [0.0, 0.0],
            scale: 0.0,
        }
    }

    pub fn pure_fiber() -> Self {
        Self {
            center: [0.0, 0.0],
            scale: 1.0,
        }
    }

    /// 4-vector norm; e^u is unit, so the fiber part contributes |scale|.
    pub fn norm(&self) -> f64 {
        (self.center[0] * self.center[0]
            + self.center[1] * self.center[1]
            + self.scale * self.scale)
            .sqrt()
    }

    pub fn normalized(&self) -> Result<Self> {
        let n = self.norm();
        if n == 0.0 || !n.is_finite() {
            return Err(Error::ZeroVector);
        }
        Ok(Self {
            center: [self.center[0] / n, self.center[1] / n],
            scale: self.scale / n,
        })
    }
}

/// The skew-product system, with optional shears applied before and after
/// the core step. Construction precomputes the modular fiber powers (exact
/// on the lattice) and the real powers used by derivatives.
#[derive(Debug, Clone)]
pub struct SkewProduct {
    n: u32,
    nf: f64,
    base: IntMat2,
    eig: HyperbolicData,
    pre: Vec<Shear>,
    post: Vec<Shear>,
    an_mod: ModMat2,
    a2n_mod: ModMat2,
    an_inv_mod: ModMat2,
    a2n_inv_mod: ModMat2,
    an_real: Option<Mat2>,
    a2n_real: Option<Mat2>,
    center_violation: Option<(usize, usize, i64, i64)>,
}

impl SkewProduct {
    pub fn new(n: u32, base: IntMat2, pre: Vec<Shear>, post: Vec<Shear>) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidParameter(
                "coupling strength N must be at least 1".into(),
            ));
        }
        let eig = eigendata(&base)?;
        for s in pre.iter().chain(post.iter()) {
            s.validate()?;
        }
        let a_mod = ModMat2::from_int(&base);
        let an_mod = a_mod.pow(n);
        let a2n_mod = an_mod.mul(&an_mod);
        let a_inv_mod = ModMat2::from_int(&base.inverse()?);
        let an_inv_mod = a_inv_mod.pow(n);
        let a2n_inv_mod = an_inv_mod.mul(&an_inv_mod);
        let an_real = base.real_power(n).ok();
        let a2n_real = base.real_power(2 * n).ok();
        let center_violation = pre
            .iter()
            .chain(post.iter())
            .enumerate()
            .find(|(_, s)| !s.is_center_invariant())
            .map(|(i, s)| (i, s.target, s.freq[0], s.freq[1]));
        Ok(Self {
            n,
            nf: n as f64,
            base,
            eig,
            pre,
            post,
            an_mod,
            a2n_mod,
            an_inv_mod,
            a2n_inv_mod,
            an_real,
            a2n_real,
            center_violation,
        })
    }

    /// The default system: fiber matrix [[2,1],[1,1]], no shears.
    pub fn unperturbed(n: u32) -> Result<Self> {
        Self::new(n, IntMat2::cat(), Vec::new(), Vec::new())
    }

    pub fn n(&self) -> u32 {
        self.n
    }

    pub fn coupling(&self) -> f64 {
        self.nf
    }

    pub fn base_matrix(&self) -> &IntMat2 {
        &self.base
    }

    pub fn hyperbolic(&self) -> &HyperbolicData {
        &self.eig
    }

    pub fn pre_shears(&self) -> &[Shear] {
        &self.pre
    }

    pub fn post_shears(&self) -> &[Shear] {
        &self.post
    }

    pub fn is_perturbed(&self) -> bool {
        !self.pre.is_empty() || !self.post.is_empty()
    }

    /// Total C^2 size of the perturbation stages.
    pub fn perturbation_c2_size(&self) -> f64 {
        self.pre
            .iter()
            .chain(self.post.iter())
            .map(Shear::c2_term)
            .sum()
    }

    /// Twist derivative entry: d x' / d x = N cos x + 2.
    pub fn omega(&self, x: f64) -> f64 {
        self.nf * x.cos() + 2.0
    }

    /// Derivative of the twist step on the (x, y) plane.
    pub fn center_mat(&self, x: f64) -> Mat2 {
        [[self.omega(x), -1.0], [1.0, 0.0]]
    }

    fn core_apply(&self, m: Point4) -> Point4 {
        let t = [to_lattice(m[2]), to_lattice(m[3])];
        let u = self.an_mod.apply(t);
        let fib = self.a2n_mod.apply(t);
        let x = m[0];
        let xp = wrap(2.0 * x - m[1] + self.nf * x.sin() + from_lattice(u[0]));
        [xp, x, from_lattice(fib[0]), from_lattice(fib[1])]
    }

    fn core_inverse(&self, m: Point4) -> Point4 {
        let tp = [to_lattice(m[2]), to_lattice(m[3])];
        let fib = self.a2n_inv_mod.apply(tp);
        // Recompute the forward coupling term from the recovered fiber
        // state; modular arithmetic makes it match the forward pass.
        let u = self.an_mod.apply(fib);
        let y = wrap(2.0 * m[1] - m[0] + self.nf * m[1].sin() + from_lattice(u[0]));
        [m[1], y, from_lattice(fib[0]), from_lattice(fib[1])]
    }

    pub fn apply(&self, m: Point4) -> Result<Point4> {
        ensure_finite4(m, "apply")?;
        let mut p = wrap4(m);
        for s in &self.pre {
            p = s.apply(p);
        }
        p = self.core_apply(p);
        for s in &self.post {
            p = s.apply(p);
        }
        Ok(p)
    }

    pub fn inverse(&self, m: Point4) -> Result<Point4> {
        ensure_finite4(m, "inverse")?;
        let mut p = wrap4(m);
        for s in self.post.iter().rev() {
            p = s.invert(p);
        }
        p = self.core_inverse(p);
        for s in self.pre.iter().rev() {
            p = s.invert(p);
        }
        Ok(p)
    }

    /// Reference form of the inverse for the unperturbed map: conjugation
    /// of the backward-fiber twin g (same base step, A^{-N} coupling,
    /// A^{-2N} fiber) by the coordinate swap (x, y, z, w) -> (y, x, z, w).
    pub fn conjugated_inverse(&self, m: Point4) -> Result<Point4> {
        if self.is_perturbed() {
            return Err(Error::InvalidParameter(
                "the swap-conjugacy form of the inverse applies to the unperturbed map".into(),
            ));
        }
        ensure_finite4(m, "conjugated_inverse")?;
        let p = wrap4(m);
        let g = self.g_apply([p[1], p[0], p[2], p[3]]);
        Ok([g[1], g[0], g[2], g[3]])
    }

    /// The backward-fiber twin of the core map.
    fn g_apply(&self, m: Point4) -> Point4 {
        let t = [to_lattice(m[2]), to_lattice(m[3])];
        let u = self.an_inv_mod.apply(t);
        let fib = self.a2n_inv_mod.apply(t);
        let x = m[0];
        let xp = wrap(2.0 * x - m[1] + self.nf * x.sin() + from_lattice(u[0]));
        [xp, x, from_lattice(fib[0]), from_lattice(fib[1])]
    }

    /// Whether the fiber dynamics of this system is exactly linear, i.e.
    /// no shear writes into the fiber coordinates. Leaf-state walking is
    /// only available in that case.
    pub fn leaf_supported(&self) -> bool {
        self.pre.iter().chain(self.post.iter()).all(|s| s.target <= 1)
    }

    /// Starts a leaf state at a plain point (offset zero).
    pub fn leaf_from_point(&self, m: Point4) -> Result<LeafState> {
        ensure_finite4(m, "leaf_from_point")?;
        let p = wrap4(m);
        Ok(LeafState {
            center: [p[0], p[1]],
            fiber_base: [to_lattice(p[2]), to_lattice(p[3])],
            offset: 0.0,
        })
    }

    pub fn leaf_materialize(&self, s: &LeafState) -> Point4 {
        let eu = self.eig.e_u;
        [
            s.center[0],
            s.center[1],
            wrap(from_lattice(s.fiber_base[0]) + s.offset * eu[0]),
            wrap(from_lattice(s.fiber_base[1]) + s.offset * eu[1]),
        ]
    }

    pub fn leaf_tangent4(&self, t: &LeafTangent) -> [f64; 4] {
        let eu = self.eig.e_u;
        [
            t.center[0],
            t.center[1],
            t.scale * eu[0],
            t.scale * eu[1],
        ]
    }

    fn leaf_guard(&self) -> Result<(f64, f64)> {
        if !self.leaf_supported() {
            return Err(Error::InvalidParameter(
                "leaf walking requires shears that leave the fiber coordinates unchanged".into(),
            ));
        }
        let mu_n = self.eig.mu.powi(self.n as i32);
        let mu_2n = mu_n * mu_n;
        if !mu_2n.is_finite() {
            return Err(Error::DerivativeOverflow { n: self.n });
        }
        Ok((mu_n, mu_2n))
    }

    /// One forward step of a leaf state. The lattice anchor takes the
    /// exact modular fiber step and the offset along e^u scales by the
    /// exact eigenvalue factor, so the leaf parametrization keeps full
    /// relative precision at any offset magnitude. With offset zero and no
    /// shears this reproduces `apply` bit for bit.
    pub fn leaf_apply(&self, s: &LeafState) -> Result<LeafState> {
        Ok(self.leaf_apply_with_tangent(s, &LeafTangent::zero())?.0)
    }

    /// Forward step carrying a tangent in leaf coordinates (center part
    /// plus scalar along e^u). The returned tangent is not normalized;
    /// callers track growth factors from its norm.
    pub fn leaf_apply_with_tangent(
        &self,
        s: &LeafState,
        t: &LeafTangent,
    ) -> Result<(LeafState, LeafTangent)> {
        let (mu_n, mu_2n) = self.leaf_guard()?;
        let eu = self.eig.e_u;
        let mut p = self.leaf_materialize(s);
        ensure_finite4(p, "leaf_apply")?;
        let mut dc = t.center;
        let ts = t.scale;
        for sh in &self.pre {
            let c = sh.eps * sh.phase(p).cos();
            let k = sh.freq;
            dc[sh.target] += c
                * (k[0] as f64 * dc[0]
                    + k[1] as f64 * dc[1]
                    + (k[2] as f64 * eu[0] + k[3] as f64 * eu[1]) * ts);
            p = sh.apply(p);
        }
        let x = p[0];
        let u = self.an_mod.apply(s.fiber_base);
        let coup = from_lattice(u[0]) + s.offset * mu_n * eu[0];
        let xp = wrap(2.0 * x - p[1] + self.nf * x.sin() + coup);
        let om = self.omega(x);
        let ndc = [om * dc[0] - dc[1] + ts * mu_n * eu[0], dc[0]];
        let nts = ts * mu_2n;
        let mut out = LeafState {
            center: [xp, x],
            fiber_base: self.a2n_mod.apply(s.fiber_base),
            offset: s.offset * mu_2n,
        };
        let mut dc = ndc;
        let mut q = self.leaf_materialize(&out);
        for sh in &self.post {
            let c = sh.eps * sh.phase(q).cos();
            let k = sh.freq;
            dc[sh.target] += c
                * (k[0] as f64 * dc[0]
                    + k[1] as f64 * dc[1]
                    + (k[2] as f64 * eu[0] + k[3] as f64 * eu[1]) * nts);
            q = sh.apply(q);
        }
        out.center = [q[0], q[1]];
        Ok((
            out,
            LeafTangent {
                center: dc,
                scale: nts,
            },
        ))
    }

    /// Derivative restricted to the (x, y) plane. Errors when a shear
    /// breaks the invariance of that plane.
    pub fn df_center(&self, m: Point4) -> Result<Mat2> {
        if let Some((index, target, kx, ky)) = self.center_violation {
            return Err(Error::CenterNotInvariant {
                index,
                target,
                kx,
                ky,
            });
        }
        ensure_finite4(m, "df_center")?;
        let mut p = wrap4(m);
        let mut block = [[1.0, 0.0], [0.0, 1.0]];
        for s in &self.pre {
            block = mat2_mul(&s.center_block(p), &block);
            p = s.apply(p);
        }
        block = mat2_mul(&self.center_mat(p[0]), &block);
        p = self.core_apply(p);
        for s in &self.post {
            block = mat2_mul(&s.center_block(p), &block);
            p = s.apply(p);
        }
        Ok(block)
    }

    /// Inverse of the center derivative at m; for the unperturbed map this
    /// is [[0, 1], [-1, Omega(x)]] exactly.
    pub fn df_center_inverse(&self, m: Point4) -> Result<Mat2> {
        if self.pre.is_empty() && self.post.is_empty() {
            ensure_finite4(m, "df_center_inverse")?;
            let om = self.omega(wrap(m[0]));
            return Ok([[0.0, 1.0], [-1.0, om]]);
        }
        mat2_inv(&self.df_center(m)?)
    }

    /// Full 4x4 derivative. Errors when the real fiber power overflows f64
    /// (the modular dynamics still works there, but derivatives do not fit).
    pub fn df_full(&self, m: Point4) -> Result<Mat4> {
        let an = self.an_real.ok_or(Error::DerivativeOverflow { n: self.n })?;
        let a2n = self
            .a2n_real
            .ok_or(Error::DerivativeOverflow { n: self.n })?;
        ensure_finite4(m, "df_full")?;
        let mut p = wrap4(m);
        let mut d = identity4();
        for s in &self.pre {
            d = mat4_mul(&s.full_block(p), &d);
            p = s.apply(p);
        }
        let om = self.omega(p[0]);
        let core: Mat4 = [
            [om, -1.0, an[0][0], an[0][1]],
            [1.0, 0.0, 0.0, 0.0],
            [0.0, 0.0, a2n[0][0], a2n[0][1]],
            [0.0, 0.0, a2n[1][0], a2n[1][1]],
        ];
        d = mat4_mul(&core, &d);
        p = self.core_apply(p);
        for s in &self.post {
            d = mat4_mul(&s.full_block(p), &d);
            p = s.apply(p);
        }
        Ok(d)
    }

    /// Distance between the fiber part of the image and the bare fiber
    /// automorphism applied to the fiber part of m. Exactly zero for the
    /// unperturbed map; nonzero only when a shear touches the fiber.
    pub fn semiconjugacy_residual(&self, m: Point4) -> Result<f64> {
        ensure_finite4(m, "semiconjugacy_residual")?;
        let p = wrap4(m);
        let full = self.apply(p)?;
        let t = self.a2n_mod.apply([to_lattice(p[2]), to_lattice(p[3])]);
        Ok(crate::torus::torus_dist2(
            [full[2], full[3]],
            [from_lattice(t[0]), from_lattice(t[1])],
        ))
    }

    /// First component of A^N (z, w) for diagnostics and derived fields.
    pub fn coupling_term(&self, m: Point4) -> f64 {
        let u = self.an_mod.apply([to_lattice(m[2]), to_lattice(m[3])]);
        from_lattice(u[0])
    }
}

fn identity4() -> Mat4 {
    let mut d = [[0.0; 4]; 4];
    for (i, row) in d.iter_mut().enumerate() {
        row[i] = 1.0;
    }
    d
}

/// A system under study: the skew product itself, or a decoupled pair of
/// twist maps used as a non-ergodic control in the mixing diagnostics.
#[derive(Debug, Clone)]
pub enum System {
    Skew(SkewProduct),
    Product { n1: u32, n2: u32 },
}

impl System {
    pub fn skew(n: u32) -> Result<Self> {
        Ok(System::Skew(SkewProduct::unperturbed(n)?))
    }

    pub fn apply(&self, m: Point4) -> Result<Point4> {
        match self {
            System::Skew(f) => f.apply(m),
            System::Product { n1, n2 } => {
                let b = standard_map(*n1, [m[0], m[1]])?;
                let f = standard_map(*n2, [m[2], m[3]])?;
                Ok([b[0], b[1], f[0], f[1]])
            }
        }
    }

    pub fn inverse(&self, m: Point4) -> Result<Point4> {
        match self {
            System::Skew(f) => f.inverse(m),
            System::Product { n1, n2 } => {
                let b = standard_map_inverse(*n1, [m[0], m[1]])?;
                let f = standard_map_inverse(*n2, [m[2], m[3]])?;
                Ok([b[0], b[1], f[0], f[1]])
            }
        }
    }

    /// Derivative on the (x, y) plane, which both variants preserve.
    pub fn df_center(&self, m: Point4) -> Result<Mat2> {
        match self {
            System::Skew(f) => f.df_center(m),
            System::Product { n1, .. } => {
                ensure_finite4(m, "df_center")?;
                let om = *n1 as f64 * wrap(m[0]).cos() + 2.0;
                Ok([[om, -1.0], [1.0, 0.0]])
            }
        }
    }

    pub fn df_center_inverse(&self, m: Point4) -> Result<Mat2> {
        match self {
            System::Skew(f) => f.df_center_inverse(m),
            System::Product { n1, .. } => {
                ensure_finite4(m, "df_center_inverse")?;
                let om = *n1 as f64 * wrap(m[0]).cos() + 2.0;
                Ok([[0.0, 1.0], [-1.0, om]])
            }
        }
    }

    pub fn as_skew(&self) -> Option<&SkewProduct> {
        match self {
            System::Skew(f) => Some(f),
            System::Product { .. } => None,
        }
    }
}
