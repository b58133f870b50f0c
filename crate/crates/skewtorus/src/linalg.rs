//! Small fixed-size linear algebra used throughout the crate.
//!
//! Everything here is 2x2 or 4x4 and written out explicitly; the dimensions
//! never change and closed forms beat general-purpose decompositions for
//! both speed and accuracy at this size.

use crate::error::{Error, Result};

pub type Vec2 = [f64; 2];
pub type Vec4 = [f64; 4];
pub type Mat2 = [[f64; 2]; 2];
pub type Mat4 = [[f64; 4]; 4];

pub fn dot2(a: Vec2, b: Vec2) -> f64 {
    a[0] * b[0] + a[1] * b[1]
}

pub fn norm2(v: Vec2) -> f64 {
    v[0].hypot(v[1])
}

pub fn norm4(v: Vec4) -> f64 {
    (v[0] * v[0] + v[1] * v[1] + v[2] * v[2] + v[3] * v[3]).sqrt()
}

pub fn scale2(v: Vec2, s: f64) -> Vec2 {
    [v[0] * s, v[1] * s]
}

pub fn scale4(v: Vec4, s: f64) -> Vec4 {
    [v[0] * s, v[1] * s, v[2] * s, v[3] * s]
}

pub fn add2(a: Vec2, b: Vec2) -> Vec2 {
    [a[0] + b[0], a[1] + b[1]]
}

pub fn sub2(a: Vec2, b: Vec2) -> Vec2 {
    [a[0] - b[0], a[1] - b[1]]
}

pub fn sub4(a: Vec4, b: Vec4) -> Vec4 {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2], a[3] - b[3]]
}

pub fn normalize2(v: Vec2) -> Result<Vec2> {
    let n = norm2(v);
    if n == 0.0 || !n.is_finite() {
        return Err(Error::ZeroVector);
    }
    Ok(scale2(v, 1.0 / n))
}

pub fn normalize4(v: Vec4) -> Result<Vec4> {
    let n = norm4(v);
    if n == 0.0 || !n.is_finite() {
        return Err(Error::ZeroVector);
    }
    Ok(scale4(v, 1.0 / n))
}

pub fn mat2_mul(a: &Mat2, b: &Mat2) -> Mat2 {
    let mut out = [[0.0; 2]; 2];
    for i in 0..2 {
        for j in 0..2 {
            out[i][j] = a[i][0] * b[0][j] + a[i][1] * b[1][j];
        }
    }
    out
}

pub fn mat2_vec(m: &Mat2, v: Vec2) -> Vec2 {
    [
        m[0][0] * v[0] + m[0][1] * v[1],
        m[1][0] * v[0] + m[1][1] * v[1],
    ]
}

pub fn mat2_det(m: &Mat2) -> f64 {
    m[0][0] * m[1][1] - m[0][1] * m[1][0]
}

pub fn mat2_transpose(m: &Mat2) -> Mat2 {
    [[m[0][0], m[1][0]], [m[0][1], m[1][1]]]
}

/// Inverse of a 2x2 real matrix. Errors when the determinant vanishes or
/// is not finite.
pub fn mat2_inv(m: &Mat2) -> Result<Mat2> {
    let det = mat2_det(m);
    if det == 0.0 || !det.is_finite() {
        return Err(Error::SingularMatrix);
    }
    let inv = 1.0 / det;
    Ok([
        [m[1][1] * inv, -m[0][1] * inv],
        [-m[1][0] * inv, m[0][0] * inv],
    ])
}

pub fn mat4_mul(a: &Mat4, b: &Mat4) -> Mat4 {
    let mut out = [[0.0; 4]; 4];
    for i in 0..4 {
        for j in 0..4 {
            let mut s = 0.0;
            for (k, bk) in b.iter().enumerate() {
                s += a[i][k] * bk[j];
            }
            out[i][j] = s;
        }
    }
    out
}

pub fn mat4_vec(m: &Mat4, v: Vec4) -> Vec4 {
    let mut out = [0.0; 4];
    for (i, row) in m.iter().enumerate() {
        out[i] = row[0] * v[0] + row[1] * v[1] + row[2] * v[2] + row[3] * v[3];
    }
    out
}

/// Spectral (operator) norm of a 2x2 matrix by the closed-form singular
/// value: sigma_max^2 = (|M|_F^2 + sqrt(|M|_F^4 - 4 det^2)) / 2.
pub fn op_norm2(m: &Mat2) -> f64 {
    let f2 = m[0][0] * m[0][0] + m[0][1] * m[0][1] + m[1][0] * m[1][0] + m[1][1] * m[1][1];
    let det = mat2_det(m);
    let disc = (f2 * f2 - 4.0 * det * det).max(0.0);
    ((f2 + disc.sqrt()) / 2.0).sqrt()
}

/// Smallest singular value of a 2x2 matrix.
pub fn min_sv2(m: &Mat2) -> f64 {
    let f2 = m[0][0] * m[0][0] + m[0][1] * m[0][1] + m[1][0] * m[1][0] + m[1][1] * m[1][1];
    let det = mat2_det(m);
    let disc = (f2 * f2 - 4.0 * det * det).max(0.0);
    ((f2 - disc.sqrt()).max(0.0) / 2.0).sqrt()
}

/// Integer 2x2 matrix acting on the 2-torus.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct IntMat2 {
    pub a: i64,
    pub b: i64,
    pub c: i64,
    pub d: i64,
}

impl IntMat2 {
    pub const fn new(a: i64, b: i64, c: i64, d: i64) -> Self {
        Self { a, b, c, d }
    }

    /// The default fiber matrix [[2,1],[1,1]].
    pub const fn cat() -> Self {
        Self::new(2, 1, 1, 1)
    }

    pub const fn identity() -> Self {
        Self::new(1, 0, 0, 1)
    }

    pub fn det(&self) -> i64 {
        self.a * self.d - self.b * self.c
    }

    pub fn trace(&self) -> i64 {
        self.a + self.d
    }

    /// Requires determinant 1; the inverse is then [[d,-b],[-c,a]].
    pub fn inverse(&self) -> Result<Self> {
        if self.det() != 1 {
            return Err(Error::NotHyperbolic {
                a: self.a,
                b: self.b,
                c: self.c,
                d: self.d,
            });
        }
        Ok(Self::new(self.d, -self.b, -self.c, self.a))
    }

    pub fn to_real(&self) -> Mat2 {
        [
            [self.a as f64, self.b as f64],
            [self.c as f64, self.d as f64],
        ]
    }

    /// Real k-th power by repeated multiplication. Errors when entries
    /// leave the finite f64 range.
    pub fn real_power(&self, k: u32) -> Result<Mat2> {
        let base = self.to_real();
        let mut out = [[1.0, 0.0], [0.0, 1.0]];
        for _ in 0..k {
            out = mat2_mul(&out, &base);
            if !out.iter().flatten().all(|x| x.is_finite()) {
                return Err(Error::DerivativeOverflow { n: k });
            }
        }
        Ok(out)
    }
}

/// Eigendata of an integer hyperbolic matrix with determinant 1 and
/// trace >= 3: expanding rate mu > 1, contracting rate lambda = 1/mu,
/// and unit eigenvectors oriented with positive first component.
#[derive(Debug, Clone, Copy, serde::Serialize)]
pub struct HyperbolicData {
    pub mu: f64,
    pub lambda: f64,
    pub e_u: Vec2,
    pub e_s: Vec2,
}

/// Computes eigendata for `m`. The restriction to positive trace keeps the
/// expanding eigenvalue equal to (tr + sqrt(tr^2-4))/2 > 1 with no sign
/// bookkeeping; matrices with trace <= -3 can be handled by squaring first.
pub fn eigendata(m: &IntMat2) -> Result<HyperbolicData> {
    if m.det() != 1 || m.trace() < 3 {
        return Err(Error::NotHyperbolic {
            a: m.a,
            b: m.b,
            c: m.c,
            d: m.d,
        });
    }
    let tr = m.trace() as f64;
    let disc = (tr * tr - 4.0).sqrt();
    let mu = (tr + disc) / 2.0;
    // lambda = 1/mu avoids the cancellation in (tr - disc)/2 and keeps
    // lambda * mu = 1 to one ulp.
    let lambda = 1.0 / mu;
    let e_u = orient(eigenvector(m, mu)?);
    let e_s = orient(eigenvector(m, lambda)?);
    Ok(HyperbolicData {
        mu,
        lambda,
        e_u,
        e_s,
    })
}

/// Unit eigenvector for eigenvalue t, picking the numerically larger
/// off-diagonal entry to avoid cancellation.
fn eigenvector(m: &IntMat2, t: f64) -> Result<Vec2> {
    let (a, b, c, d) = (m.a as f64, m.b as f64, m.c as f64, m.d as f64);
    let v = if b.abs() >= c.abs() {
        [b, t - a]
    } else {
        [t - d, c]
    };
    normalize2(v)
}

fn orient(v: Vec2) -> Vec2 {
    if v[0] < 0.0 || (v[0] == 0.0 && v[1] < 0.0) {
        [-v[0], -v[1]]
    } else {
        v
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn cat_eigendata_matches_golden_ratio_values() {
        let h = eigendata(&IntMat2::cat()).unwrap();
        assert_abs_diff_eq!(h.mu, (3.0 + 5.0_f64.sqrt()) / 2.0, epsilon = 1e-15);
        assert_abs_diff_eq!(h.lambda * h.mu, 1.0, epsilon = 1e-14);
        assert_abs_diff_eq!(h.e_u[0], 0.8506508083520399, epsilon = 1e-12);
        assert_abs_diff_eq!(h.e_u[1], 0.5257311121191336, epsilon = 1e-12);
        assert_abs_diff_eq!(h.e_s[0], 0.5257311121191336, epsilon = 1e-12);
        assert_abs_diff_eq!(h.e_s[1], -0.8506508083520399, epsilon = 1e-12);
    }

    #[test]
    fn eigendata_satisfies_eigen_equations() {
        for m in [
            IntMat2::cat(),
            IntMat2::new(3, 2, 1, 1),
            IntMat2::new(5, 2, 2, 1),
            IntMat2::new(7, 12, 4, 7),
        ] {
            let h = eigendata(&m).unwrap();
            let r = m.to_real();
            let au = mat2_vec(&r, h.e_u);
            let as_ = mat2_vec(&r, h.e_s);
            for i in 0..2 {
                assert_abs_diff_eq!(au[i], h.mu * h.e_u[i], epsilon = 1e-12);
                assert_abs_diff_eq!(as_[i], h.lambda * h.e_s[i], epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn eigendata_rejects_non_hyperbolic() {
        assert!(eigendata(&IntMat2::new(1, 1, 0, 1)).is_err()); // trace 2
        assert!(eigendata(&IntMat2::new(2, 1, 1, 2)).is_err()); // det 3
        assert!(eigendata(&IntMat2::new(-2, -1, -1, -1)).is_err()); // trace -3
    }

    #[test]
    fn op_norm_agrees_with_power_iteration() {
        let m = [[3.0, 1.0], [-2.0, 0.5]];
        let mut v = [1.0, 0.7];
        let g = mat2_mul(&mat2_transpose(&m), &m);
        for _ in 0..200 {
            v = normalize2(mat2_vec(&g, v)).unwrap();
        }
        let sigma = dot2(mat2_vec(&g, v), v).sqrt();
        assert_abs_diff_eq!(op_norm2(&m), sigma, epsilon = 1e-10);
        assert_abs_diff_eq!(
            op_norm2(&m) * min_sv2(&m),
            mat2_det(&m).abs(),
            epsilon = 1e-10
        );
    }

    #[test]
    fn int_power_small_cases() {
        let a2 = IntMat2::cat().real_power(2).unwrap();
        assert_eq!(a2, [[5.0, 3.0], [3.0, 2.0]]);
        let a4 = IntMat2::cat().real_power(4).unwrap();
        assert_eq!(a4, [[34.0, 21.0], [21.0, 13.0]]);
    }
}
