//! Second- and fourth-order tensor algebra in dimension 2 or 3.
//!
//! The two workhorses are the anisotropy-transport maps
//!
//! ```text
//! transform:            𝔸 ↦ (E ↦ A · 𝔸[AᵀE A] · Aᵀ)
//! residual_pushforward: Ŝ ↦ A · Ŝ(AᵀA) · Aᵀ
//! ```
//!
//! which carry a constitutive law written on the reference cell to a law in
//! physical coordinates. Symmetric fourth-order tensors additionally get a
//! norm-consistent Voigt (Mandel) matrix view with √2-weighted shear rows, so
//! eigenvalues of the matrix equal eigenvalues of the tensor restricted to
//! symmetric arguments; the coercivity constant is then a plain symmetric
//! eigensolve.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Default relative tolerance for the symmetry/orthogonality/invertibility
/// predicates.
pub const DEFAULT_TOL: f64 = 1e-12;

const SQRT2: f64 = std::f64::consts::SQRT_2;

fn check_dim(n: usize) -> Result<()> {
    if n == 2 || n == 3 {
        Ok(())
    } else {
        Err(Error::Invalid(format!("spatial dimension must be 2 or 3, got {n}")))
    }
}

/// Index pairs of the symmetric Voigt ordering: diagonal entries first, then
/// shears in (23, 13, 12) order (2D: (12) only).
pub fn sym_pairs(n: usize) -> &'static [(usize, usize)] {
    match n {
        2 => &[(0, 0), (1, 1), (0, 1)],
        3 => &[(0, 0), (1, 1), (2, 2), (1, 2), (0, 2), (0, 1)],
        _ => panic!("unsupported dimension {n}"),
    }
}

/// Dimension of the space of symmetric matrices, n(n+1)/2.
pub fn sym_dim(n: usize) -> usize {
    n * (n + 1) / 2
}

// ---------------------------------------------------------------------------
// Tensor2
// ---------------------------------------------------------------------------

/// Dense second-order tensor in dimension `n` (2 or 3), stored row-major in a
/// fixed 3×3 backing array. Indexing is `t[[i, j]]`.
#[derive(Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Tensor2Repr", into = "Tensor2Repr")]
pub struct Tensor2 {
    n: usize,
    a: [f64; 9],
}

#[derive(Serialize, Deserialize)]
struct Tensor2Repr {
    n: usize,
    /// Row-major components, n² entries.
    entries: Vec<f64>,
}

impl From<Tensor2> for Tensor2Repr {
    fn from(t: Tensor2) -> Self {
        let n = t.n;
        Tensor2Repr {
            n,
            entries: (0..n * n).map(|f| t.a[(f / n) * n + (f % n)]).collect(),
        }
    }
}

impl TryFrom<Tensor2Repr> for Tensor2 {
    type Error = Error;
    fn try_from(r: Tensor2Repr) -> Result<Self> {
        check_dim(r.n)?;
        if r.entries.len() != r.n * r.n {
            return Err(Error::Invalid(format!(
                "expected {} entries for a {0}x{0} tensor, got {1}",
                r.n,
                r.entries.len()
            )));
        }
        let mut t = Tensor2::zeros(r.n);
        for i in 0..r.n {
            for j in 0..r.n {
                t[[i, j]] = r.entries[i * r.n + j];
            }
        }
        Ok(t)
    }
}

impl std::ops::Index<[usize; 2]> for Tensor2 {
    type Output = f64;
    fn index(&self, idx: [usize; 2]) -> &f64 {
        &self.a[idx[0] * self.n + idx[1]]
    }
}

impl std::ops::IndexMut<[usize; 2]> for Tensor2 {
    fn index_mut(&mut self, idx: [usize; 2]) -> &mut f64 {
        &mut self.a[idx[0] * self.n + idx[1]]
    }
}

impl std::fmt::Debug for Tensor2 {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        writeln!(f, "Tensor2[{}]", self.n)?;
        for i in 0..self.n {
            write!(f, "  [")?;
            for j in 0..self.n {
                write!(f, " {:>13.6e}", self[[i, j]])?;
            }
            writeln!(f, " ]")?;
        }
        Ok(())
    }
}

impl Tensor2 {
    pub fn zeros(n: usize) -> Self {
        debug_assert!(n == 2 || n == 3);
        Tensor2 { n, a: [0.0; 9] }
    }

    pub fn identity(n: usize) -> Self {
        let mut t = Self::zeros(n);
        for i in 0..n {
            t[[i, i]] = 1.0;
        }
        t
    }

    pub fn from_rows(rows: &[&[f64]]) -> Self {
        let n = rows.len();
        let mut t = Self::zeros(n);
        for (i, r) in rows.iter().enumerate() {
            assert_eq!(r.len(), n, "row length mismatch");
            for (j, v) in r.iter().enumerate() {
                t[[i, j]] = *v;
            }
        }
        t
    }

    pub fn diagonal(d: &[f64]) -> Self {
        let mut t = Self::zeros(d.len());
        for (i, v) in d.iter().enumerate() {
            t[[i, i]] = *v;
        }
        t
    }

    /// Dyadic product a ⊗ b.
    pub fn outer(a: &[f64], b: &[f64]) -> Self {
        assert_eq!(a.len(), b.len());
        let mut t = Self::zeros(a.len());
        for i in 0..a.len() {
            for j in 0..b.len() {
                t[[i, j]] = a[i] * b[j];
            }
        }
        t
    }

    /// 2D rotation by `theta` radians.
    pub fn rotation_2d(theta: f64) -> Self {
        let (s, c) = theta.sin_cos();
        Self::from_rows(&[&[c, -s], &[s, c]])
    }

    /// 3D rotation Rz(yaw)·Ry(pitch)·Rx(roll).
    pub fn rotation_3d(yaw: f64, pitch: f64, roll: f64) -> Self {
        let rz = {
            let (s, c) = yaw.sin_cos();
            Self::from_rows(&[&[c, -s, 0.0], &[s, c, 0.0], &[0.0, 0.0, 1.0]])
        };
        let ry = {
            let (s, c) = pitch.sin_cos();
            Self::from_rows(&[&[c, 0.0, s], &[0.0, 1.0, 0.0], &[-s, 0.0, c]])
        };
        let rx = {
            let (s, c) = roll.sin_cos();
            Self::from_rows(&[&[1.0, 0.0, 0.0], &[0.0, c, -s], &[0.0, s, c]])
        };
        rz.mul(&ry).mul(&rx)
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn transpose(&self) -> Self {
        let mut t = Self::zeros(self.n);
        for i in 0..self.n {
            for j in 0..self.n {
                t[[i, j]] = self[[j, i]];
            }
        }
        t
    }

    pub fn mul(&self, o: &Tensor2) -> Self {
        assert_eq!(self.n, o.n, "dimension mismatch");
        let mut t = Self::zeros(self.n);
        for i in 0..self.n {
            for j in 0..self.n {
                let mut s = 0.0;
                for k in 0..self.n {
                    s += self[[i, k]] * o[[k, j]];
                }
                t[[i, j]] = s;
            }
        }
        t
    }

    pub fn mul_vec(&self, v: &[f64]) -> Vec<f64> {
        assert_eq!(v.len(), self.n);
        (0..self.n)
            .map(|i| (0..self.n).map(|j| self[[i, j]] * v[j]).sum())
            .collect()
    }

    pub fn add(&self, o: &Tensor2) -> Self {
        assert_eq!(self.n, o.n);
        let mut t = *self;
        for i in 0..9 {
            t.a[i] += o.a[i];
        }
        t
    }

    pub fn sub(&self, o: &Tensor2) -> Self {
        assert_eq!(self.n, o.n);
        let mut t = *self;
        for i in 0..9 {
            t.a[i] -= o.a[i];
        }
        t
    }

    pub fn scaled(&self, f: f64) -> Self {
        let mut t = *self;
        for v in &mut t.a {
            *v *= f;
        }
        t
    }

    pub fn sym(&self) -> Self {
        let mut t = Self::zeros(self.n);
        for i in 0..self.n {
            for j in 0..self.n {
                t[[i, j]] = 0.5 * (self[[i, j]] + self[[j, i]]);
            }
        }
        t
    }

    pub fn skew(&self) -> Self {
        self.sub(&self.sym())
    }

    pub fn trace(&self) -> f64 {
        (0..self.n).map(|i| self[[i, i]]).sum()
    }

    /// Frobenius inner product A·B.
    pub fn dot(&self, o: &Tensor2) -> f64 {
        assert_eq!(self.n, o.n);
        let mut s = 0.0;
        for i in 0..self.n {
            for j in 0..self.n {
                s += self[[i, j]] * o[[i, j]];
            }
        }
        s
    }

    pub fn norm(&self) -> f64 {
        self.dot(self).sqrt()
    }

    pub fn det(&self) -> f64 {
        match self.n {
            2 => self[[0, 0]] * self[[1, 1]] - self[[0, 1]] * self[[1, 0]],
            3 => {
                self[[0, 0]] * (self[[1, 1]] * self[[2, 2]] - self[[1, 2]] * self[[2, 1]])
                    - self[[0, 1]] * (self[[1, 0]] * self[[2, 2]] - self[[1, 2]] * self[[2, 0]])
                    + self[[0, 2]] * (self[[1, 0]] * self[[2, 1]] - self[[1, 1]] * self[[2, 0]])
            }
            _ => unreachable!(),
        }
    }

    pub fn inverse(&self) -> Result<Self> {
        let d = self.det();
        if !d.is_finite() || d.abs() <= f64::MIN_POSITIVE / f64::EPSILON {
            return Err(Error::Singular(format!("det = {d:.3e}")));
        }
        let mut t = Self::zeros(self.n);
        match self.n {
            2 => {
                t[[0, 0]] = self[[1, 1]] / d;
                t[[0, 1]] = -self[[0, 1]] / d;
                t[[1, 0]] = -self[[1, 0]] / d;
                t[[1, 1]] = self[[0, 0]] / d;
            }
            3 => {
                // adjugate / det
                for i in 0..3 {
                    for j in 0..3 {
                        let (a, b) = ((i + 1) % 3, (i + 2) % 3);
                        let (c, e) = ((j + 1) % 3, (j + 2) % 3);
                        t[[j, i]] = (self[[a, c]] * self[[b, e]] - self[[a, e]] * self[[b, c]]) / d;
                    }
                }
            }
            _ => unreachable!(),
        }
        Ok(t)
    }

    /// Inverse transpose, the gradient-transport factor H^{-⊤}.
    pub fn inv_t(&self) -> Result<Self> {
        Ok(self.inverse()?.transpose())
    }

    pub fn is_symmetric(&self, tol: f64) -> bool {
        self.skew().norm() <= tol * self.norm().max(1.0)
    }

    pub fn is_orthogonal(&self, tol: f64) -> bool {
        let g = self.transpose().mul(self);
        g.sub(&Self::identity(self.n)).norm() <= tol * self.norm().powi(2).max(1.0)
    }

    pub fn is_invertible(&self, tol: f64) -> bool {
        let scale = self.norm().powi(self.n as i32).max(f64::MIN_POSITIVE);
        self.det().abs() > tol * scale
    }

    /// 2-norm condition number via SVD.
    pub fn condition(&self) -> f64 {
        let m = DMatrix::from_fn(self.n, self.n, |i, j| self[[i, j]]);
        let sv = m.singular_values();
        let (mut lo, mut hi) = (f64::INFINITY, 0.0f64);
        for s in sv.iter() {
            lo = lo.min(*s);
            hi = hi.max(*s);
        }
        if lo == 0.0 {
            f64::INFINITY
        } else {
            hi / lo
        }
    }

    pub fn finite(&self) -> bool {
        (0..self.n).all(|i| (0..self.n).all(|j| self[[i, j]].is_finite()))
    }

    /// Voigt vector with √2-weighted shear entries (of the symmetric part).
    pub fn voigt(&self) -> Vec<f64> {
        let s = self.sym();
        sym_pairs(self.n)
            .iter()
            .map(|&(i, j)| if i == j { s[[i, j]] } else { SQRT2 * s[[i, j]] })
            .collect()
    }

    pub fn from_voigt(n: usize, v: &[f64]) -> Self {
        assert_eq!(v.len(), sym_dim(n));
        let mut t = Self::zeros(n);
        for (idx, &(i, j)) in sym_pairs(n).iter().enumerate() {
            let val = if i == j { v[idx] } else { v[idx] / SQRT2 };
            t[[i, j]] = val;
            t[[j, i]] = val;
        }
        t
    }

    /// Orthonormal basis of symmetric matrices: eᵢ⊗eᵢ, then
    /// (eᵢ⊗eⱼ+eⱼ⊗eᵢ)/√2 in Voigt order.
    /// Entries as a row vector-of-vectors; the JSON-facing layout.
    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        (0..self.n)
            .map(|i| (0..self.n).map(|j| self[[i, j]]).collect())
            .collect()
    }

    pub fn from_row_vecs(rows: &[Vec<f64>]) -> Result<Self> {
        let n = rows.len();
        if n != 2 && n != 3 {
            return Err(Error::Invalid(format!(
                "matrix must be 2x2 or 3x3, got {n} rows"
            )));
        }
        let mut t = Self::zeros(n);
        for (i, row) in rows.iter().enumerate() {
            if row.len() != n {
                return Err(Error::Invalid("matrix rows have inconsistent length".into()));
            }
            for (j, v) in row.iter().enumerate() {
                t[[i, j]] = *v;
            }
        }
        Ok(t)
    }

    pub fn sym_basis(n: usize, idx: usize) -> Self {
        let (i, j) = sym_pairs(n)[idx];
        let mut t = Self::zeros(n);
        if i == j {
            t[[i, i]] = 1.0;
        } else {
            t[[i, j]] = 1.0 / SQRT2;
            t[[j, i]] = 1.0 / SQRT2;
        }
        t
    }
}

// ---------------------------------------------------------------------------
// Tensor4
// ---------------------------------------------------------------------------

/// Report of a brute-force symmetry check over the canonical basis of Lin.
#[derive(Clone, Copy, Debug)]
pub struct SymmetryReport {
    pub minor: bool,
    pub major: bool,
    /// Largest absolute defect found across both checks.
    pub max_violation: f64,
}

/// Dense fourth-order tensor in dimension `n`, stored row-major (i,j,k,l) in
/// a fixed 3⁴ backing array. Indexing is `t[[i, j, k, l]]`.
///
/// The symmetry flags record what the constructor guarantees; they are
/// advisory (use [`Tensor4::check_symmetries`] to measure the actual defect).
#[derive(Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Tensor4Repr", into = "Tensor4Repr")]
pub struct Tensor4 {
    n: usize,
    c: [f64; 81],
    pub has_minor_symmetry: bool,
    pub has_major_symmetry: bool,
}

#[derive(Serialize, Deserialize)]
struct Tensor4Repr {
    n: usize,
    /// Row-major (i,j,k,l) components, n⁴ entries.
    entries: Vec<f64>,
    minor_symmetry: bool,
    major_symmetry: bool,
}

impl From<Tensor4> for Tensor4Repr {
    fn from(t: Tensor4) -> Self {
        let n = t.n;
        let mut entries = Vec::with_capacity(n * n * n * n);
        for i in 0..n {
            for j in 0..n {
                for k in 0..n {
                    for l in 0..n {
                        entries.push(t[[i, j, k, l]]);
                    }
                }
            }
        }
        Tensor4Repr {
            n,
            entries,
            minor_symmetry: t.has_minor_symmetry,
            major_symmetry: t.has_major_symmetry,
        }
    }
}

impl TryFrom<Tensor4Repr> for Tensor4 {
    type Error = Error;
    fn try_from(r: Tensor4Repr) -> Result<Self> {
        check_dim(r.n)?;
        let n = r.n;
        if r.entries.len() != n * n * n * n {
            return Err(Error::Invalid(format!(
                "expected {} entries for a dimension-{n} fourth-order tensor, got {}",
                n * n * n * n,
                r.entries.len()
            )));
        }
        let mut t = Tensor4::zeros(n);
        let mut it = r.entries.iter();
        for i in 0..n {
            for j in 0..n {
                for k in 0..n {
                    for l in 0..n {
                        t[[i, j, k, l]] = *it.next().unwrap();
                    }
                }
            }
        }
        t.has_minor_symmetry = r.minor_symmetry;
        t.has_major_symmetry = r.major_symmetry;
        Ok(t)
    }
}

impl std::ops::Index<[usize; 4]> for Tensor4 {
    type Output = f64;
    fn index(&self, m: [usize; 4]) -> &f64 {
        let n = self.n;
        &self.c[((m[0] * n + m[1]) * n + m[2]) * n + m[3]]
    }
}

impl std::ops::IndexMut<[usize; 4]> for Tensor4 {
    fn index_mut(&mut self, m: [usize; 4]) -> &mut f64 {
        let n = self.n;
        &mut self.c[((m[0] * n + m[1]) * n + m[2]) * n + m[3]]
    }
}

impl std::fmt::Debug for Tensor4 {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        writeln!(
            f,
            "Tensor4[{}] (minor: {}, major: {}), Voigt:",
            self.n, self.has_minor_symmetry, self.has_major_symmetry
        )?;
        let m = self.mandel_matrix();
        for i in 0..m.nrows() {
            write!(f, "  [")?;
            for j in 0..m.ncols() {
                write!(f, " {:>13.6e}", m[(i, j)])?;
            }
            writeln!(f, " ]")?;
        }
        Ok(())
    }
}

impl Tensor4 {
    pub fn zeros(n: usize) -> Self {
        debug_assert!(n == 2 || n == 3);
        Tensor4 {
            n,
            c: [0.0; 81],
            has_minor_symmetry: true,
            has_major_symmetry: true,
        }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    /// Isotropic elasticity ℂE = λ tr(E) 1 + 2μ sym(E). Rejects parameter
    /// combinations that are not coercive on symmetric matrices
    /// (needs μ > 0 and nλ + 2μ > 0).
    pub fn isotropic(n: usize, lambda: f64, mu: f64) -> Result<Self> {
        check_dim(n)?;
        if !(mu > 0.0 && n as f64 * lambda + 2.0 * mu > 0.0) {
            return Err(Error::Invalid(format!(
                "isotropic moduli not coercive: lambda = {lambda}, mu = {mu}"
            )));
        }
        let mut t = Self::zeros(n);
        for i in 0..n {
            for j in 0..n {
                for k in 0..n {
                    for l in 0..n {
                        let dij = (i == j) as u8 as f64;
                        let dkl = (k == l) as u8 as f64;
                        let dik = (i == k) as u8 as f64;
                        let djl = (j == l) as u8 as f64;
                        let dil = (i == l) as u8 as f64;
                        let djk = (j == k) as u8 as f64;
                        t[[i, j, k, l]] = lambda * dij * dkl + mu * (dik * djl + dil * djk);
                    }
                }
            }
        }
        Ok(t)
    }

    /// The symmetrizer 𝕊[A] = sym(A), the identity on symmetric matrices.
    pub fn symmetrizer(n: usize) -> Self {
        let mut t = Self::zeros(n);
        for i in 0..n {
            for j in 0..n {
                for k in 0..n {
                    for l in 0..n {
                        let dik = (i == k) as u8 as f64;
                        let djl = (j == l) as u8 as f64;
                        let dil = (i == l) as u8 as f64;
                        let djk = (j == k) as u8 as f64;
                        t[[i, j, k, l]] = 0.5 * (dik * djl + dil * djk);
                    }
                }
            }
        }
        t
    }

    /// Orthotropic stiffness in its principal frame from Voigt entries
    /// (c11, c22, c12, g12) with g12 = C₁₂₁₂.
    pub fn orthotropic_2d(c11: f64, c22: f64, c12: f64, g12: f64) -> Result<Self> {
        let mut t = Self::zeros(2);
        t[[0, 0, 0, 0]] = c11;
        t[[1, 1, 1, 1]] = c22;
        t[[0, 0, 1, 1]] = c12;
        t[[1, 1, 0, 0]] = c12;
        for &(i, j) in &[(0, 1), (1, 0)] {
            for &(k, l) in &[(0, 1), (1, 0)] {
                t[[i, j, k, l]] = g12;
            }
        }
        t.require_coercive()?;
        Ok(t)
    }

    /// Orthotropic stiffness in its principal frame from Voigt entries
    /// (c11, c22, c33, c23, c13, c12, g23, g13, g12).
    pub fn orthotropic_3d(k: &[f64; 9]) -> Result<Self> {
        let mut t = Self::zeros(3);
        let [c11, c22, c33, c23, c13, c12, g23, g13, g12] = *k;
        let diag = [c11, c22, c33];
        for i in 0..3 {
            t[[i, i, i, i]] = diag[i];
        }
        let off = [(1usize, 2usize, c23), (0, 2, c13), (0, 1, c12)];
        for &(i, j, v) in &off {
            t[[i, i, j, j]] = v;
            t[[j, j, i, i]] = v;
        }
        let sh = [(1usize, 2usize, g23), (0, 2, g13), (0, 1, g12)];
        for &(i, j, v) in &sh {
            for &(a, b) in &[(i, j), (j, i)] {
                for &(c, d) in &[(i, j), (j, i)] {
                    t[[a, b, c, d]] = v;
                }
            }
        }
        t.require_coercive()?;
        Ok(t)
    }

    /// Orthotropic stiffness with its principal frame rotated by `q`.
    /// With `q = 1` this is the base tensor itself.
    pub fn rotated_orthotropic(base: &Tensor4, q: &Tensor2) -> Result<Self> {
        if !q.is_orthogonal(1e-10) {
            return Err(Error::Invalid("orientation must be orthogonal".into()));
        }
        Ok(base.transform(q))
    }

    fn require_coercive(&self) -> Result<()> {
        let alpha = self.coercivity_constant()?;
        if alpha <= 0.0 {
            return Err(Error::Invalid(format!(
                "stiffness not coercive: smallest symmetric eigenvalue {alpha:.3e}"
            )));
        }
        Ok(())
    }

    /// Apply to a second-order tensor: σᵢⱼ = Σ Cᵢⱼₖₗ Eₖₗ.
    pub fn apply(&self, e: &Tensor2) -> Tensor2 {
        assert_eq!(self.n, e.dim(), "dimension mismatch");
        let n = self.n;
        let mut s = Tensor2::zeros(n);
        for i in 0..n {
            for j in 0..n {
                let mut acc = 0.0;
                for k in 0..n {
                    for l in 0..n {
                        acc += self[[i, j, k, l]] * e[[k, l]];
                    }
                }
                s[[i, j]] = acc;
            }
        }
        s
    }

    /// Transport of the constitutive tensor by `a`:
    /// returns 𝔹 with 𝔹[E] = a·𝕋[aᵀE a]·aᵀ, i.e.
    /// Bᵢⱼₖₗ = aᵢₚ aⱼ_q aₖᵣ aₗₛ Tₚqᵣₛ.
    ///
    /// Defined for every `a` (invertibility not required); minor and major
    /// symmetry of the operand are preserved. Transports compose as
    /// `t.transform(&(a.mul(&b))) == t.transform(&b).transform(&a)`.
    pub fn transform(&self, a: &Tensor2) -> Tensor4 {
        assert_eq!(self.n, a.dim(), "dimension mismatch");
        let n = self.n;
        let mut out = Self::zeros(n);
        for i in 0..n {
            for j in 0..n {
                for k in 0..n {
                    for l in 0..n {
                        let mut acc = 0.0;
                        for p in 0..n {
                            for q in 0..n {
                                let apq = a[[i, p]] * a[[j, q]];
                                for r in 0..n {
                                    for s in 0..n {
                                        acc += apq * a[[k, r]] * a[[l, s] ] * self[[p, q, r, s]];
                                    }
                                }
                            }
                        }
                        out[[i, j, k, l]] = acc;
                    }
                }
            }
        }
        out.has_minor_symmetry = self.has_minor_symmetry;
        out.has_major_symmetry = self.has_major_symmetry;
        out
    }

    pub fn add(&self, o: &Tensor4) -> Tensor4 {
        assert_eq!(self.n, o.n);
        let mut t = *self;
        for i in 0..81 {
            t.c[i] += o.c[i];
        }
        t.has_minor_symmetry = self.has_minor_symmetry && o.has_minor_symmetry;
        t.has_major_symmetry = self.has_major_symmetry && o.has_major_symmetry;
        t
    }

    pub fn sub(&self, o: &Tensor4) -> Tensor4 {
        let mut t = *self;
        assert_eq!(self.n, o.n);
        for i in 0..81 {
            t.c[i] -= o.c[i];
        }
        t.has_minor_symmetry = self.has_minor_symmetry && o.has_minor_symmetry;
        t.has_major_symmetry = self.has_major_symmetry && o.has_major_symmetry;
        t
    }

    pub fn scaled(&self, f: f64) -> Tensor4 {
        let mut t = *self;
        for v in &mut t.c {
            *v *= f;
        }
        t
    }

    pub fn norm(&self) -> f64 {
        let n = self.n;
        let mut s = 0.0;
        for i in 0..n {
            for j in 0..n {
                for k in 0..n {
                    for l in 0..n {
                        s += self[[i, j, k, l]] * self[[i, j, k, l]];
                    }
                }
            }
        }
        s.sqrt()
    }

    /// Brute-force symmetry measurement over the canonical basis of Lin:
    /// minor means 𝕋[A] = 𝕋[sym A] with symmetric values, major means
    /// D·𝕋E = E·𝕋D. The report carries the largest componentwise defect.
    pub fn check_symmetries(&self, tol: f64) -> SymmetryReport {
        let n = self.n;
        let mut minor_v: f64 = 0.0;
        let mut major_v: f64 = 0.0;
        for i in 0..n {
            for j in 0..n {
                for k in 0..n {
                    for l in 0..n {
                        let c = self[[i, j, k, l]];
                        minor_v = minor_v
                            .max((c - self[[j, i, k, l]]).abs())
                            .max((c - self[[i, j, l, k]]).abs());
                        major_v = major_v.max((c - self[[k, l, i, j]]).abs());
                    }
                }
            }
        }
        let scale = self.norm().max(1.0);
        SymmetryReport {
            minor: minor_v <= tol * scale,
            major: major_v <= tol * scale,
            max_violation: minor_v.max(major_v),
        }
    }

    /// Norm-consistent Voigt (Mandel) matrix: shear rows/columns carry a √2
    /// weight so the matrix is the representation of the tensor in the
    /// orthonormal basis [`Tensor2::sym_basis`]. Eigenvalues of this matrix
    /// are the eigenvalues of the tensor on symmetric arguments.
    pub fn mandel_matrix(&self) -> DMatrix<f64> {
        let pairs = sym_pairs(self.n);
        let s = pairs.len();
        DMatrix::from_fn(s, s, |a, b| {
            let (i, j) = pairs[a];
            let (k, l) = pairs[b];
            let wa = if i == j { 1.0 } else { SQRT2 };
            let wb = if k == l { 1.0 } else { SQRT2 };
            wa * wb * self[[i, j, k, l]]
        })
    }

    /// Rebuild a minor+major symmetric tensor from its Mandel matrix
    /// (the matrix itself is symmetrized first).
    pub fn from_mandel_matrix(n: usize, m: &DMatrix<f64>) -> Tensor4 {
        let pairs = sym_pairs(n);
        let s = pairs.len();
        assert_eq!(m.nrows(), s);
        assert_eq!(m.ncols(), s);
        let mut t = Self::zeros(n);
        for a in 0..s {
            let (i, j) = pairs[a];
            let wa = if i == j { 1.0 } else { SQRT2 };
            for b in 0..s {
                let (k, l) = pairs[b];
                let wb = if k == l { 1.0 } else { SQRT2 };
                let v = 0.5 * (m[(a, b)] + m[(b, a)]) / (wa * wb);
                t[[i, j, k, l]] = v;
                t[[j, i, k, l]] = v;
                t[[i, j, l, k]] = v;
                t[[j, i, l, k]] = v;
            }
        }
        t
    }

    /// Smallest eigenvalue of the tensor restricted to symmetric matrices
    /// (coercivity constant). Positive iff E·𝕋E ≥ α|E|² holds with α > 0.
    /// Only the major-symmetric part enters the quadratic form, so a major
    /// defect is harmless here; minor symmetry is required for the Mandel
    /// representation to be faithful.
    pub fn coercivity_constant(&self) -> Result<f64> {
        let rep = self.check_symmetries(1e-9);
        if !rep.minor {
            return Err(Error::Invalid(format!(
                "coercivity constant needs minor symmetry (violation {:.3e})",
                rep.max_violation
            )));
        }
        let m = self.mandel_matrix();
        let sym = (&m + m.transpose()) * 0.5;
        let eig = sym.symmetric_eigen();
        Ok(eig.eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min))
    }

    /// Mandel matrix as CSV lines, one row per line.
    pub fn voigt_csv(&self) -> String {
        let m = self.mandel_matrix();
        let mut out = String::new();
        for i in 0..m.nrows() {
            let row: Vec<String> = (0..m.ncols()).map(|j| format!("{}", m[(i, j)])).collect();
            out.push_str(&row.join(","));
            out.push('\n');
        }
        out
    }
}

// ---------------------------------------------------------------------------
// Residual stress generators
// ---------------------------------------------------------------------------

/// St. Venant-type stress response to a metric change C (= AᵀA):
/// Ŝ(C) = ½ ℂ[C − 1]. Vanishes at C = 1, so orthogonal transports are
/// stress-free.
pub fn st_venant_stress(elasticity: &Tensor4, metric: &Tensor2) -> Tensor2 {
    let n = metric.dim();
    let strain = metric.sub(&Tensor2::identity(n)).scaled(0.5);
    elasticity.apply(&strain)
}

/// Pushforward of a residual-stress generator by `a`:
/// S_r(a) = a · gen(aᵀa) · aᵀ. For any generator with gen(1) = 0 this
/// vanishes whenever `a` is orthogonal.
pub fn residual_pushforward(gen: impl Fn(&Tensor2) -> Tensor2, a: &Tensor2) -> Tensor2 {
    let c = a.transpose().mul(a);
    let s = gen(&c);
    a.mul(&s).mul(&a.transpose())
}
