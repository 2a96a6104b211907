//! Spatially varying transform fields over the macroscopic domain.
//!
//! Both maps that carry the microstructure around the domain, the cell
//! deformation H(x) and the anisotropy transport K(x), are pointwise n×n
//! invertible matrices. Internally they are plain closures ([`FieldFn`]);
//! the [`TransformField`] descriptor is the serializable counterpart used by
//! config files and gets compiled into a closure.
//!
//! The module also owns the rectangular macroscopic [`Domain`] and the
//! finite-difference reduction [`derive_h_from_l`] that turns a non-periodic
//! layout map L(x) into the local cell deformation H(x) = (∇(L⁻¹x))⁻¹.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::tensor::Tensor2;
use crate::{Error, Result};

/// Pointwise matrix field on the macroscopic domain.
pub type FieldFn = Arc<dyn Fn(&[f64]) -> Tensor2 + Send + Sync>;

pub fn constant_field(t: Tensor2) -> FieldFn {
    Arc::new(move |_| t)
}

/// Rotation field Q(a·x + b): in-plane rotation in 2D, rotation about the
/// third axis in 3D.
pub fn rotation_field(n: usize, a: Vec<f64>, b: f64) -> FieldFn {
    Arc::new(move |x: &[f64]| {
        let angle = b + a.iter().zip(x).map(|(ai, xi)| ai * xi).sum::<f64>();
        if n == 2 {
            Tensor2::rotation_2d(angle)
        } else {
            Tensor2::rotation_3d(angle, 0.0, 0.0)
        }
    })
}

// ---------------------------------------------------------------------------
// Domain
// ---------------------------------------------------------------------------

/// Axis-aligned macroscopic box.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Domain {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

impl Domain {
    pub fn new(lo: Vec<f64>, hi: Vec<f64>) -> Result<Domain> {
        let d = Domain { lo, hi };
        d.validate()?;
        Ok(d)
    }

    pub fn unit(n: usize) -> Domain {
        Domain {
            lo: vec![0.0; n],
            hi: vec![1.0; n],
        }
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.lo.len();
        if n != 2 && n != 3 {
            return Err(Error::Invalid(format!("domain must be 2D or 3D, got {n} axes")));
        }
        if self.hi.len() != n {
            return Err(Error::Invalid("domain lo/hi have different lengths".into()));
        }
        for d in 0..n {
            if !(self.hi[d] - self.lo[d]).is_finite() || self.hi[d] <= self.lo[d] {
                return Err(Error::Invalid(format!(
                    "domain axis {d} is empty: [{}, {}]",
                    self.lo[d], self.hi[d]
                )));
            }
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    pub fn extent(&self, d: usize) -> f64 {
        self.hi[d] - self.lo[d]
    }

    pub fn volume(&self) -> f64 {
        (0..self.dim()).map(|d| self.extent(d)).product()
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        (0..self.dim()).all(|d| x[d] >= self.lo[d] && x[d] <= self.hi[d])
    }

    pub fn center(&self) -> Vec<f64> {
        (0..self.dim())
            .map(|d| 0.5 * (self.lo[d] + self.hi[d]))
            .collect()
    }

    /// Inclusive tensor grid with `dims[d]` nodes per axis (a single node
    /// sits at the axis midpoint).
    pub fn sample_grid(&self, dims: &[usize]) -> Vec<Vec<f64>> {
        let n = self.dim();
        assert_eq!(dims.len(), n);
        let total: usize = dims.iter().product();
        let mut out = Vec::with_capacity(total);
        let mut idx = vec![0usize; n];
        for _ in 0..total {
            let x: Vec<f64> = (0..n)
                .map(|d| {
                    if dims[d] == 1 {
                        0.5 * (self.lo[d] + self.hi[d])
                    } else {
                        self.lo[d] + self.extent(d) * idx[d] as f64 / (dims[d] - 1) as f64
                    }
                })
                .collect();
            out.push(x);
            for d in (0..n).rev() {
                idx[d] += 1;
                if idx[d] < dims[d] {
                    break;
                }
                idx[d] = 0;
            }
        }
        out
    }

    /// Centers of a dims[0]×…×dims[n-1] partition into equal boxes.
    pub fn cell_centers(&self, dims: &[usize]) -> Vec<Vec<f64>> {
        let n = self.dim();
        assert_eq!(dims.len(), n);
        let total: usize = dims.iter().product();
        let mut out = Vec::with_capacity(total);
        let mut idx = vec![0usize; n];
        for _ in 0..total {
            let x: Vec<f64> = (0..n)
                .map(|d| self.lo[d] + self.extent(d) * (idx[d] as f64 + 0.5) / dims[d] as f64)
                .collect();
            out.push(x);
            for d in (0..n).rev() {
                idx[d] += 1;
                if idx[d] < dims[d] {
                    break;
                }
                idx[d] = 0;
            }
        }
        out
    }
}

// ---------------------------------------------------------------------------
// Config-facing descriptors
// ---------------------------------------------------------------------------

/// Serializable transform field, compiled to a [`FieldFn`] for use. Affine
/// scalar arguments are written as (a, b) pairs meaning a·x + b.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum TransformField {
    /// Constant matrix, given by rows.
    Constant { matrix: Vec<Vec<f64>> },
    /// Rotation by the affine angle a·x + b.
    Rotation { a: Vec<f64>, b: f64 },
    /// Simple shear 1 + γ e₀⊗e₁ with affine γ.
    Shear { a: Vec<f64>, b: f64 },
    /// (a·x + b)·1; the classic radially graded layout.
    IsotropicScale { a: Vec<f64>, b: f64 },
    /// Diagonal matrix with affine entries: diag(base_d + slopes_d·x).
    DiagonalAffine {
        base: Vec<f64>,
        slopes: Vec<Vec<f64>>,
    },
    /// Matrices sampled at the nodes of a grid over a box, multilinearly
    /// interpolated in between and clamped outside. Node-major with axis 0
    /// slowest, the same order [`Domain::sample_grid`] produces.
    Grid {
        domain: Domain,
        dims: Vec<usize>,
        matrices: Vec<Vec<Vec<f64>>>,
    },
    /// Treat the inner field as a non-periodic layout map L(x) and derive
    /// the cell deformation H = (∇(L⁻¹x))⁻¹ by finite differences.
    FromLayout { layout: Box<TransformField> },
}

fn affine(a: &[f64], b: f64, x: &[f64]) -> f64 {
    b + a.iter().zip(x).map(|(ai, xi)| ai * xi).sum::<f64>()
}

impl TransformField {
    pub fn compile(&self, n: usize) -> Result<FieldFn> {
        match self {
            TransformField::Constant { matrix } => {
                if matrix.len() != n || matrix.iter().any(|r| r.len() != n) {
                    return Err(Error::Config(format!("constant field matrix must be {n}x{n}")));
                }
                let mut t = Tensor2::zeros(n);
                for i in 0..n {
                    for j in 0..n {
                        t[[i, j]] = matrix[i][j];
                    }
                }
                if !t.is_invertible(1e-12) {
                    return Err(Error::Config("constant field matrix is singular".into()));
                }
                Ok(constant_field(t))
            }
            TransformField::Rotation { a, b } => {
                if a.len() != n {
                    return Err(Error::Config("rotation angle gradient has wrong length".into()));
                }
                Ok(rotation_field(n, a.clone(), *b))
            }
            TransformField::Shear { a, b } => {
                if a.len() != n {
                    return Err(Error::Config("shear gradient has wrong length".into()));
                }
                let (a, b) = (a.clone(), *b);
                Ok(Arc::new(move |x: &[f64]| {
                    let mut t = Tensor2::identity(n);
                    t[[0, 1]] = affine(&a, b, x);
                    t
                }))
            }
            TransformField::IsotropicScale { a, b } => {
                if a.len() != n {
                    return Err(Error::Config("scale gradient has wrong length".into()));
                }
                let (a, b) = (a.clone(), *b);
                Ok(Arc::new(move |x: &[f64]| {
                    Tensor2::identity(n).scaled(affine(&a, b, x))
                }))
            }
            TransformField::DiagonalAffine { base, slopes } => {
                if base.len() != n || slopes.len() != n || slopes.iter().any(|s| s.len() != n) {
                    return Err(Error::Config(
                        "diagonal field needs n base entries and n slope rows".into(),
                    ));
                }
                let (base, slopes) = (base.clone(), slopes.clone());
                Ok(Arc::new(move |x: &[f64]| {
                    let d: Vec<f64> = (0..n).map(|i| affine(&slopes[i], base[i], x)).collect();
                    Tensor2::diagonal(&d)
                }))
            }
            TransformField::Grid {
                domain,
                dims,
                matrices,
            } => {
                domain.validate()?;
                if domain.dim() != n || dims.len() != n {
                    return Err(Error::Config(
                        "grid field domain and dims must match the dimension".into(),
                    ));
                }
                if dims.iter().any(|d| *d < 2) {
                    return Err(Error::Config("grid field needs at least two nodes per axis".into()));
                }
                let expected: usize = dims.iter().product();
                if matrices.len() != expected {
                    return Err(Error::Config(format!(
                        "grid field needs {expected} node matrices, got {}",
                        matrices.len()
                    )));
                }
                let mut nodes = Vec::with_capacity(expected);
                for m in matrices {
                    let t = Tensor2::from_row_vecs(m)?;
                    if t.dim() != n {
                        return Err(Error::Config("grid field matrices must be n x n".into()));
                    }
                    if !t.is_invertible(1e-12) {
                        return Err(Error::Config("grid field has a singular node matrix".into()));
                    }
                    nodes.push(t);
                }
                let (domain, dims) = (domain.clone(), dims.clone());
                Ok(Arc::new(move |x: &[f64]| {
                    let mut base = [0usize; 3];
                    let mut frac = [0.0f64; 3];
                    for d in 0..n {
                        let cells = (dims[d] - 1) as f64;
                        let t = (x[d] - domain.lo[d]) / domain.extent(d) * cells;
                        let i = (t.floor() as i64).clamp(0, dims[d] as i64 - 2) as usize;
                        base[d] = i;
                        frac[d] = (t - i as f64).clamp(0.0, 1.0);
                    }
                    let mut out = Tensor2::zeros(n);
                    for corner in 0..(1usize << n) {
                        let mut w = 1.0;
                        let mut idx = 0usize;
                        for d in 0..n {
                            let bit = (corner >> d) & 1;
                            w *= if bit == 1 { frac[d] } else { 1.0 - frac[d] };
                            idx = idx * dims[d] + base[d] + bit;
                        }
                        if w != 0.0 {
                            out = out.add(&nodes[idx].scaled(w));
                        }
                    }
                    out
                }))
            }
            TransformField::FromLayout { layout } => {
                let l = layout.compile(n)?;
                Ok(Arc::new(move |x: &[f64]| {
                    derive_h_from_l(&l, x, 1e-5).unwrap_or_else(|_| Tensor2::identity(n))
                }))
            }
        }
    }
}

// ---------------------------------------------------------------------------
// Non-periodic reduction
// ---------------------------------------------------------------------------

/// Local cell deformation induced by a non-periodic layout map L(x): with
/// g(x) = L(x)⁻¹x, the reduced model uses H(x) = (∇g(x))⁻¹. The Jacobian is
/// taken by central differences with a step of `rel_step · max(1, |x|)`.
pub fn derive_h_from_l(l: &FieldFn, x: &[f64], rel_step: f64) -> Result<Tensor2> {
    let n = x.len();
    let scale = x.iter().fold(1.0f64, |m, v| m.max(v.abs()));
    let step = rel_step * scale;
    let g = |y: &[f64]| -> Result<Vec<f64>> {
        let lv = l(y);
        if !lv.is_invertible(1e-12) {
            return Err(Error::Singular(format!("layout map is singular near {y:?}")));
        }
        Ok(lv.inverse()?.mul_vec(y))
    };
    let mut jac = Tensor2::zeros(n);
    for d in 0..n {
        let mut xp = x.to_vec();
        let mut xm = x.to_vec();
        xp[d] += step;
        xm[d] -= step;
        let gp = g(&xp)?;
        let gm = g(&xm)?;
        for i in 0..n {
            jac[[i, d]] = (gp[i] - gm[i]) / (2.0 * step);
        }
    }
    if !jac.is_invertible(1e-10) {
        return Err(Error::Singular(
            "layout Jacobian is singular; the reduction is not defined here".into(),
        ));
    }
    jac.inverse()
}
