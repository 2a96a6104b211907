//! Realization of the microstructure at a finite scale ε: the patch
//! decomposition of the macroscopic domain and the resulting oscillatory
//! coefficient fields for direct simulation.
//!
//! The domain is covered by the absolute lattice of closed boxes of edge
//! ε^r (0 < r < 1, so patches are mesoscopic: much larger than ε, much
//! smaller than the domain). Within a patch the maps are frozen at the patch
//! center x_k, and the material is exactly ε H_k-periodic around the patch
//! anchor x̃_k:
//!
//!   ℂ^ε(x) = transform(ℂ_phase(ȳ), K_k),   ȳ = H_k⁻¹ (x − x̃_k) / ε mod 1.
//!
//! Anchors default to the patch centers; [`PatchDecomposition::with_lattice_anchors`]
//! aligns them with the level-ε lattice of a global phase map g, which is
//! what keeps the reduction of a non-periodic layout consistent with the
//! original field at the patch centers.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::cell::CellMaterial;
use crate::field::{Domain, FieldFn};
use crate::tensor::{Tensor2, Tensor4};
use crate::{Error, Result};

/// Anything that yields residual stress and elasticity at a macroscopic
/// point; implemented by the ε-resolved fields here and consumed by the
/// direct macroscopic solver.
pub trait CoefficientField: Send + Sync {
    fn dim(&self) -> usize;
    fn coefficients(&self, x: &[f64]) -> Result<(Tensor2, Tensor4)>;
}

// ---------------------------------------------------------------------------
// Patches
// ---------------------------------------------------------------------------

/// Cover of the domain by the absolute lattice of boxes with edge ε^r. Every
/// lattice box meeting the domain is a patch, including the partially
/// overlapping ones at the boundary.
#[derive(Clone, Debug)]
pub struct PatchDecomposition {
    pub domain: Domain,
    pub eps: f64,
    pub r: f64,
    /// Patch edge length ε^r.
    pub edge: f64,
    lo_idx: Vec<i64>,
    hi_idx: Vec<i64>,
    /// Patch centers x_k (centers of the full lattice boxes).
    pub centers: Vec<Vec<f64>>,
    /// Periodicity anchors x̃_k.
    pub anchors: Vec<Vec<f64>>,
}

fn check_scales(eps: f64, r: f64) -> Result<f64> {
    if !(eps > 0.0 && eps < 1.0) {
        return Err(Error::Invalid(format!("ε must lie in (0, 1), got {eps}")));
    }
    if !(r > 0.0 && r < 1.0) {
        return Err(Error::Invalid(format!(
            "the patch exponent r must lie in (0, 1), got {r}"
        )));
    }
    let edge = eps.powf(r);
    if edge <= eps {
        return Err(Error::Invalid(format!(
            "patch edge ε^r = {edge} does not dominate the period ε = {eps}"
        )));
    }
    Ok(edge)
}

impl PatchDecomposition {
    /// Decomposition with anchors at the patch centers.
    pub fn new(domain: Domain, eps: f64, r: f64) -> Result<PatchDecomposition> {
        domain.validate()?;
        let edge = check_scales(eps, r)?;
        let n = domain.dim();
        let mut lo_idx = Vec::with_capacity(n);
        let mut hi_idx = Vec::with_capacity(n);
        for d in 0..n {
            let lo = domain.lo[d] / edge;
            let hi = domain.hi[d] / edge;
            lo_idx.push(lo.floor() as i64);
            // a domain edge sitting exactly on a lattice line must not spawn
            // an empty extra patch
            hi_idx.push((hi - 1e-9 * hi.abs().max(1.0)).floor() as i64);
        }
        let mut centers = Vec::new();
        let mut idx = lo_idx.clone();
        loop {
            let c: Vec<f64> = (0..n).map(|d| (idx[d] as f64 + 0.5) * edge).collect();
            centers.push(c);
            let mut d = n;
            loop {
                if d == 0 {
                    break;
                }
                d -= 1;
                idx[d] += 1;
                if idx[d] <= hi_idx[d] {
                    break;
                }
                idx[d] = lo_idx[d];
                if d == 0 {
                    let anchors = centers.clone();
                    return Ok(PatchDecomposition {
                        domain,
                        eps,
                        r,
                        edge,
                        lo_idx,
                        hi_idx,
                        centers,
                        anchors,
                    });
                }
            }
        }
    }

    /// Decomposition whose anchors are aligned with the level-ε lattice of a
    /// global phase map g: x̃_k = x_k − ε H(x_k) frac(g(x_k)/ε). With this
    /// choice the frozen patch field reproduces the phase of the original
    /// layout at every patch center.
    pub fn with_lattice_anchors(
        domain: Domain,
        eps: f64,
        r: f64,
        g: &dyn Fn(&[f64]) -> Result<Vec<f64>>,
        h_field: &FieldFn,
    ) -> Result<PatchDecomposition> {
        let mut dec = PatchDecomposition::new(domain, eps, r)?;
        let n = dec.domain.dim();
        for (k, x_k) in dec.centers.iter().enumerate() {
            let gx = g(x_k)?;
            if gx.len() != n {
                return Err(Error::Invalid("phase map has wrong dimension".into()));
            }
            let frac: Vec<f64> = gx.iter().map(|v| (v / eps).rem_euclid(1.0)).collect();
            let shift = h_field(x_k).mul_vec(&frac);
            dec.anchors[k] = (0..n).map(|d| x_k[d] - eps * shift[d]).collect();
        }
        Ok(dec)
    }

    pub fn num_patches(&self) -> usize {
        self.centers.len()
    }

    /// Patch containing x, if any. Points exactly on a lattice seam belong
    /// to the box on the upper side.
    pub fn patch_of(&self, x: &[f64]) -> Option<usize> {
        let n = self.domain.dim();
        if !self.domain.contains(x) {
            return None;
        }
        let mut id = 0usize;
        for d in 0..n {
            let i = (x[d] / self.edge).floor() as i64;
            if i < self.lo_idx[d] || i > self.hi_idx[d] {
                return None;
            }
            let span = (self.hi_idx[d] - self.lo_idx[d] + 1) as usize;
            id = id * span + (i - self.lo_idx[d]) as usize;
        }
        Some(id)
    }
}

// ---------------------------------------------------------------------------
// Locally periodic field
// ---------------------------------------------------------------------------

struct PatchLaw {
    h_inv: Tensor2,
    anchor: Vec<f64>,
    transformed: Vec<Tensor4>,
    residual: Vec<Tensor2>,
}

/// The ε-scale coefficient field of a locally periodic microstructure: maps
/// frozen per patch, phases read off the underlying cell geometry.
pub struct MicroField {
    material: Arc<CellMaterial>,
    pub decomposition: PatchDecomposition,
    patches: Vec<PatchLaw>,
}

impl MicroField {
    pub fn build(
        material: Arc<CellMaterial>,
        decomposition: PatchDecomposition,
        h_field: &FieldFn,
        k_field: &FieldFn,
    ) -> Result<MicroField> {
        let n = material.dim();
        if decomposition.domain.dim() != n {
            return Err(Error::Invalid("domain and material dimensions differ".into()));
        }
        let mut patches = Vec::with_capacity(decomposition.num_patches());
        for (k, x_k) in decomposition.centers.iter().enumerate() {
            let h = h_field(x_k);
            let kk = k_field(x_k);
            if !h.is_invertible(1e-12) || !kk.is_invertible(1e-12) {
                return Err(Error::Singular(format!(
                    "transform maps are singular at patch center {x_k:?}"
                )));
            }
            let metric = kk.transpose().mul(&kk);
            let transformed: Vec<Tensor4> =
                material.phases.iter().map(|c| c.transform(&kk)).collect();
            let residual: Vec<Tensor2> = (0..material.num_phases())
                .map(|p| {
                    let gen = material.metric_stress(&metric, p);
                    kk.mul(&gen).mul(&kk.transpose())
                })
                .collect();
            patches.push(PatchLaw {
                h_inv: h.inverse()?,
                anchor: decomposition.anchors[k].clone(),
                transformed,
                residual,
            });
        }
        Ok(MicroField {
            material,
            decomposition,
            patches,
        })
    }

    pub fn eps(&self) -> f64 {
        self.decomposition.eps
    }

    pub fn material(&self) -> &Arc<CellMaterial> {
        &self.material
    }

    /// Cell coordinate ȳ (not yet wrapped) and patch id for a point.
    fn locate(&self, x: &[f64]) -> Result<(usize, Vec<f64>)> {
        let k = self.decomposition.patch_of(x).ok_or_else(|| {
            Error::Invalid(format!("point {x:?} lies outside the patched domain"))
        })?;
        let patch = &self.patches[k];
        let n = self.material.dim();
        let rel: Vec<f64> = (0..n).map(|d| x[d] - patch.anchor[d]).collect();
        let y = patch.h_inv.mul_vec(&rel);
        let eps = self.decomposition.eps;
        Ok((k, y.iter().map(|v| v / eps).collect()))
    }

    /// Phase at a macroscopic point.
    pub fn phase_at(&self, x: &[f64]) -> Result<usize> {
        let (_, y) = self.locate(x)?;
        Ok(self.material.geometry.phase_at(&y))
    }
}

impl CoefficientField for MicroField {
    fn dim(&self) -> usize {
        self.material.dim()
    }

    fn coefficients(&self, x: &[f64]) -> Result<(Tensor2, Tensor4)> {
        let (k, y) = self.locate(x)?;
        let patch = &self.patches[k];
        let p = self.material.geometry.phase_at(&y);
        Ok((patch.residual[p], patch.transformed[p]))
    }
}

// ---------------------------------------------------------------------------
// Non-periodic layouts and their reduction
// ---------------------------------------------------------------------------

/// Oscillatory field of a genuinely non-periodic layout map L(x): the phase
/// is read at ȳ = L(x)⁻¹x / ε and the law is transported by K = L(x)
/// pointwise. No patches, no freezing; the reference the reduction is
/// measured against.
pub struct NonperiodicField {
    pub material: Arc<CellMaterial>,
    pub layout: FieldFn,
    pub eps: f64,
}

impl NonperiodicField {
    /// The global phase map g(x) = L(x)⁻¹ x.
    pub fn phase_map(&self, x: &[f64]) -> Result<Vec<f64>> {
        let l = (self.layout)(x);
        if !l.is_invertible(1e-12) {
            return Err(Error::Singular(format!("layout map singular at {x:?}")));
        }
        Ok(l.inverse()?.mul_vec(x))
    }
}

impl CoefficientField for NonperiodicField {
    fn dim(&self) -> usize {
        self.material.dim()
    }

    fn coefficients(&self, x: &[f64]) -> Result<(Tensor2, Tensor4)> {
        let g = self.phase_map(x)?;
        let y: Vec<f64> = g.iter().map(|v| v / self.eps).collect();
        let p = self.material.geometry.phase_at(&y);
        let k = (self.layout)(x);
        let metric = k.transpose().mul(&k);
        let gen = self.material.metric_stress(&metric, p);
        Ok((
            k.mul(&gen).mul(&k.transpose()),
            self.material.phases[p].transform(&k),
        ))
    }
}

/// Quality of a locally periodic reduction of a non-periodic layout at one
/// scale ε.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct ReductionReport {
    pub eps: f64,
    /// Relative L² distance between the two elasticity fields, Monte Carlo
    /// sampled.
    pub tensor_l2: f64,
    /// Fraction of sample points whose phase disagrees.
    pub phase_mismatch: f64,
    pub samples: usize,
}

/// Monte Carlo comparison of a non-periodic field against its patched
/// reduction over the interior of the domain (a small margin is trimmed so
/// every sample lands in a patch). Deterministic for a fixed seed.
pub fn reduction_distance(
    full: &NonperiodicField,
    reduced: &MicroField,
    samples: usize,
    seed: u64,
) -> Result<ReductionReport> {
    let domain = &reduced.decomposition.domain;
    let n = domain.dim();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let margin = 1e-9;
    let mut num = 0.0;
    let mut den = 0.0;
    let mut mismatched = 0usize;
    for _ in 0..samples {
        let x: Vec<f64> = (0..n)
            .map(|d| {
                let t = rng.gen_range(margin..1.0 - margin);
                domain.lo[d] + t * domain.extent(d)
            })
            .collect();
        let (_, c_full) = full.coefficients(&x)?;
        let (_, c_red) = reduced.coefficients(&x)?;
        num += c_full.sub(&c_red).norm().powi(2);
        den += c_full.norm().powi(2);
        let p_full = {
            let g = full.phase_map(&x)?;
            let y: Vec<f64> = g.iter().map(|v| v / full.eps).collect();
            full.material.geometry.phase_at(&y)
        };
        if p_full != reduced.phase_at(&x)? {
            mismatched += 1;
        }
    }
    Ok(ReductionReport {
        eps: full.eps,
        tensor_l2: (num / den).sqrt(),
        phase_mismatch: mismatched as f64 / samples as f64,
        samples,
    })
}

/// Same comparison on the midpoint-quadrature grid with `dims[d]` cells per
/// axis, so the measure is fully deterministic without a seed.
pub fn reduction_distance_grid(
    full: &NonperiodicField,
    reduced: &MicroField,
    dims: &[usize],
) -> Result<ReductionReport> {
    let domain = &reduced.decomposition.domain;
    if dims.len() != domain.dim() {
        return Err(Error::Invalid("grid dims must match the domain dimension".into()));
    }
    let mut num = 0.0;
    let mut den = 0.0;
    let mut mismatched = 0usize;
    let centers = domain.cell_centers(dims);
    for x in &centers {
        let (_, c_full) = full.coefficients(x)?;
        let (_, c_red) = reduced.coefficients(x)?;
        num += c_full.sub(&c_red).norm().powi(2);
        den += c_full.norm().powi(2);
        let p_full = {
            let g = full.phase_map(x)?;
            let y: Vec<f64> = g.iter().map(|v| v / full.eps).collect();
            full.material.geometry.phase_at(&y)
        };
        if p_full != reduced.phase_at(x)? {
            mismatched += 1;
        }
    }
    Ok(ReductionReport {
        eps: full.eps,
        tensor_l2: (num / den).sqrt(),
        phase_mismatch: mismatched as f64 / centers.len() as f64,
        samples: centers.len(),
    })
}

/// Build the locally periodic reduction of a non-periodic layout: H derived
/// from the layout Jacobian, K = L, anchors aligned with the level-ε lattice
/// of g = L⁻¹x.
pub fn reduce_nonperiodic(
    material: Arc<CellMaterial>,
    layout: &FieldFn,
    domain: Domain,
    eps: f64,
    r: f64,
) -> Result<MicroField> {
    let layout_for_h = layout.clone();
    let h_field: FieldFn = Arc::new(move |x: &[f64]| {
        crate::field::derive_h_from_l(&layout_for_h, x, 1e-5)
            .unwrap_or_else(|_| Tensor2::identity(x.len()))
    });
    let layout_for_g = layout.clone();
    let g = move |x: &[f64]| -> Result<Vec<f64>> {
        let l = layout_for_g(x);
        if !l.is_invertible(1e-12) {
            return Err(Error::Singular(format!("layout map singular at {x:?}")));
        }
        Ok(l.inverse()?.mul_vec(x))
    };
    let dec = PatchDecomposition::with_lattice_anchors(domain, eps, r, &g, &h_field)?;
    MicroField::build(material, dec, &h_field, layout)
}

// ---------------------------------------------------------------------------
// Field export
// ---------------------------------------------------------------------------

#[derive(Serialize)]
struct FieldExportHeader {
    dim: usize,
    dims: Vec<usize>,
    lo: Vec<f64>,
    hi: Vec<f64>,
    eps: f64,
    /// Per sample: residual stress in Voigt form, then the rows of the
    /// elasticity Voigt matrix, all little-endian f64.
    layout: String,
    data: String,
}

/// Sample a coefficient field at the cell centers of a grid and write it as
/// a JSON header plus a binary block.
pub fn export_field(
    field: &dyn CoefficientField,
    domain: &Domain,
    dims: &[usize],
    eps: f64,
    dir: &std::path::Path,
    stem: &str,
) -> Result<std::path::PathBuf> {
    std::fs::create_dir_all(dir)?;
    let n = field.dim();
    let s = crate::tensor::sym_dim(n);
    let mut bytes = Vec::new();
    for x in domain.cell_centers(dims) {
        let (res, c) = field.coefficients(&x)?;
        for v in res.voigt() {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        let m = c.mandel_matrix();
        for i in 0..s {
            for j in 0..s {
                bytes.extend_from_slice(&m[(i, j)].to_le_bytes());
            }
        }
    }
    let data_name = format!("{stem}.bin");
    std::fs::write(dir.join(&data_name), &bytes)?;
    let header = FieldExportHeader {
        dim: n,
        dims: dims.to_vec(),
        lo: domain.lo.clone(),
        hi: domain.hi.clone(),
        eps,
        layout: "residual_voigt,elasticity_voigt_rows".to_string(),
        data: data_name,
    };
    let path = dir.join(format!("{stem}.json"));
    std::fs::write(&path, serde_json::to_string_pretty(&header)?)?;
    Ok(path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cell::{CellMesh, Geometry};
    use crate::field::{constant_field, TransformField};

    fn laminate_material() -> Arc<CellMaterial> {
        let mesh = CellMesh::build(2, 4).unwrap();
        let g = Geometry::Laminate {
            axis: 0,
            fractions: vec![0.5, 0.5],
        };
        CellMaterial::two_phase(
            mesh,
            g,
            Tensor4::isotropic(2, 1.0, 1.0).unwrap(),
            Tensor4::isotropic(2, 10.0, 10.0).unwrap(),
        )
        .unwrap()
    }

    #[test]
    fn shifted_domain_takes_partial_boundary_patches() {
        // edge = (1/16)^(1/2) = 1/4; the box (0.1, 1.1)² meets lattice cells
        // 0..=4 on both axes, so 25 patches, the boundary ones partial
        let domain = Domain::new(vec![0.1, 0.1], vec![1.1, 1.1]).unwrap();
        let dec = PatchDecomposition::new(domain, 1.0 / 16.0, 0.5).unwrap();
        assert!((dec.edge - 0.25).abs() < 1e-15);
        assert_eq!(dec.num_patches(), 25);
        assert_eq!(dec.patch_of(&[0.11, 0.11]), Some(0));
        assert_eq!(dec.patch_of(&[1.09, 1.09]), Some(24));
        assert_eq!(dec.patch_of(&[0.05, 0.5]), None);
    }

    #[test]
    fn aligned_unit_domain_has_exact_cover() {
        let dec = PatchDecomposition::new(Domain::unit(2), 1.0 / 32.0, 0.6).unwrap();
        // edge = 32^-0.6 = 0.125 divides the unit box exactly
        assert_eq!(dec.num_patches(), 64);
        assert!(dec.edge > dec.eps);
        // centers tile the domain
        assert_eq!(dec.patch_of(&dec.centers[17].clone()), Some(17));
    }

    #[test]
    fn scale_validation() {
        assert!(PatchDecomposition::new(Domain::unit(2), 1.5, 0.5).is_err());
        assert!(PatchDecomposition::new(Domain::unit(2), 0.1, 1.0).is_err());
        assert!(PatchDecomposition::new(Domain::unit(2), 0.1, -0.2).is_err());
    }

    #[test]
    fn micro_field_is_periodic_within_a_patch() {
        let material = laminate_material();
        let id = constant_field(Tensor2::identity(2));
        let dec = PatchDecomposition::new(Domain::unit(2), 0.25, 0.5).unwrap();
        let field = MicroField::build(material, dec, &id, &id).unwrap();
        // edge 0.5, so (0.1, 0.1) and (0.1 + ε, 0.1) share patch (0,0)
        let a = field.phase_at(&[0.1, 0.1]).unwrap();
        let b = field.phase_at(&[0.35, 0.1]).unwrap();
        assert_eq!(a, b);
        let (_, ca) = field.coefficients(&[0.1, 0.1]).unwrap();
        let (_, cb) = field.coefficients(&[0.35, 0.1]).unwrap();
        assert_eq!(ca.sub(&cb).norm(), 0.0);
        assert!(field.coefficients(&[1.5, 0.2]).is_err());
    }

    #[test]
    fn identity_layout_with_lattice_anchors_is_globally_periodic() {
        // with H = K = 1 and anchors on the ε-lattice the patched field must
        // coincide with the plain periodic layout phase(x/ε) across ALL
        // patches, seams included
        let material = laminate_material();
        let id = constant_field(Tensor2::identity(2));
        let g = |x: &[f64]| -> Result<Vec<f64>> { Ok(x.to_vec()) };
        let eps = 0.125;
        let dec =
            PatchDecomposition::with_lattice_anchors(Domain::unit(2), eps, 0.5, &g, &id).unwrap();
        let field = MicroField::build(material.clone(), dec, &id, &id).unwrap();
        for &x in &[
            [0.03, 0.2],
            [0.49, 0.51],
            [0.77, 0.12],
            [0.961, 0.961],
            [0.26, 0.9],
        ] {
            let direct = material.geometry.phase_at(&[x[0] / eps, x[1] / eps]);
            assert_eq!(field.phase_at(&x).unwrap(), direct, "at {x:?}");
        }
    }

    #[test]
    fn patch_tensors_are_transported_by_k() {
        let material = laminate_material();
        let theta = 0.35f64;
        let k = constant_field(Tensor2::rotation_2d(theta));
        let id = constant_field(Tensor2::identity(2));
        let dec = PatchDecomposition::new(Domain::unit(2), 0.25, 0.5).unwrap();
        let field = MicroField::build(material.clone(), dec, &id, &k).unwrap();
        let x = [0.1, 0.1];
        let p = field.phase_at(&x).unwrap();
        let (res, c) = field.coefficients(&x).unwrap();
        let expect = material.phases[p].transform(&Tensor2::rotation_2d(theta));
        assert_eq!(c.sub(&expect).norm(), 0.0);
        // rotations are metric-free: no residual stress
        assert!(res.norm() < 1e-14);
    }

    #[test]
    fn nonperiodic_reduction_improves_with_finer_scale() {
        let material = laminate_material();
        let layout = TransformField::IsotropicScale {
            a: vec![0.2, 0.0],
            b: 1.0,
        }
        .compile(2)
        .unwrap();
        let domain = Domain::unit(2);
        let mut diffs = Vec::new();
        for eps in [1.0 / 8.0, 1.0 / 16.0, 1.0 / 32.0] {
            let full = NonperiodicField {
                material: material.clone(),
                layout: layout.clone(),
                eps,
            };
            let reduced =
                reduce_nonperiodic(material.clone(), &layout, domain.clone(), eps, 0.5).unwrap();
            let rep = reduction_distance(&full, &reduced, 600, 11).unwrap();
            diffs.push(rep.tensor_l2);
        }
        assert!(
            diffs[0] > diffs[1] && diffs[1] > diffs[2],
            "field distances not decreasing: {diffs:?}"
        );
    }

    #[test]
    fn field_export_writes_expected_sizes() {
        let material = laminate_material();
        let id = constant_field(Tensor2::identity(2));
        let dec = PatchDecomposition::new(Domain::unit(2), 0.25, 0.5).unwrap();
        let field = MicroField::build(material, dec, &id, &id).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let header =
            export_field(&field, &Domain::unit(2), &[4, 4], 0.25, dir.path(), "field").unwrap();
        assert!(header.exists());
        let bin = std::fs::read(dir.path().join("field.bin")).unwrap();
        // per sample: 3 residual + 9 elasticity doubles in 2D
        assert_eq!(bin.len(), 16 * (3 + 9) * 8);
    }
}
