//! Assembly and solution of the periodic corrector problems on the unit
//! cell.
//!
//! Every corrector problem is attached to a pair of invertible maps (H, K):
//! H deforms the periodicity cell, so test and trial gradients appear as
//! G(w) = H⁻ᵀ ∇w H⁻¹, while K transports the constitutive law, so each phase
//! acts through the pushed-forward tensor T = transform(ℂ, K) and carries the
//! residual stress R = K Ŝ(KᵀK) Kᵀ. The bilinear form is
//!
//!   a(w, v) = ∫_Y G(v) · T[G(w)] dy,
//!
//! discretized with Q1 elements on the structured periodic mesh. Because the
//! grid is uniform and the coefficients are constant per element, one dense
//! element matrix per phase covers the whole assembly.
//!
//! The operator kernel consists of the constant vector fields; the conjugate
//! gradient iteration is kept orthogonal to it by subtracting per-component
//! means (on a uniform periodic grid the nodal mean is the integral mean
//! exactly). Assembled operators are cached per quantized (H, K) so repeated
//! loadings at the same point reuse the factor-free solver state.

use std::collections::HashMap;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};

use crate::cell::{CellMaterial, CellMesh};
use crate::q1;
use crate::sparse::{pcg, CgOptions, CsrMatrix};
use crate::tensor::{Tensor2, Tensor4};
use crate::{Error, Result};

#[derive(Clone, Copy, Debug)]
pub struct SolverOptions {
    /// Relative CG tolerance for all corrector solves.
    pub rel_tol: f64,
    pub max_iterations: usize,
    /// Quantum used to key the operator and residual-flux caches; two (H, K)
    /// pairs whose entries agree to this resolution share an operator.
    pub cache_quantum: f64,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions {
            rel_tol: 1e-10,
            max_iterations: 50_000,
            cache_quantum: 1e-12,
        }
    }
}

/// Running counters for the expensive operations; examples and the
/// verification suite read these to prove that the fast paths avoid
/// re-solving.
#[derive(Default)]
pub struct SolveStats {
    assemblies: AtomicUsize,
    cache_hits: AtomicUsize,
    strain_solves: AtomicUsize,
    stress_solves: AtomicUsize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct StatsSnapshot {
    pub assemblies: usize,
    pub cache_hits: usize,
    /// Corrector solves driven by a macroscopic strain.
    pub strain_solves: usize,
    /// Corrector solves driven by a per-phase stress (residual problems).
    pub stress_solves: usize,
}

impl SolveStats {
    fn snapshot(&self) -> StatsSnapshot {
        StatsSnapshot {
            assemblies: self.assemblies.load(Ordering::Relaxed),
            cache_hits: self.cache_hits.load(Ordering::Relaxed),
            strain_solves: self.strain_solves.load(Ordering::Relaxed),
            stress_solves: self.stress_solves.load(Ordering::Relaxed),
        }
    }

    fn reset(&self) {
        self.assemblies.store(0, Ordering::Relaxed);
        self.cache_hits.store(0, Ordering::Relaxed);
        self.strain_solves.store(0, Ordering::Relaxed);
        self.stress_solves.store(0, Ordering::Relaxed);
    }
}

type OperatorKey = [i64; 18];

fn quantize_pair(h: &Tensor2, k: &Tensor2, quantum: f64) -> OperatorKey {
    let mut key = [0i64; 18];
    let n = h.dim();
    for i in 0..n {
        for j in 0..n {
            key[i * 3 + j] = (h[[i, j]] / quantum).round() as i64;
            key[9 + i * 3 + j] = (k[[i, j]] / quantum).round() as i64;
        }
    }
    key
}

fn quantize_metric(c: &Tensor2, quantum: f64) -> [i64; 9] {
    let mut key = [0i64; 9];
    for i in 0..c.dim() {
        for j in 0..c.dim() {
            key[i * 3 + j] = (c[[i, j]] / quantum).round() as i64;
        }
    }
    key
}

/// Cell solver bound to one microscale material. Owns the operator cache and
/// the solve counters; cheap to share across threads.
pub struct CellSolver {
    material: Arc<CellMaterial>,
    opts: SolverOptions,
    operators: Mutex<HashMap<OperatorKey, Arc<CellOperator>>>,
    /// Canonical residual fluxes σ̃(C), keyed by the quantized metric C.
    residual_fluxes: Mutex<HashMap<[i64; 9], Tensor2>>,
    stats: Arc<SolveStats>,
}

impl CellSolver {
    pub fn new(material: Arc<CellMaterial>, opts: SolverOptions) -> CellSolver {
        CellSolver {
            material,
            opts,
            operators: Mutex::new(HashMap::new()),
            residual_fluxes: Mutex::new(HashMap::new()),
            stats: Arc::new(SolveStats::default()),
        }
    }

    pub fn material(&self) -> &Arc<CellMaterial> {
        &self.material
    }

    pub fn options(&self) -> &SolverOptions {
        &self.opts
    }

    pub fn stats(&self) -> StatsSnapshot {
        self.stats.snapshot()
    }

    pub fn reset_stats(&self) {
        self.stats.reset();
    }

    /// Assembled operator for the pair (H, K), reusing the cache when the
    /// pair has been seen before (up to the cache quantum).
    pub fn operator_at(&self, h: &Tensor2, k: &Tensor2) -> Result<Arc<CellOperator>> {
        let n = self.material.dim();
        for (name, t) in [("H", h), ("K", k)] {
            if t.dim() != n {
                return Err(Error::Invalid(format!("{name} has wrong dimension")));
            }
            if !t.finite() {
                return Err(Error::Invalid(format!("{name} has non-finite entries")));
            }
            if !t.is_invertible(1e-12) {
                return Err(Error::Singular(format!("{name} = {t:?} is not invertible")));
            }
        }
        let key = quantize_pair(h, k, self.opts.cache_quantum);
        let mut cache = self.operators.lock().unwrap();
        if let Some(op) = cache.get(&key) {
            self.stats.cache_hits.fetch_add(1, Ordering::Relaxed);
            return Ok(op.clone());
        }
        let op = Arc::new(CellOperator::assemble(
            self.material.clone(),
            *h,
            *k,
            self.opts,
            self.stats.clone(),
        )?);
        self.stats.assemblies.fetch_add(1, Ordering::Relaxed);
        cache.insert(key, op.clone());
        Ok(op)
    }

    /// Operator at H = K = 1; every fast-path quantity reduces to solves on
    /// this one.
    pub fn canonical_operator(&self) -> Result<Arc<CellOperator>> {
        let id = Tensor2::identity(self.material.dim());
        self.operator_at(&id, &id)
    }

    pub fn solve_corrector(&self, h: &Tensor2, k: &Tensor2, e: &Tensor2) -> Result<CorrectorField> {
        self.operator_at(h, k)?.solve_strain(e)
    }

    pub fn solve_residual_corrector(&self, h: &Tensor2, k: &Tensor2) -> Result<CorrectorField> {
        self.operator_at(h, k)?.solve_residual()
    }

    /// Canonical residual flux σ̃(C): the homogenized stress produced by the
    /// per-phase generator stresses Ŝₚ(C) on the undeformed cell. For H = K
    /// the effective residual stress is exactly K σ̃(KᵀK) Kᵀ, so this is
    /// cached by the metric C; a rotation-valued K field, for instance, hits
    /// a single cache entry.
    pub fn residual_flux_for_metric(&self, c_metric: &Tensor2) -> Result<Tensor2> {
        if !c_metric.is_symmetric(1e-10) {
            return Err(Error::Invalid("metric must be symmetric".into()));
        }
        let key = quantize_metric(c_metric, self.opts.cache_quantum);
        if let Some(flux) = self.residual_fluxes.lock().unwrap().get(&key) {
            self.stats.cache_hits.fetch_add(1, Ordering::Relaxed);
            return Ok(*flux);
        }
        let op = self.canonical_operator()?;
        let stresses: Vec<Tensor2> = (0..self.material.num_phases())
            .map(|p| self.material.metric_stress(c_metric, p))
            .collect();
        let w = op.solve_stress_forced(&stresses)?;
        let flux = op.average_stress_flux(&w, &stresses);
        self.residual_fluxes.lock().unwrap().insert(key, flux);
        Ok(flux)
    }
}

/// One assembled periodic operator: the transformed per-phase tensors, the
/// symmetrized stiffness matrix and its Jacobi preconditioner.
pub struct CellOperator {
    material: Arc<CellMaterial>,
    h: Tensor2,
    k: Tensor2,
    hinv_t: Tensor2,
    transformed: Vec<Tensor4>,
    residual_stress: Vec<Tensor2>,
    mat: CsrMatrix,
    inv_diag: Vec<f64>,
    opts: SolverOptions,
    stats: Arc<SolveStats>,
}

/// Subtract the per-component mean: the orthogonal projection onto the
/// complement of the constant fields, which form the operator kernel.
fn mean_project(n: usize, v: &mut [f64]) {
    let nodes = v.len() / n;
    for c in 0..n {
        let mut mean = 0.0;
        for a in 0..nodes {
            mean += v[a * n + c];
        }
        mean /= nodes as f64;
        for a in 0..nodes {
            v[a * n + c] -= mean;
        }
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

impl CellOperator {
    fn assemble(
        material: Arc<CellMaterial>,
        h: Tensor2,
        k: Tensor2,
        opts: SolverOptions,
        stats: Arc<SolveStats>,
    ) -> Result<CellOperator> {
        let mesh = material.mesh.clone();
        let n = mesh.dim();
        let hinv_t = h.inv_t()?;

        let mut transformed = Vec::with_capacity(material.num_phases());
        let mut residual_stress = Vec::with_capacity(material.num_phases());
        let kt_k = k.transpose().mul(&k);
        for (p, c) in material.phases.iter().enumerate() {
            let t = c.transform(&k);
            let alpha = t.coercivity_constant()?;
            if alpha <= 0.0 {
                return Err(Error::Invalid(format!(
                    "transported phase {p} lost coercivity (smallest eigenvalue {alpha:.3e})"
                )));
            }
            transformed.push(t);
            let gen = material.metric_stress(&kt_k, p);
            residual_stress.push(k.mul(&gen).mul(&k.transpose()));
        }

        let element_stiffness: Vec<Vec<f64>> = transformed
            .iter()
            .map(|t| local_stiffness(&mesh, &hinv_t, t))
            .collect();

        let ndof = mesh.num_nodes() * n;
        let mut columns: Vec<Vec<usize>> = vec![Vec::new(); ndof];
        for e in 0..mesh.num_elements() {
            let nodes = mesh.element_nodes(e);
            for &a in &nodes {
                for &b in &nodes {
                    for i in 0..n {
                        for kk in 0..n {
                            columns[a * n + i].push(b * n + kk);
                        }
                    }
                }
            }
        }
        let mut mat = CsrMatrix::from_pattern(columns);

        let nc = q1::num_corners(n);
        for e in 0..mesh.num_elements() {
            let ke = &element_stiffness[material.phase_of[e] as usize];
            let nodes = mesh.element_nodes(e);
            let s = nc * n;
            for (b, &nb) in nodes.iter().enumerate() {
                for i in 0..n {
                    let row = b * n + i;
                    for (a, &na) in nodes.iter().enumerate() {
                        for kk in 0..n {
                            mat.add(nb * n + i, na * n + kk, ke[row * s + (a * n + kk)]);
                        }
                    }
                }
            }
        }
        // the form is symmetric; averaging out the last bits of float
        // asymmetry keeps CG textbook-clean
        mat.symmetrize();

        let diag = mat.diagonal();
        let mut inv_diag = Vec::with_capacity(ndof);
        for (i, d) in diag.iter().enumerate() {
            if *d <= 0.0 {
                return Err(Error::Singular(format!(
                    "nonpositive stiffness diagonal {d:.3e} at dof {i}"
                )));
            }
            inv_diag.push(1.0 / d);
        }

        Ok(CellOperator {
            material,
            h,
            k,
            hinv_t,
            transformed,
            residual_stress,
            mat,
            inv_diag,
            opts,
            stats,
        })
    }

    pub fn h(&self) -> &Tensor2 {
        &self.h
    }

    pub fn k(&self) -> &Tensor2 {
        &self.k
    }

    pub fn material(&self) -> &Arc<CellMaterial> {
        &self.material
    }

    pub fn transformed(&self, phase: usize) -> &Tensor4 {
        &self.transformed[phase]
    }

    pub fn residual_stress(&self, phase: usize) -> &Tensor2 {
        &self.residual_stress[phase]
    }

    pub fn num_dofs(&self) -> usize {
        self.mat.nrows()
    }

    /// Corrector for a macroscopic strain E: periodic w with
    /// a(w, v) = −∫ T[E] · G(v) for all periodic v.
    pub fn solve_strain(&self, e: &Tensor2) -> Result<CorrectorField> {
        self.stats.strain_solves.fetch_add(1, Ordering::Relaxed);
        let stresses: Vec<Tensor2> = self.transformed.iter().map(|t| t.apply(e)).collect();
        self.solve_with_forcing(&stresses, CorrectorKind::Strain(*e), "strain corrector")
    }

    /// Corrector for the built-in residual stresses R = K Ŝ(KᵀK) Kᵀ.
    pub fn solve_residual(&self) -> Result<CorrectorField> {
        let stresses = self.residual_stress.clone();
        self.stats.stress_solves.fetch_add(1, Ordering::Relaxed);
        self.solve_with_forcing(&stresses, CorrectorKind::StressForced, "residual corrector")
    }

    /// Corrector for an arbitrary per-phase stress forcing:
    /// a(w, v) = −∫ s_p · G(v).
    pub fn solve_stress_forced(&self, stresses: &[Tensor2]) -> Result<CorrectorField> {
        self.stats.stress_solves.fetch_add(1, Ordering::Relaxed);
        self.solve_with_forcing(stresses, CorrectorKind::StressForced, "stress-forced corrector")
    }

    fn solve_with_forcing(
        &self,
        stresses: &[Tensor2],
        kind: CorrectorKind,
        context: &str,
    ) -> Result<CorrectorField> {
        let mesh = &self.material.mesh;
        let n = mesh.dim();
        assert_eq!(stresses.len(), self.material.num_phases());

        let locals: Vec<Vec<f64>> = stresses.iter().map(|s| self.local_load(s)).collect();
        let mut rhs = vec![0.0; self.num_dofs()];
        for e in 0..mesh.num_elements() {
            let local = &locals[self.material.phase_of[e] as usize];
            for (b, &nb) in mesh.element_nodes(e).iter().enumerate() {
                for i in 0..n {
                    rhs[nb * n + i] -= local[b * n + i];
                }
            }
        }

        // constant forcing stresses load nothing on a periodic cell; snap the
        // roundoff dust to the exact zero corrector
        let scale = stresses.iter().map(|s| s.norm()).fold(0.0f64, f64::max);
        let max_rhs = rhs.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if max_rhs <= 1e-13 * scale.max(1.0) {
            return Ok(self.field_from(kind, vec![0.0; self.num_dofs()], 0, 0.0));
        }

        let project = |v: &mut [f64]| mean_project(n, v);
        let cg = CgOptions {
            rel_tol: self.opts.rel_tol,
            max_iterations: self.opts.max_iterations,
        };
        let (mut values, summary) = pcg(&self.mat, &rhs, &self.inv_diag, Some(&project), &cg);
        if !summary.converged {
            return Err(Error::Solver {
                context: context.to_string(),
                residual: summary.relative_residual,
                iterations: summary.iterations,
            });
        }
        mean_project(n, &mut values);
        Ok(self.field_from(kind, values, summary.iterations, summary.relative_residual))
    }

    fn field_from(
        &self,
        kind: CorrectorKind,
        values: Vec<f64>,
        iterations: usize,
        residual: f64,
    ) -> CorrectorField {
        CorrectorField {
            mesh: self.material.mesh.clone(),
            kind,
            h: self.h,
            k: self.k,
            hinv_t: self.hinv_t,
            values,
            iterations,
            residual,
        }
    }

    /// Element load vector for a constant stress S: entries ∫_e S · G(N_b eᵢ).
    fn local_load(&self, s: &Tensor2) -> Vec<f64> {
        let mesh = &self.material.mesh;
        let n = mesh.dim();
        let nc = q1::num_corners(n);
        let m = mesh.resolution() as f64;
        let vol = mesh.element_volume();
        let u: Vec<Vec<f64>> = (0..n)
            .map(|i| {
                let mut e = vec![0.0; n];
                e[i] = 1.0;
                self.hinv_t.mul_vec(&e)
            })
            .collect();
        let mut load = vec![0.0; nc * n];
        for (xi, w) in q1::gauss_points(n) {
            for b in 0..nc {
                let g = q1::shape_grad(n, b, &xi);
                let gy: Vec<f64> = (0..n).map(|d| g[d] * m).collect();
                let ghat = self.hinv_t.mul_vec(&gy);
                let sg = s.mul_vec(&ghat);
                for i in 0..n {
                    load[b * n + i] += w * vol * dot(&u[i], &sg);
                }
            }
        }
        load
    }

    /// Average flux ∫_Y T[E + G(w)] dy; with `e = None` just ∫ T[G(w)].
    pub fn average_flux(&self, w: &CorrectorField, e: Option<&Tensor2>) -> Tensor2 {
        let mesh = &self.material.mesh;
        let n = mesh.dim();
        let vol = mesh.element_volume();
        let mut flux = Tensor2::zeros(n);
        for el in 0..mesh.num_elements() {
            let t = &self.transformed[self.material.phase_of[el] as usize];
            for (xi, wgt) in q1::gauss_points(n) {
                let mut strain = w.h_gradient(el, &xi);
                if let Some(e) = e {
                    strain = strain.add(e);
                }
                flux = flux.add(&t.apply(&strain).scaled(wgt * vol));
            }
        }
        flux
    }

    /// Average stress ∫_Y (s_p + T[G(w)]) dy for a per-phase forcing s_p; with
    /// s_p = R_p this is the effective residual stress.
    pub fn average_stress_flux(&self, w: &CorrectorField, stresses: &[Tensor2]) -> Tensor2 {
        let mesh = &self.material.mesh;
        let n = mesh.dim();
        let vol = mesh.element_volume();
        let mut flux = Tensor2::zeros(n);
        for el in 0..mesh.num_elements() {
            let p = self.material.phase_of[el] as usize;
            let t = &self.transformed[p];
            for (xi, wgt) in q1::gauss_points(n) {
                let g = w.h_gradient(el, &xi);
                flux = flux.add(&stresses[p].add(&t.apply(&g)).scaled(wgt * vol));
            }
        }
        flux
    }

    /// Energy product ∫_Y (Eᵢ + G(wᵢ)) · T[Eⱼ + G(wⱼ)] dy. Between corrector
    /// solutions this is symmetric in (i, j) by the pointwise major symmetry
    /// of T, which makes it the right quadrature for the effective tensor.
    pub fn energy_product(
        &self,
        ei: &Tensor2,
        wi: &CorrectorField,
        ej: &Tensor2,
        wj: &CorrectorField,
    ) -> f64 {
        let mesh = &self.material.mesh;
        let n = mesh.dim();
        let vol = mesh.element_volume();
        let mut acc = 0.0;
        for el in 0..mesh.num_elements() {
            let t = &self.transformed[self.material.phase_of[el] as usize];
            for (xi, wgt) in q1::gauss_points(n) {
                let si = wi.h_gradient(el, &xi).add(ei);
                let sj = wj.h_gradient(el, &xi).add(ej);
                acc += wgt * vol * si.dot(&t.apply(&sj));
            }
        }
        acc
    }

    /// Residual asymmetry of the assembled matrix (zero after symmetrization;
    /// kept as a diagnostic).
    pub fn asymmetry(&self) -> f64 {
        self.mat.asymmetry()
    }
}

/// Dense element stiffness for one phase: rows/cols indexed by
/// (corner, component). Identical for every element of that phase because
/// the grid is uniform.
fn local_stiffness(mesh: &CellMesh, hinv_t: &Tensor2, t: &Tensor4) -> Vec<f64> {
    let n = mesh.dim();
    let nc = q1::num_corners(n);
    let s = nc * n;
    let m = mesh.resolution() as f64;
    let vol = mesh.element_volume();
    let u: Vec<Vec<f64>> = (0..n)
        .map(|i| {
            let mut e = vec![0.0; n];
            e[i] = 1.0;
            hinv_t.mul_vec(&e)
        })
        .collect();
    let mut ke = vec![0.0; s * s];
    for (xi, w) in q1::gauss_points(n) {
        let ghat: Vec<Vec<f64>> = (0..nc)
            .map(|a| {
                let g = q1::shape_grad(n, a, &xi);
                let gy: Vec<f64> = (0..n).map(|d| g[d] * m).collect();
                hinv_t.mul_vec(&gy)
            })
            .collect();
        for a in 0..nc {
            for k in 0..n {
                let sigma = t.apply(&Tensor2::outer(&u[k], &ghat[a]));
                for b in 0..nc {
                    let sg = sigma.mul_vec(&ghat[b]);
                    for i in 0..n {
                        ke[(b * n + i) * s + (a * n + k)] += w * vol * dot(&u[i], &sg);
                    }
                }
            }
        }
    }
    ke
}

// ---------------------------------------------------------------------------
// Corrector fields
// ---------------------------------------------------------------------------

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum CorrectorKind {
    /// Driven by a macroscopic strain (stored here).
    Strain(Tensor2),
    /// Driven by per-phase stresses (residual problems).
    StressForced,
}

/// Nodal corrector field on the periodic cell mesh, together with the (H, K)
/// pair it was solved under.
#[derive(Clone, Debug)]
pub struct CorrectorField {
    pub mesh: Arc<CellMesh>,
    pub kind: CorrectorKind,
    pub h: Tensor2,
    pub k: Tensor2,
    hinv_t: Tensor2,
    /// Node-major nodal values: `values[node * n + component]`.
    pub values: Vec<f64>,
    pub iterations: usize,
    pub residual: f64,
}

/// Files written by [`CorrectorField::dump`].
#[derive(Clone, Debug)]
pub struct CorrectorDump {
    pub header: PathBuf,
    pub data: PathBuf,
    pub strains: PathBuf,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CorrectorHeader {
    dim: usize,
    resolution: usize,
    kind: String,
    /// Row-major entries of the driving strain, when the kind is "strain".
    #[serde(skip_serializing_if = "Option::is_none")]
    loading: Option<Vec<f64>>,
    h: Vec<Vec<f64>>,
    k: Vec<Vec<f64>>,
    iterations: usize,
    residual: f64,
    data: String,
    strains: String,
}

impl CorrectorField {
    pub fn dim(&self) -> usize {
        self.mesh.dim()
    }

    pub fn value(&self, node: usize, comp: usize) -> f64 {
        self.values[node * self.dim() + comp]
    }

    /// Raw gradient ∇w at a reference point ξ of an element.
    pub fn raw_gradient(&self, element: usize, xi: &[f64; 3]) -> Tensor2 {
        let n = self.dim();
        let m = self.mesh.resolution() as f64;
        let mut grad = Tensor2::zeros(n);
        for (a, &node) in self.mesh.element_nodes(element).iter().enumerate() {
            let g = q1::shape_grad(n, a, xi);
            for i in 0..n {
                let w = self.values[node * n + i];
                for j in 0..n {
                    grad[[i, j]] += w * g[j] * m;
                }
            }
        }
        grad
    }

    /// Transformed gradient G(w) = H⁻ᵀ ∇w H⁻¹ at a reference point of an
    /// element; this is the strain-like quantity all averages use.
    pub fn h_gradient(&self, element: usize, xi: &[f64; 3]) -> Tensor2 {
        let grad = self.raw_gradient(element, xi);
        self.hinv_t.mul(&grad).mul(&self.hinv_t.transpose())
    }

    /// Write the field as a JSON header, a little-endian f64 nodal array and
    /// a per-element strain table (components of sym G(w) at element
    /// centers).
    pub fn dump(&self, dir: &Path, stem: &str) -> Result<CorrectorDump> {
        std::fs::create_dir_all(dir)?;
        let n = self.dim();
        let data_name = format!("{stem}.bin");
        let strain_name = format!("{stem}_strains.csv");

        let header = CorrectorHeader {
            dim: n,
            resolution: self.mesh.resolution(),
            kind: match self.kind {
                CorrectorKind::Strain(_) => "strain".to_string(),
                CorrectorKind::StressForced => "stress_forced".to_string(),
            },
            loading: match &self.kind {
                CorrectorKind::Strain(e) => {
                    Some((0..n * n).map(|f| e[[f / n, f % n]]).collect())
                }
                CorrectorKind::StressForced => None,
            },
            h: self.h.to_rows(),
            k: self.k.to_rows(),
            iterations: self.iterations,
            residual: self.residual,
            data: data_name.clone(),
            strains: strain_name.clone(),
        };
        let header_path = dir.join(format!("{stem}.json"));
        std::fs::write(&header_path, serde_json::to_string_pretty(&header)?)?;

        let data_path = dir.join(&data_name);
        let mut bytes = Vec::with_capacity(self.values.len() * 8);
        for v in &self.values {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        std::fs::write(&data_path, bytes)?;

        let strain_path = dir.join(&strain_name);
        let mut f = std::io::BufWriter::new(std::fs::File::create(&strain_path)?);
        let pairs = crate::tensor::sym_pairs(n);
        let mut head = vec!["element".to_string()];
        head.extend((0..n).map(|d| format!("center_{d}")));
        head.extend(pairs.iter().map(|(i, j)| format!("g_{i}{j}")));
        writeln!(f, "{}", head.join(","))?;
        let center = [0.5; 3];
        for el in 0..self.mesh.num_elements() {
            let c = self.mesh.element_center(el);
            let g = self.h_gradient(el, &center).sym();
            let mut row = vec![el.to_string()];
            row.extend((0..n).map(|d| format!("{}", c[d])));
            row.extend(pairs.iter().map(|&(i, j)| format!("{}", g[[i, j]])));
            writeln!(f, "{}", row.join(","))?;
        }
        f.flush()?;

        Ok(CorrectorDump {
            header: header_path,
            data: data_path,
            strains: strain_path,
        })
    }

    /// Read a field back from its JSON header (binary path resolved relative
    /// to the header).
    pub fn load(header_path: &Path) -> Result<CorrectorField> {
        let text = std::fs::read_to_string(header_path)?;
        let header: CorrectorHeader = serde_json::from_str(&text)?;
        let mesh = CellMesh::build(header.dim, header.resolution)?;
        let n = header.dim;

        let kind = match header.kind.as_str() {
            "strain" => {
                let raw = header.loading.as_ref().ok_or_else(|| {
                    Error::Config("strain corrector header lacks the loading".into())
                })?;
                if raw.len() != n * n {
                    return Err(Error::Config("loading has wrong length".into()));
                }
                let mut e = Tensor2::zeros(n);
                for i in 0..n {
                    for j in 0..n {
                        e[[i, j]] = raw[i * n + j];
                    }
                }
                CorrectorKind::Strain(e)
            }
            "stress_forced" => CorrectorKind::StressForced,
            other => {
                return Err(Error::Config(format!("unknown corrector kind {other:?}")));
            }
        };

        let h = Tensor2::from_row_vecs(&header.h)?;
        let k = Tensor2::from_row_vecs(&header.k)?;
        let bin = header_path
            .parent()
            .unwrap_or_else(|| Path::new("."))
            .join(&header.data);
        let bytes = std::fs::read(&bin)?;
        let expect = mesh.num_nodes() * n * 8;
        if bytes.len() != expect {
            return Err(Error::Config(format!(
                "nodal array has {} bytes, mesh requires {expect}",
                bytes.len()
            )));
        }
        let values: Vec<f64> = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();

        Ok(CorrectorField {
            mesh,
            kind,
            h,
            k,
            hinv_t: h.inv_t()?,
            values,
            iterations: header.iterations,
            residual: header.residual,
        })
    }
}
