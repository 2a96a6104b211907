//! The unit cell Y = (0,1)ⁿ, its periodic structured mesh, and the
//! microscale material data living on it.
//!
//! Y always has unit volume; general parallelepiped cells are realized
//! through the cell-deformation map H rather than by meshing a skewed
//! domain. The mesh stores only the periodic quotient: nodes are integer
//! multi-indices mod m, so boundary identification is exact by construction
//! and every node is its own canonical representative.

use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::q1;
use crate::tensor::{st_venant_stress, Tensor2, Tensor4};
use crate::{Error, Result};

/// Structured periodic mesh of Y = (0,1)ⁿ with mⁿ multilinear elements and
/// mⁿ free (quotient) vector nodes.
#[derive(Clone, Debug)]
pub struct CellMesh {
    n: usize,
    m: usize,
}

impl CellMesh {
    pub fn build(n: usize, m: usize) -> Result<Arc<CellMesh>> {
        if n != 2 && n != 3 {
            return Err(Error::Invalid(format!("dimension must be 2 or 3, got {n}")));
        }
        if m < 2 {
            return Err(Error::Invalid(format!(
                "cell resolution must be at least 2 elements per edge, got {m}"
            )));
        }
        Ok(Arc::new(CellMesh { n, m }))
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    /// Elements per edge.
    pub fn resolution(&self) -> usize {
        self.m
    }

    /// Element edge length 1/m.
    pub fn h(&self) -> f64 {
        1.0 / self.m as f64
    }

    pub fn num_elements(&self) -> usize {
        self.m.pow(self.n as u32)
    }

    /// Free nodes of the periodic quotient (one per element corner lattice
    /// point mod m).
    pub fn num_nodes(&self) -> usize {
        self.m.pow(self.n as u32)
    }

    fn dims(&self) -> [usize; 3] {
        let mut d = [1usize; 3];
        d[..self.n].fill(self.m);
        d
    }

    /// Canonical (quotient) node id of an integer lattice multi-index,
    /// wrapping negative and overflowing indices periodically. Applying this
    /// to an already-canonical index is the identity.
    pub fn canonical_node(&self, idx: &[i64; 3]) -> usize {
        let m = self.m as i64;
        let mut wrapped = [0usize; 3];
        for d in 0..self.n {
            wrapped[d] = idx[d].rem_euclid(m) as usize;
        }
        q1::ravel(&wrapped, &self.dims(), self.n)
    }

    /// Representative coordinates of a node in [0,1)ⁿ.
    pub fn node_coord(&self, node: usize) -> [f64; 3] {
        let idx = q1::unravel(node, &self.dims(), self.n);
        let mut x = [0.0; 3];
        for d in 0..self.n {
            x[d] = idx[d] as f64 * self.h();
        }
        x
    }

    /// The 2ⁿ corner node ids of an element, in corner-bit order.
    pub fn element_nodes(&self, element: usize) -> Vec<usize> {
        let idx = q1::unravel(element, &self.dims(), self.n);
        (0..q1::num_corners(self.n))
            .map(|c| {
                let mut corner = [0i64; 3];
                for d in 0..self.n {
                    corner[d] = idx[d] as i64 + q1::corner_offset(c, d) as i64;
                }
                self.canonical_node(&corner)
            })
            .collect()
    }

    /// Low corner of an element in Y.
    pub fn element_origin(&self, element: usize) -> [f64; 3] {
        let idx = q1::unravel(element, &self.dims(), self.n);
        let mut x = [0.0; 3];
        for d in 0..self.n {
            x[d] = idx[d] as f64 * self.h();
        }
        x
    }

    pub fn element_center(&self, element: usize) -> [f64; 3] {
        let mut x = self.element_origin(element);
        for d in 0..self.n {
            x[d] += 0.5 * self.h();
        }
        x
    }

    /// Element containing a cell point (wrapped into [0,1)ⁿ).
    pub fn element_at(&self, y: &[f64]) -> usize {
        let mut idx = [0usize; 3];
        for d in 0..self.n {
            let w = y[d].rem_euclid(1.0);
            idx[d] = ((w * self.m as f64).floor() as usize).min(self.m - 1);
        }
        q1::ravel(&idx, &self.dims(), self.n)
    }

    pub fn element_volume(&self) -> f64 {
        self.h().powi(self.n as i32)
    }
}

// ---------------------------------------------------------------------------
// Geometry
// ---------------------------------------------------------------------------

/// Y-periodic phase layout. All variants are evaluated analytically at any
/// cell point, so the same descriptor serves both the meshed cell problems
/// (sampled at element centers) and the ε-scale coefficient fields (sampled
/// at quadrature points).
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum Geometry {
    /// Layers normal to a coordinate axis; `fractions` are the layer volume
    /// fractions in order (must sum to 1).
    Laminate { axis: usize, fractions: Vec<f64> },
    /// Two-phase parity coloring of a cells×…×cells grid.
    Checkerboard { cells: usize },
    /// Single circular/spherical inclusion (phase 1) in a matrix (phase 0).
    Inclusion { center: Vec<f64>, radius: f64 },
    /// Voxel phase map imported from a JSON header + raw binary grid.
    Voxel {
        dims: Vec<usize>,
        #[serde(skip_serializing_if = "Option::is_none")]
        phase_count: Option<usize>,
        data: Vec<u8>,
    },
}

impl Geometry {
    pub fn validate(&self, n: usize) -> Result<()> {
        match self {
            Geometry::Laminate { axis, fractions } => {
                if *axis >= n {
                    return Err(Error::Invalid(format!("laminate axis {axis} out of range")));
                }
                if fractions.len() < 2 {
                    return Err(Error::Invalid("laminate needs at least two layers".into()));
                }
                if fractions.iter().any(|f| *f <= 0.0) {
                    return Err(Error::Invalid("laminate fractions must be positive".into()));
                }
                let s: f64 = fractions.iter().sum();
                if (s - 1.0).abs() > 1e-9 {
                    return Err(Error::Invalid(format!(
                        "laminate fractions must sum to 1, got {s}"
                    )));
                }
            }
            Geometry::Checkerboard { cells } => {
                if *cells == 0 {
                    return Err(Error::Invalid("checkerboard needs at least one cell".into()));
                }
            }
            Geometry::Inclusion { center, radius } => {
                if center.len() != n {
                    return Err(Error::Invalid("inclusion center has wrong dimension".into()));
                }
                if *radius <= 0.0 || *radius >= 0.5 {
                    return Err(Error::Invalid(
                        "inclusion radius must lie in (0, 0.5) so the inclusion stays inside Y"
                            .into(),
                    ));
                }
            }
            Geometry::Voxel { dims, data, .. } => {
                if dims.len() != n {
                    return Err(Error::Invalid("voxel dims have wrong dimension".into()));
                }
                let total: usize = dims.iter().product();
                if total != data.len() {
                    return Err(Error::Invalid(format!(
                        "voxel data has {} entries, dims require {total}",
                        data.len()
                    )));
                }
            }
        }
        Ok(())
    }

    /// Number of phases the descriptor refers to.
    pub fn num_phases(&self) -> usize {
        match self {
            Geometry::Laminate { fractions, .. } => fractions.len(),
            Geometry::Checkerboard { .. } => 2,
            Geometry::Inclusion { .. } => 2,
            Geometry::Voxel {
                phase_count, data, ..
            } => phase_count.unwrap_or_else(|| {
                data.iter().map(|p| *p as usize + 1).max().unwrap_or(1)
            }),
        }
    }

    /// Phase id at a cell point; the point is wrapped into [0,1)ⁿ first, so
    /// the field is Y-periodic exactly.
    pub fn phase_at(&self, y: &[f64]) -> usize {
        let w: Vec<f64> = y.iter().map(|v| v.rem_euclid(1.0)).collect();
        match self {
            Geometry::Laminate { axis, fractions } => {
                let c = w[*axis];
                let mut acc = 0.0;
                for (p, f) in fractions.iter().enumerate() {
                    acc += f;
                    if c < acc {
                        return p;
                    }
                }
                fractions.len() - 1
            }
            Geometry::Checkerboard { cells } => {
                let s: usize = w
                    .iter()
                    .map(|v| ((v * *cells as f64).floor() as usize).min(cells - 1))
                    .sum();
                s % 2
            }
            Geometry::Inclusion { center, radius } => {
                let d2: f64 = w
                    .iter()
                    .zip(center)
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum();
                usize::from(d2 <= radius * radius)
            }
            Geometry::Voxel { dims, data, .. } => {
                let mut id = 0usize;
                for (d, v) in w.iter().enumerate() {
                    let i = ((v * dims[d] as f64).floor() as usize).min(dims[d] - 1);
                    id = id * dims[d] + i;
                }
                data[id] as usize
            }
        }
    }

    /// Read a voxel descriptor from a JSON header pointing at a raw
    /// row-major byte grid, `{"dims": [...], "phase_count": k, "data": "file.bin"}`.
    pub fn load_voxel(header: &Path) -> Result<Geometry> {
        #[derive(Deserialize)]
        #[serde(deny_unknown_fields)]
        struct Header {
            dims: Vec<usize>,
            phase_count: usize,
            data: String,
        }
        let text = std::fs::read_to_string(header)?;
        let h: Header = serde_json::from_str(&text)?;
        let bin = header
            .parent()
            .unwrap_or_else(|| Path::new("."))
            .join(&h.data);
        let data = std::fs::read(&bin)?;
        let g = Geometry::Voxel {
            dims: h.dims,
            phase_count: Some(h.phase_count),
            data,
        };
        Ok(g)
    }
}

// ---------------------------------------------------------------------------
// Material
// ---------------------------------------------------------------------------

/// Per-phase stress response to a metric change C (typically C = KᵀK). The
/// built-in choice is the St. Venant form ½ℂₚ[C − 1], which is stress-free at
/// C = 1; a custom per-phase hook is available for other constitutive
/// assumptions.
#[derive(Clone)]
pub enum ResidualModel {
    StVenant,
    Custom(Arc<dyn Fn(&Tensor2, usize) -> Tensor2 + Send + Sync>),
}

impl std::fmt::Debug for ResidualModel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ResidualModel::StVenant => write!(f, "StVenant"),
            ResidualModel::Custom(_) => write!(f, "Custom(..)"),
        }
    }
}

/// Y-periodic microscale material: a phase per element of the periodic mesh,
/// one elasticity tensor per phase, and the residual-stress generator.
#[derive(Debug)]
pub struct CellMaterial {
    pub mesh: Arc<CellMesh>,
    pub geometry: Geometry,
    pub phases: Vec<Tensor4>,
    pub residual: ResidualModel,
    /// Phase id per element.
    pub phase_of: Vec<u16>,
    /// Measured per-phase volume fractions on the mesh.
    pub volume_fractions: Vec<f64>,
}

/// Sample a geometry on a periodic mesh: phase ids per element (at element
/// centers) plus the resulting volume fractions. Errors if some declared
/// phase ends up empty.
pub fn assign_phases(mesh: &CellMesh, geometry: &Geometry) -> Result<(Vec<u16>, Vec<f64>)> {
    geometry.validate(mesh.dim())?;
    let num_phases = geometry.num_phases();
    let mut counts = vec![0usize; num_phases];
    let mut ids = Vec::with_capacity(mesh.num_elements());
    for e in 0..mesh.num_elements() {
        let p = geometry.phase_at(&mesh.element_center(e)[..mesh.dim()]);
        if p >= num_phases {
            return Err(Error::Invalid(format!(
                "geometry produced phase id {p}, expected fewer than {num_phases}"
            )));
        }
        counts[p] += 1;
        ids.push(p as u16);
    }
    if let Some(empty) = counts.iter().position(|c| *c == 0) {
        return Err(Error::Invalid(format!(
            "phase {empty} is empty on a {}^{} mesh; refine or fix the geometry",
            mesh.resolution(),
            mesh.dim()
        )));
    }
    let total = mesh.num_elements() as f64;
    let fractions = counts.iter().map(|c| *c as f64 / total).collect();
    Ok((ids, fractions))
}

impl CellMaterial {
    pub fn new(
        mesh: Arc<CellMesh>,
        geometry: Geometry,
        phases: Vec<Tensor4>,
        residual: ResidualModel,
    ) -> Result<Arc<CellMaterial>> {
        if phases.len() != geometry.num_phases() {
            return Err(Error::Invalid(format!(
                "geometry declares {} phases but {} tensors were supplied",
                geometry.num_phases(),
                phases.len()
            )));
        }
        for (i, c) in phases.iter().enumerate() {
            if c.dim() != mesh.dim() {
                return Err(Error::Invalid(format!("phase {i} has wrong dimension")));
            }
            let rep = c.check_symmetries(1e-10);
            if !rep.minor || !rep.major {
                return Err(Error::Invalid(format!(
                    "phase {i} violates minor/major symmetry by {:.3e}",
                    rep.max_violation
                )));
            }
            let alpha = c.coercivity_constant()?;
            if alpha <= 0.0 {
                return Err(Error::Invalid(format!(
                    "phase {i} is not coercive (smallest eigenvalue {alpha:.3e})"
                )));
            }
        }
        let (phase_of, volume_fractions) = assign_phases(&mesh, &geometry)?;
        Ok(Arc::new(CellMaterial {
            mesh,
            geometry,
            phases,
            residual,
            phase_of,
            volume_fractions,
        }))
    }

    /// Two-phase convenience constructor used all over the tests and
    /// examples.
    pub fn two_phase(
        mesh: Arc<CellMesh>,
        geometry: Geometry,
        phase0: Tensor4,
        phase1: Tensor4,
    ) -> Result<Arc<CellMaterial>> {
        CellMaterial::new(mesh, geometry, vec![phase0, phase1], ResidualModel::StVenant)
    }

    /// Uniform single-phase material (laminate descriptor with equal layers
    /// of the same tensor would do, but this skips the geometry entirely).
    pub fn uniform(mesh: Arc<CellMesh>, c: Tensor4) -> Result<Arc<CellMaterial>> {
        let geometry = Geometry::Laminate {
            axis: 0,
            fractions: vec![0.5, 0.5],
        };
        CellMaterial::new(mesh, geometry, vec![c, c], ResidualModel::StVenant)
    }

    pub fn dim(&self) -> usize {
        self.mesh.dim()
    }

    pub fn elasticity(&self, element: usize) -> &Tensor4 {
        &self.phases[self.phase_of[element] as usize]
    }

    /// Residual-generator stress for a metric `c_metric` in the given phase.
    pub fn metric_stress(&self, c_metric: &Tensor2, phase: usize) -> Tensor2 {
        match &self.residual {
            ResidualModel::StVenant => st_venant_stress(&self.phases[phase], c_metric),
            ResidualModel::Custom(f) => f(c_metric, phase),
        }
    }

    pub fn num_phases(&self) -> usize {
        self.phases.len()
    }
}
