//! Config-driven command layer. One JSON file describes a run; each command
//! reads the sections it needs, writes its outputs under `output_dir`, and
//! finishes with `manifest.json` listing every produced file with size and
//! SHA-256, plus the configuration verbatim, so a run can be audited and
//! reproduced from the manifest alone.
//!
//! The command set mirrors the pipeline: `cell` solves the corrector
//! problems at one point and dumps the effective law, `homogenize` and
//! `direct` are the two macroscopic routes, `converge` stacks them into an
//! ε ladder, and `verify` runs the oracle and invariant suites.
//!
//! Exit codes: 0 success, 2 configuration or input errors, 3 solver
//! failures (non-convergence), 4 verification failures. Everything numeric
//! runs serially in a fixed order, so CSV outputs are byte-identical across
//! runs with the same config and seed.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::cell::{CellMaterial, CellMesh, Geometry, ResidualModel};
use crate::field::{Domain, FieldFn, TransformField};
use crate::law::{
    build_fast_path, build_law_table, effective_elasticity_with_correctors, effective_residual,
    EffectiveLaw, LawRecord, PointwiseLaw,
};
use crate::macrofem::{
    convergence_study, linear_displacement, solve_direct, solve_homogenized, BodyFn, BoundaryFn,
    DisplacementField, MacroMesh, StudySetup,
};
use crate::micro::{MicroField, PatchDecomposition};
use crate::solver::{CellSolver, SolverOptions};
use crate::sparse::CgOptions;
use crate::tensor::{Tensor2, Tensor4};
use crate::verify::{
    all_passed, reports_csv, reports_junit, run_invariant_suite, run_laminate_oracle,
    traceability_csv, LaminateCase,
};
use crate::{Error, Result};

// ---------------------------------------------------------------------------
// Configuration schema
// ---------------------------------------------------------------------------

/// The whole run configuration. Commands only read the sections they need;
/// unknown keys are rejected everywhere so typos die loudly.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub output_dir: PathBuf,
    #[serde(default)]
    pub material: Option<MaterialConfig>,
    #[serde(default)]
    pub solver: SolverConfig,
    #[serde(default)]
    pub fields: Option<FieldsConfig>,
    #[serde(default)]
    pub cell: Option<CellConfig>,
    #[serde(default, rename = "macro")]
    pub macro_problem: Option<MacroConfig>,
    #[serde(default)]
    pub micro: Option<MicroConfig>,
    #[serde(default)]
    pub converge: Option<ConvergeConfig>,
    #[serde(default)]
    pub verify: Option<VerifyConfig>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MaterialConfig {
    pub dim: usize,
    pub resolution: usize,
    pub geometry: Geometry,
    pub phases: Vec<PhaseConfig>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum PhaseConfig {
    Isotropic { lambda: f64, mu: f64 },
    Orthotropic2d { c11: f64, c22: f64, c12: f64, g12: f64 },
    Orthotropic3d { moduli: Vec<f64> },
}

impl PhaseConfig {
    fn build(&self, n: usize) -> Result<Tensor4> {
        match self {
            PhaseConfig::Isotropic { lambda, mu } => Tensor4::isotropic(n, *lambda, *mu),
            PhaseConfig::Orthotropic2d { c11, c22, c12, g12 } => {
                if n != 2 {
                    return Err(Error::Config("orthotropic_2d phase in a non-2D material".into()));
                }
                Tensor4::orthotropic_2d(*c11, *c22, *c12, *g12)
            }
            PhaseConfig::Orthotropic3d { moduli } => {
                if n != 3 {
                    return Err(Error::Config("orthotropic_3d phase in a non-3D material".into()));
                }
                let k: [f64; 9] = moduli.as_slice().try_into().map_err(|_| {
                    Error::Config("orthotropic_3d needs exactly 9 moduli".into())
                })?;
                Tensor4::orthotropic_3d(&k)
            }
        }
    }
}

impl MaterialConfig {
    pub fn build(&self) -> Result<Arc<CellMaterial>> {
        let mesh = CellMesh::build(self.dim, self.resolution)?;
        let phases = self
            .phases
            .iter()
            .map(|p| p.build(self.dim))
            .collect::<Result<Vec<_>>>()?;
        CellMaterial::new(mesh, self.geometry.clone(), phases, ResidualModel::StVenant)
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverConfig {
    #[serde(default = "default_rel_tol")]
    pub rel_tol: f64,
    #[serde(default = "default_max_iterations")]
    pub max_iterations: usize,
    #[serde(default = "default_cache_quantum")]
    pub cache_quantum: f64,
}

fn default_rel_tol() -> f64 {
    1e-10
}
fn default_max_iterations() -> usize {
    50_000
}
fn default_cache_quantum() -> f64 {
    1e-12
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            rel_tol: default_rel_tol(),
            max_iterations: default_max_iterations(),
            cache_quantum: default_cache_quantum(),
        }
    }
}

impl SolverConfig {
    fn options(&self) -> Result<SolverOptions> {
        if !(self.rel_tol > 0.0 && self.rel_tol < 1.0) {
            return Err(Error::Config("solver rel_tol must lie in (0, 1)".into()));
        }
        if self.max_iterations == 0 {
            return Err(Error::Config("solver max_iterations must be positive".into()));
        }
        Ok(SolverOptions {
            rel_tol: self.rel_tol,
            max_iterations: self.max_iterations,
            cache_quantum: self.cache_quantum,
        })
    }

    fn cg(&self) -> CgOptions {
        CgOptions {
            rel_tol: self.rel_tol,
            max_iterations: self.max_iterations,
        }
    }
}

/// The two transform maps as presets; compiled once per run.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FieldsConfig {
    pub h: TransformField,
    pub k: TransformField,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CellConfig {
    /// Macroscopic point at which the maps are frozen.
    pub point: Vec<f64>,
    #[serde(default = "default_true")]
    pub dump_correctors: bool,
}

fn default_true() -> bool {
    true
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum LawConfig {
    /// Solve the cell problems at every element centroid.
    Pointwise,
    /// Sample on a grid and interpolate.
    Table { samples_per_axis: usize },
    /// Canonical solves plus pushforward; requires H = K.
    FastPath,
    /// Read a previously exported law record and use it as a constant law.
    File { path: PathBuf },
}

impl Default for LawConfig {
    fn default() -> Self {
        LawConfig::Pointwise
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MacroConfig {
    pub domain: Domain,
    pub mesh: Vec<usize>,
    /// Rows of the boundary strain E; the Dirichlet data is u(x) = E·x.
    pub bc_strain: Vec<Vec<f64>>,
    /// Optional constant body force.
    #[serde(default)]
    pub body: Option<Vec<f64>>,
    #[serde(default)]
    pub law: LawConfig,
}

impl MacroConfig {
    fn boundary(&self, n: usize) -> Result<BoundaryFn> {
        let e = Tensor2::from_row_vecs(&self.bc_strain)?;
        if e.dim() != n {
            return Err(Error::Config("bc_strain must be an n x n matrix".into()));
        }
        Ok(linear_displacement(e))
    }

    fn body_force(&self, n: usize) -> Result<Option<BodyFn>> {
        match &self.body {
            None => Ok(None),
            Some(f) => {
                if f.len() != n {
                    return Err(Error::Config("body force must have n components".into()));
                }
                let f = f.clone();
                Ok(Some(Arc::new(move |_x: &[f64]| f.clone()) as BodyFn))
            }
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MicroConfig {
    pub eps: f64,
    pub r: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConvergeConfig {
    pub eps_list: Vec<f64>,
    pub r: f64,
    #[serde(default = "default_final_ratio")]
    pub expect_final_ratio: f64,
}

fn default_final_ratio() -> f64 {
    0.5
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VerifyConfig {
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_ladder")]
    pub resolutions: Vec<usize>,
}

fn default_ladder() -> Vec<usize> {
    vec![16, 32, 64]
}

impl Default for VerifyConfig {
    fn default() -> Self {
        VerifyConfig {
            seed: 0,
            resolutions: default_ladder(),
        }
    }
}

pub fn load_config(path: &Path) -> Result<RunConfig> {
    let text = fs::read_to_string(path)
        .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
    let config: RunConfig =
        serde_json::from_str(&text).map_err(|e| Error::Config(format!("invalid config: {e}")))?;
    Ok(config)
}

// ---------------------------------------------------------------------------
// Manifests
// ---------------------------------------------------------------------------

#[derive(Clone, Debug, Serialize)]
pub struct OutputRecord {
    pub path: String,
    pub bytes: u64,
    pub sha256: String,
}

/// Written at the end of every command; `config` is embedded verbatim so the
/// manifest alone suffices to re-run.
#[derive(Debug, Serialize)]
pub struct Manifest {
    pub command: String,
    pub tool: String,
    pub config: serde_json::Value,
    pub outputs: Vec<OutputRecord>,
}

struct OutputDir {
    dir: PathBuf,
    records: Vec<OutputRecord>,
}

impl OutputDir {
    fn create(dir: &Path) -> Result<OutputDir> {
        fs::create_dir_all(dir)?;
        Ok(OutputDir {
            dir: dir.to_path_buf(),
            records: Vec::new(),
        })
    }

    fn write(&mut self, name: &str, bytes: &[u8]) -> Result<PathBuf> {
        let path = self.dir.join(name);
        fs::write(&path, bytes)?;
        self.records.push(OutputRecord {
            path: name.to_string(),
            bytes: bytes.len() as u64,
            sha256: hex(&Sha256::digest(bytes)),
        });
        Ok(path)
    }

    /// Record a file that was written directly (corrector dumps).
    fn adopt(&mut self, path: &Path) -> Result<()> {
        let bytes = fs::read(path)?;
        let name = path
            .strip_prefix(&self.dir)
            .unwrap_or(path)
            .to_string_lossy()
            .into_owned();
        self.records.push(OutputRecord {
            path: name,
            bytes: bytes.len() as u64,
            sha256: hex(&Sha256::digest(&bytes)),
        });
        Ok(())
    }

    fn finish(mut self, command: &str, config: &RunConfig) -> Result<Manifest> {
        self.records.sort_by(|a, b| a.path.cmp(&b.path));
        let manifest = Manifest {
            command: command.to_string(),
            tool: format!("{} {}", env!("CARGO_PKG_NAME"), env!("CARGO_PKG_VERSION")),
            config: serde_json::to_value(config)?,
            outputs: self.records,
        };
        fs::write(
            self.dir.join("manifest.json"),
            serde_json::to_string_pretty(&manifest)?,
        )?;
        Ok(manifest)
    }
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

// ---------------------------------------------------------------------------
// Shared assembly of config pieces
// ---------------------------------------------------------------------------

fn require<'a, T>(section: &'a Option<T>, name: &str) -> Result<&'a T> {
    section
        .as_ref()
        .ok_or_else(|| Error::Config(format!("this command needs the `{name}` config section")))
}

fn compiled_fields(config: &RunConfig, n: usize) -> Result<(FieldFn, FieldFn)> {
    let fields = require(&config.fields, "fields")?;
    Ok((fields.h.compile(n)?, fields.k.compile(n)?))
}

fn build_solver(config: &RunConfig) -> Result<Arc<CellSolver>> {
    let material = require(&config.material, "material")?.build()?;
    Ok(Arc::new(CellSolver::new(material, config.solver.options()?)))
}

fn build_law(
    config: &RunConfig,
    solver: &Arc<CellSolver>,
    h: &FieldFn,
    k: &FieldFn,
    domain: &Domain,
    law: &LawConfig,
) -> Result<EffectiveLaw> {
    match law {
        LawConfig::Pointwise => Ok(EffectiveLaw::Pointwise(PointwiseLaw {
            solver: solver.clone(),
            h: h.clone(),
            k: k.clone(),
        })),
        LawConfig::Table { samples_per_axis } => Ok(EffectiveLaw::Table(build_law_table(
            solver,
            h,
            k,
            domain,
            *samples_per_axis,
        )?)),
        LawConfig::FastPath => {
            let mut samples = domain.sample_grid(&vec![2; domain.dim()]);
            samples.push(domain.center());
            Ok(EffectiveLaw::FastPath(build_fast_path(
                solver.clone(),
                h,
                k,
                &samples,
            )?))
        }
        LawConfig::File { path } => {
            let full = if path.is_relative() {
                config.output_dir.join(path)
            } else {
                path.clone()
            };
            let record = LawRecord::load(&full)?;
            Ok(EffectiveLaw::Constant {
                residual: record.residual()?,
                elasticity: record.elasticity()?,
            })
        }
    }
}

/// Node-major displacement table; the determinism contract applies to this
/// file, so it carries coordinates and values only.
fn displacement_csv(u: &DisplacementField) -> String {
    let n = u.dim();
    let mut out = String::from("node");
    for d in 0..n {
        out.push_str(&format!(",x{d}"));
    }
    for d in 0..n {
        out.push_str(&format!(",u{d}"));
    }
    out.push('\n');
    for node in 0..u.mesh.num_nodes() {
        let x = u.mesh.node_coord(node);
        out.push_str(&format!("{node}"));
        for d in 0..n {
            out.push_str(&format!(",{}", x[d]));
        }
        for d in 0..n {
            out.push_str(&format!(",{}", u.values[node * n + d]));
        }
        out.push('\n');
    }
    out
}

#[derive(Serialize)]
struct SolveSummary {
    dofs: usize,
    iterations: usize,
    relative_residual: f64,
}

// ---------------------------------------------------------------------------
// Commands
// ---------------------------------------------------------------------------

pub fn cmd_cell(config: &RunConfig) -> Result<Manifest> {
    let solver = build_solver(config)?;
    let n = solver.material().dim();
    let cell = require(&config.cell, "cell")?;
    if cell.point.len() != n {
        return Err(Error::Config("cell point must match the material dimension".into()));
    }
    let (h_field, k_field) = compiled_fields(config, n)?;
    let (h, k) = (h_field(&cell.point), k_field(&cell.point));

    let op = solver.operator_at(&h, &k)?;
    let (c_hom, correctors) = effective_elasticity_with_correctors(&op)?;
    let s_hom = effective_residual(&op)?;

    let mut out = OutputDir::create(&config.output_dir)?;
    let record = LawRecord::new(&cell.point, &h, &k, &s_hom, &c_hom);
    out.write("law.json", serde_json::to_string_pretty(&record)?.as_bytes())?;
    out.write("elasticity_voigt.csv", c_hom.voigt_csv().as_bytes())?;
    let residual_line = s_hom
        .voigt()
        .iter()
        .map(|v| v.to_string())
        .collect::<Vec<_>>()
        .join(",");
    out.write("residual_voigt.csv", format!("{residual_line}\n").as_bytes())?;

    if cell.dump_correctors {
        for (i, w) in correctors.iter().enumerate() {
            let dump = w.dump(&config.output_dir, &format!("corrector_e{i}"))?;
            out.adopt(&dump.header)?;
            out.adopt(&dump.data)?;
            out.adopt(&dump.strains)?;
        }
        let residual_corrector = op.solve_residual()?;
        let dump = residual_corrector.dump(&config.output_dir, "corrector_residual")?;
        out.adopt(&dump.header)?;
        out.adopt(&dump.data)?;
        out.adopt(&dump.strains)?;
    }
    out.write(
        "stats.json",
        serde_json::to_string_pretty(&solver.stats())?.as_bytes(),
    )?;
    out.finish("cell", config)
}

pub fn cmd_homogenize(config: &RunConfig) -> Result<Manifest> {
    let solver = build_solver(config)?;
    let n = solver.material().dim();
    let macro_cfg = require(&config.macro_problem, "macro")?;
    let (h_field, k_field) = compiled_fields(config, n)?;
    let law = build_law(
        config,
        &solver,
        &h_field,
        &k_field,
        &macro_cfg.domain,
        &macro_cfg.law,
    )?;
    let mesh = MacroMesh::build(macro_cfg.domain.clone(), macro_cfg.mesh.clone())?;
    let bc = macro_cfg.boundary(n)?;
    let body = macro_cfg.body_force(n)?;
    let u = solve_homogenized(&mesh, &law, &bc, body.as_ref(), &config.solver.cg())?;

    let mut out = OutputDir::create(&config.output_dir)?;
    out.write("displacement.csv", displacement_csv(&u).as_bytes())?;
    out.write(
        "solution.json",
        serde_json::to_string_pretty(&SolveSummary {
            dofs: u.values.len(),
            iterations: u.iterations,
            relative_residual: u.residual,
        })?
        .as_bytes(),
    )?;
    out.finish("homogenize", config)
}

pub fn cmd_direct(config: &RunConfig) -> Result<Manifest> {
    let solver = build_solver(config)?;
    let n = solver.material().dim();
    let macro_cfg = require(&config.macro_problem, "macro")?;
    let micro_cfg = require(&config.micro, "micro")?;
    let (h_field, k_field) = compiled_fields(config, n)?;
    let decomposition =
        PatchDecomposition::new(macro_cfg.domain.clone(), micro_cfg.eps, micro_cfg.r)?;
    let field = MicroField::build(
        solver.material().clone(),
        decomposition,
        &h_field,
        &k_field,
    )?;
    let mesh = MacroMesh::build(macro_cfg.domain.clone(), macro_cfg.mesh.clone())?;
    let bc = macro_cfg.boundary(n)?;
    let body = macro_cfg.body_force(n)?;
    let u = solve_direct(&mesh, &field, micro_cfg.eps, &bc, body.as_ref(), &config.solver.cg())?;

    let mut out = OutputDir::create(&config.output_dir)?;
    out.write("displacement.csv", displacement_csv(&u).as_bytes())?;
    out.write(
        "solution.json",
        serde_json::to_string_pretty(&SolveSummary {
            dofs: u.values.len(),
            iterations: u.iterations,
            relative_residual: u.residual,
        })?
        .as_bytes(),
    )?;
    out.finish("direct", config)
}

pub fn cmd_converge(config: &RunConfig) -> Result<Manifest> {
    let solver = build_solver(config)?;
    let n = solver.material().dim();
    let macro_cfg = require(&config.macro_problem, "macro")?;
    let converge = require(&config.converge, "converge")?;
    if converge.eps_list.is_empty() {
        return Err(Error::Config("converge.eps_list must not be empty".into()));
    }
    if converge.eps_list.windows(2).any(|w| w[1] >= w[0]) {
        return Err(Error::Config("converge.eps_list must be strictly decreasing".into()));
    }
    let (h_field, k_field) = compiled_fields(config, n)?;
    let law = build_law(
        config,
        &solver,
        &h_field,
        &k_field,
        &macro_cfg.domain,
        &macro_cfg.law,
    )?;
    let setup = StudySetup {
        solver: solver.clone(),
        law,
        h_field,
        k_field,
        domain: macro_cfg.domain.clone(),
        mesh_dims: macro_cfg.mesh.clone(),
        eps_list: converge.eps_list.clone(),
        r: converge.r,
        bc: macro_cfg.boundary(n)?,
        body: macro_cfg.body_force(n)?,
        cg: config.solver.cg(),
    };
    let report = convergence_study(&setup)?;

    #[derive(Serialize)]
    struct StudySummary<'a> {
        monotone_l2: bool,
        final_over_initial_l2: f64,
        h1_norm_spread: f64,
        expect_final_ratio: f64,
        rungs: &'a [crate::macrofem::StudyRung],
    }
    let mut out = OutputDir::create(&config.output_dir)?;
    out.write("errors.csv", report.csv().as_bytes())?;
    out.write(
        "study.json",
        serde_json::to_string_pretty(&StudySummary {
            monotone_l2: report.l2_strictly_decreasing(),
            final_over_initial_l2: report.final_over_initial_l2(),
            h1_norm_spread: report.h1_norm_spread(),
            expect_final_ratio: converge.expect_final_ratio,
            rungs: &report.rungs,
        })?
        .as_bytes(),
    )?;
    out.finish("converge", config)
}

/// Runs the verification suites and reports whether everything passed; the
/// caller turns a failure into exit code 4.
pub fn cmd_verify(config: &RunConfig) -> Result<(Manifest, bool)> {
    let verify = config.verify.clone().unwrap_or_default();
    let case = LaminateCase {
        dim: 2,
        axis: 0,
        lame: vec![(1.0, 1.0), (10.0, 10.0)],
        fractions: vec![0.5, 0.5],
    };
    let mut reports = run_laminate_oracle(&case, &verify.resolutions, &config.solver.options()?)?;
    reports.extend(run_invariant_suite(verify.seed)?);

    let ok = all_passed(&reports);
    let mut out = OutputDir::create(&config.output_dir)?;
    out.write("checks.csv", reports_csv(&reports).as_bytes())?;
    out.write("checks.xml", reports_junit("microhom-verify", &reports).as_bytes())?;
    out.write("traceability.csv", traceability_csv().as_bytes())?;
    let manifest = out.finish("verify", config)?;
    Ok((manifest, ok))
}

// ---------------------------------------------------------------------------
// Entry point used by the binary
// ---------------------------------------------------------------------------

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CliCommand {
    Cell,
    Homogenize,
    Direct,
    Converge,
    Verify,
}

impl CliCommand {
    pub fn name(&self) -> &'static str {
        match self {
            CliCommand::Cell => "cell",
            CliCommand::Homogenize => "homogenize",
            CliCommand::Direct => "direct",
            CliCommand::Converge => "converge",
            CliCommand::Verify => "verify",
        }
    }
}

pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Solver { .. } => 3,
        _ => 2,
    }
}

/// Load the config, apply overrides, dispatch, and map the outcome to an
/// exit code.
pub fn execute(
    command: CliCommand,
    config_path: &Path,
    output_override: Option<PathBuf>,
    quiet: bool,
) -> Result<i32> {
    let mut config = load_config(config_path)?;
    if let Some(dir) = output_override {
        config.output_dir = dir;
    }
    let code = match command {
        CliCommand::Cell => {
            cmd_cell(&config)?;
            0
        }
        CliCommand::Homogenize => {
            cmd_homogenize(&config)?;
            0
        }
        CliCommand::Direct => {
            cmd_direct(&config)?;
            0
        }
        CliCommand::Converge => {
            cmd_converge(&config)?;
            0
        }
        CliCommand::Verify => {
            let (_, ok) = cmd_verify(&config)?;
            if ok {
                0
            } else {
                4
            }
        }
    };
    if !quiet {
        println!(
            "{}: wrote {}",
            command.name(),
            config.output_dir.join("manifest.json").display()
        );
    }
    Ok(code)
}
