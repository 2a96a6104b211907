//! The full chain in one program: microstructure → effective law → macro
//! boundary-value problem.
//!
//! A laminate microstructure is carried over the unit square by a rotation
//! field. The effective law is sampled once on a coarse grid and wrapped in
//! an interpolating table, which the macro solver then reads at element
//! centroids; the table keeps the number of cell solves at the grid size
//! instead of one per element.

use microhom::field::{rotation_field, Domain};
use microhom::law::{build_law_table, EffectiveLaw, PointwiseLaw};
use microhom::macrofem::{solve_homogenized, BodyFn, BoundaryFn, MacroMesh};
use microhom::solver::{CellSolver, SolverOptions};
use microhom::sparse::CgOptions;
use microhom::verify::LaminateCase;
use std::sync::Arc;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let case = LaminateCase {
        dim: 2,
        axis: 0,
        lame: vec![(1.0, 1.0), (10.0, 10.0)],
        fractions: vec![0.5, 0.5],
    };
    let solver = Arc::new(CellSolver::new(case.material(16)?, SolverOptions::default()));
    let field = rotation_field(2, vec![0.9, 0.4], 0.3);
    let domain = Domain::unit(2);

    let table = build_law_table(&solver, &field, &field, &domain, 6)?;
    println!(
        "law table: 6² sample points, probe error {:.2e}, {} cell assemblies",
        table.probe_error(),
        solver.stats().assemblies
    );
    let law = EffectiveLaw::Table(table);

    let mesh = MacroMesh::build(domain, vec![48, 48])?;
    // boundary data: a stretch plus a bulge on the lower edge
    let bc: BoundaryFn = Arc::new(|x: &[f64]| {
        vec![0.1 * x[0], 0.02 * (std::f64::consts::PI * x[0]).sin() - 0.05 * x[1]]
    });
    let body: BodyFn = Arc::new(|_x: &[f64]| vec![0.0, -0.1]);

    let u = solve_homogenized(&mesh, &law, &bc, Some(&body), &CgOptions::default())?;
    println!(
        "macro solve on 48²: {} CG iterations, relative residual {:.1e}",
        u.iterations, u.residual
    );
    for x in [[0.25, 0.25], [0.5, 0.5], [0.75, 0.75]] {
        let v = u.eval(&x);
        let g = u.eval_grad(&x);
        println!(
            "  u({:.2}, {:.2}) = ({:+.5}, {:+.5}),  |e(u)| = {:.4}",
            x[0],
            x[1],
            v[0],
            v[1],
            g.sym().norm()
        );
    }

    // how much the interpolation costs: table vs pointwise law at a probe
    // point that is not a table node
    let pointwise = EffectiveLaw::Pointwise(PointwiseLaw {
        solver,
        h: field.clone(),
        k: field,
    });
    let probe = [0.52, 0.48];
    let (s_t, c_t) = law.evaluate(&probe)?;
    let (s_p, c_p) = pointwise.evaluate(&probe)?;
    println!(
        "\nlaw at ({:.2}, {:.2}): C0000 table {:.5} vs pointwise {:.5}, residual gap {:.1e}",
        probe[0],
        probe[1],
        c_t[[0, 0, 0, 0]],
        c_p[[0, 0, 0, 0]],
        s_t.sub(&s_p).norm()
    );
    Ok(())
}
