//! Solve the periodic cell problems attached to one macroscopic point and
//! inspect the corrector fields.
//!
//! The microstructure is a stiff circular inclusion. The point carries a
//! sheared periodicity map H and a stretched, rotated anisotropy map K, so
//! every ingredient of the transformed cell problem is active: coefficients
//! transported by K, geometry deformed by H, and the metric KᵀK ≠ 1 driving
//! a residual-stress corrector on top of the strain ones.

use microhom::cell::{CellMaterial, CellMesh, Geometry};
use microhom::law::effective_pair;
use microhom::solver::{CellSolver, SolverOptions};
use microhom::tensor::{sym_dim, Tensor2, Tensor4};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mesh = CellMesh::build(2, 32)?;
    let geometry = Geometry::Inclusion {
        center: vec![0.5, 0.5],
        radius: 0.3,
    };
    let material = CellMaterial::two_phase(
        mesh,
        geometry,
        Tensor4::isotropic(2, 1.0, 1.0)?,
        Tensor4::isotropic(2, 8.0, 6.0)?,
    )?;
    println!(
        "inclusion cell at 32², volume fractions {:.4?}",
        material.volume_fractions
    );

    let solver = CellSolver::new(material, SolverOptions::default());
    let mut h = Tensor2::identity(2);
    h[[0, 1]] = 0.3;
    let k = Tensor2::rotation_2d(0.5).mul(&Tensor2::diagonal(&[1.2, 0.9]));

    println!("\ncorrectors, one per symmetric strain basis element:");
    for i in 0..sym_dim(2) {
        let e = Tensor2::sym_basis(2, i);
        let w = solver.solve_corrector(&h, &k, &e)?;
        let nodes = w.values.len() / 2;
        let mean: [f64; 2] = [
            w.values.iter().step_by(2).sum::<f64>() / nodes as f64,
            w.values.iter().skip(1).step_by(2).sum::<f64>() / nodes as f64,
        ];
        let amp = w.values.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        println!(
            "  basis {i}: {:>3} CG iterations, residual {:.1e}, amplitude {:.3e}, mean ({:+.1e}, {:+.1e})",
            w.iterations, w.residual, amp, mean[0], mean[1]
        );
    }

    let wr = solver.solve_residual_corrector(&h, &k)?;
    println!(
        "  metric:  {:>3} CG iterations, residual {:.1e} (driven by the per-phase stress ½ℂ[KᵀK − 1])",
        wr.iterations, wr.residual
    );

    let op = solver.operator_at(&h, &k)?;
    let (s_hom, c_hom) = effective_pair(&op)?;
    println!("\neffective residual stress:\n{s_hom:?}");
    println!("effective elasticity, Mandel rows:\n{}", c_hom.voigt_csv());
    let rep = c_hom.check_symmetries(1e-10);
    println!(
        "symmetry violation {:.1e}, coercivity constant {:.4}",
        rep.max_violation,
        c_hom.coercivity_constant()?
    );

    let dir = tempfile::tempdir()?;
    let dump = wr.dump(dir.path(), "metric_corrector")?;
    println!("\ndumped the metric corrector to {}", dump.header.display());
    let back = microhom::solver::CorrectorField::load(&dump.header)?;
    assert_eq!(back.values, wr.values);
    println!("reloaded it bit-for-bit ({} nodal values)", back.values.len());
    Ok(())
}
