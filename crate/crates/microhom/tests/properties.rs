//! Randomized structural invariants. Each test states an identity the
//! pipeline must satisfy for *all* inputs and batters it with seeded random
//! instances: pure tensor algebra at 1e-11 and tighter, identities that hold
//! through the iterative cell solves at 1e-7. Failures here mean a broken
//! law, not an unlucky draw; the seeds are fixed.

use std::sync::Arc;

use microhom::field::FieldFn;
use microhom::law::{
    effective_elasticity, effective_elasticity_flux, effective_pair, uniformity_map,
};
use microhom::solver::{CellSolver, SolverOptions};
use microhom::tensor::{residual_pushforward, st_venant_stress, Tensor2, Tensor4};
use microhom::verify::{
    laminate_effective, material_uniformity_gap, random_invertible, LaminateCase, LaminateLayer,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn rel4(a: &Tensor4, b: &Tensor4) -> f64 {
    a.sub(b).norm() / b.norm()
}

fn random_symmetric(n: usize, rng: &mut impl Rng) -> Tensor2 {
    let mut t = Tensor2::zeros(n);
    for i in 0..n {
        for j in 0..=i {
            let v = rng.gen_range(-1.0..1.0);
            t[[i, j]] = v;
            t[[j, i]] = v;
        }
    }
    t
}

/// Generic fully symmetric positive tensor: an isotropic law pushed through
/// a random invertible map stays minor+major symmetric and coercive.
fn random_elasticity(n: usize, rng: &mut impl Rng) -> Tensor4 {
    let la = rng.gen_range(0.5..2.0);
    let mu = rng.gen_range(0.3..1.5);
    let a = random_invertible(n, rng);
    Tensor4::isotropic(n, la, mu).unwrap().transform(&a)
}

fn contrast_case() -> LaminateCase {
    LaminateCase {
        dim: 2,
        axis: 0,
        lame: vec![(1.0, 1.0), (10.0, 10.0)],
        fractions: vec![0.5, 0.5],
    }
}

// ---------------------------------------------------------------------------
// Transport algebra
// ---------------------------------------------------------------------------

#[test]
fn transport_composes_and_fixes_the_identity() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for n in [2usize, 3] {
        let id = Tensor2::identity(n);
        for _ in 0..12 {
            let c = random_elasticity(n, &mut rng);
            let a = random_invertible(n, &mut rng);
            let b = random_invertible(n, &mut rng);
            let two_step = c.transform(&b).transform(&a);
            let one_step = c.transform(&a.mul(&b));
            assert!(
                rel4(&two_step, &one_step) < 1e-11,
                "composition defect {:.3e} in dim {n}",
                rel4(&two_step, &one_step)
            );
            // the identity map multiplies by ones and adds zeros, so this is
            // exact, not just close
            assert!(rel4(&c.transform(&id), &c) < 1e-15);
        }
    }
}

#[test]
fn isotropic_laws_are_frame_indifferent() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    for _ in 0..20 {
        let la = rng.gen_range(0.5..3.0);
        let mu = rng.gen_range(0.2..2.0);

        let c2 = Tensor4::isotropic(2, la, mu).unwrap();
        let q2 = Tensor2::rotation_2d(rng.gen_range(-3.0..3.0));
        assert!(rel4(&c2.transform(&q2), &c2) < 1e-13);

        let c3 = Tensor4::isotropic(3, la, mu).unwrap();
        let q3 = Tensor2::rotation_3d(
            rng.gen_range(-3.0..3.0),
            rng.gen_range(-1.5..1.5),
            rng.gen_range(-3.0..3.0),
        );
        assert!(rel4(&c3.transform(&q3), &c3) < 1e-13);
    }
}

#[test]
fn transport_preserves_symmetries_and_coercivity() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    for _ in 0..15 {
        // an orthotropic base with a dominant diagonal is positive definite
        let c11: f64 = rng.gen_range(2.0..6.0);
        let c22: f64 = rng.gen_range(2.0..6.0);
        let c12 = rng.gen_range(0.0..0.4) * c11.min(c22);
        let g12 = rng.gen_range(0.5..2.0);
        let base = Tensor4::orthotropic_2d(c11, c22, c12, g12).unwrap();
        let alpha = base.coercivity_constant().unwrap();
        assert!(alpha > 0.0);

        let a = random_invertible(2, &mut rng);
        let pushed = base.transform(&a);
        let rep = pushed.check_symmetries(1e-10);
        assert!(rep.minor && rep.major, "transport broke a symmetry: {rep:?}");
        assert!(pushed.coercivity_constant().unwrap() > 0.0);
    }
}

#[test]
fn uniformity_map_recovers_the_target_map() {
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    for n in [2usize, 3] {
        for _ in 0..20 {
            let k1 = random_invertible(n, &mut rng);
            let k2 = random_invertible(n, &mut rng);
            let m = uniformity_map(&k1, &k2).unwrap();
            let gap = m.mul(&k2).sub(&k1).norm() / k1.norm();
            assert!(gap < 1e-11, "uniformity map defect {gap:.3e} in dim {n}");
        }
    }
}

// ---------------------------------------------------------------------------
// Residual stress generators
// ---------------------------------------------------------------------------

#[test]
fn st_venant_generator_vanishes_at_identity_and_is_linear_in_the_metric() {
    let mut rng = ChaCha8Rng::seed_from_u64(15);
    for n in [2usize, 3] {
        let id = Tensor2::identity(n);
        for _ in 0..10 {
            let c = random_elasticity(n, &mut rng);
            assert_eq!(st_venant_stress(&c, &id).norm(), 0.0);

            let c1 = id.add(&random_symmetric(n, &mut rng).scaled(0.3));
            let c2 = id.add(&random_symmetric(n, &mut rng).scaled(0.3));
            let joint = st_venant_stress(&c, &c1.add(&c2).sub(&id));
            let split = st_venant_stress(&c, &c1).add(&st_venant_stress(&c, &c2));
            assert!(joint.sub(&split).norm() < 1e-13 * joint.norm().max(1.0));

            let t = rng.gen_range(-2.0..2.0);
            let blended = id.add(&c1.sub(&id).scaled(t));
            let scaled = st_venant_stress(&c, &blended);
            let direct = st_venant_stress(&c, &c1).scaled(t);
            assert!(scaled.sub(&direct).norm() < 1e-13 * direct.norm().max(1.0));
        }
    }
}

#[test]
fn residual_pushforward_kills_orthogonal_maps_and_matches_the_definition() {
    let mut rng = ChaCha8Rng::seed_from_u64(16);
    for _ in 0..10 {
        let c = random_elasticity(2, &mut rng);
        let gen = |metric: &Tensor2| st_venant_stress(&c, metric);

        let q = Tensor2::rotation_2d(rng.gen_range(-3.0..3.0));
        let s_orth = residual_pushforward(gen, &q);
        // QᵀQ is 1 only up to rounding, so the output is tiny, not zero
        assert!(s_orth.norm() < 1e-14);

        let a = random_invertible(2, &mut rng);
        let direct = a.mul(&gen(&a.transpose().mul(&a))).mul(&a.transpose());
        assert!(residual_pushforward(gen, &a).sub(&direct).norm() < 1e-14);
    }
}

// ---------------------------------------------------------------------------
// Cell-solve identities
// ---------------------------------------------------------------------------

#[test]
fn effective_law_is_frame_indifferent() {
    // rotating both maps on the left rotates the whole microstructure
    // rigidly, so the effective pair transports by Q; only the CG stopping
    // point separates the two computations. Rotating K alone changes the
    // orientation of the anisotropy relative to the periodicity frame and
    // must NOT reduce to a transport.
    let case = contrast_case();
    let solver = CellSolver::new(case.material(16).unwrap(), SolverOptions::default());
    let h0 = Tensor2::from_rows(&[&[1.05, 0.1], &[0.0, 0.95]]);
    let k0 = Tensor2::from_rows(&[&[1.1, 0.2], &[0.05, 0.9]]);
    let op0 = solver.operator_at(&h0, &k0).unwrap();
    let (s0, c0) = effective_pair(&op0).unwrap();

    for theta in [0.4, 1.1, 2.6] {
        let q = Tensor2::rotation_2d(theta);
        let op = solver.operator_at(&q.mul(&h0), &q.mul(&k0)).unwrap();
        let (s, c) = effective_pair(&op).unwrap();

        let c_gap = rel4(&c, &c0.transform(&q));
        let s_gap = s.sub(&q.mul(&s0).mul(&q.transpose())).norm() / c0.norm();
        assert!(c_gap < 1e-8, "elasticity equivariance gap {c_gap:.3e} at theta {theta}");
        assert!(s_gap < 1e-8, "residual equivariance gap {s_gap:.3e} at theta {theta}");
    }

    // negative control: K rotated against a fixed H is a different material
    let q = Tensor2::rotation_2d(0.4);
    let op = solver.operator_at(&h0, &q.mul(&k0)).unwrap();
    let c = effective_elasticity(&op).unwrap();
    assert!(
        rel4(&c, &c0.transform(&q)) > 1e-3,
        "rotating K alone should not look like a pure transport"
    );
}

#[test]
fn energy_and_flux_forms_of_the_effective_tensor_agree() {
    // Galerkin orthogonality makes the two formulas identical at the exact
    // discrete solution; the measured gap is the corrector solve tolerance
    let case = contrast_case();
    let solver = CellSolver::new(case.material(16).unwrap(), SolverOptions::default());
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    for _ in 0..4 {
        let h = random_invertible(2, &mut rng);
        let k = random_invertible(2, &mut rng);
        let op = solver.operator_at(&h, &k).unwrap();
        let energy = effective_elasticity(&op).unwrap();
        let flux = effective_elasticity_flux(&op).unwrap();
        let gap = rel4(&flux, &energy);
        assert!(gap < 1e-8, "energy/flux form gap {gap:.3e}");
    }
}

#[test]
fn misaligned_laminate_refines_at_first_order() {
    // odd resolutions put the layer interface inside an element row, so the
    // discrete law must approach the closed form at the generic Q1 rate:
    // halving h halves the error, no faster, no slower
    let case = contrast_case();
    let layers: Vec<LaminateLayer> = case
        .lame
        .iter()
        .zip(&case.fractions)
        .map(|(&(la, mu), &fraction)| LaminateLayer {
            fraction,
            elasticity: Tensor4::isotropic(2, la, mu).unwrap(),
        })
        .collect();
    let exact = laminate_effective(case.axis, &layers).unwrap();

    let mut errors = Vec::new();
    for m in [15usize, 31, 63] {
        let solver = CellSolver::new(case.material(m).unwrap(), SolverOptions::default());
        let op = solver.canonical_operator().unwrap();
        let c = effective_elasticity(&op).unwrap();
        errors.push(rel4(&c, &exact));
    }
    let pretty: Vec<String> = errors.iter().map(|e| format!("{e:.3e}")).collect();
    println!("odd-ladder errors: {}", pretty.join(" "));
    for pair in errors.windows(2) {
        let ratio = pair[1] / pair[0];
        assert!(
            (0.35..=0.65).contains(&ratio),
            "refinement ratio {ratio:.3} outside the first-order band, errors {errors:?}"
        );
    }
}

#[test]
fn rotated_stretch_fields_share_one_material_law() {
    // K(x) = Q(θ(x))·D with a fixed stretch D keeps KᵀK constant, which is
    // exactly the condition for one transported law to cover the whole domain
    let case = contrast_case();
    let solver = Arc::new(CellSolver::new(
        case.material(16).unwrap(),
        SolverOptions::default(),
    ));
    let d = Tensor2::diagonal(&[1.3, 0.8]);
    let k_field: FieldFn = Arc::new(move |x: &[f64]| {
        Tensor2::rotation_2d(0.3 + 0.7 * x[0] - 0.4 * x[1]).mul(&d)
    });

    let mut rng = ChaCha8Rng::seed_from_u64(18);
    let pairs: Vec<(Vec<f64>, Vec<f64>)> = (0..5)
        .map(|_| {
            (
                vec![rng.gen_range(0.05..0.95), rng.gen_range(0.05..0.95)],
                vec![rng.gen_range(0.05..0.95), rng.gen_range(0.05..0.95)],
            )
        })
        .collect();
    let gap = material_uniformity_gap(&solver, &k_field, &pairs).unwrap();
    assert!(gap < 1e-8, "uniformity gap {gap:.3e}");
}

#[test]
fn checkerboard_law_is_invariant_under_quarter_turns() {
    // a quarter turn maps the checkerboard to its own half-period shift, and
    // periodic homogenization cannot see shifts
    let mesh = microhom::cell::CellMesh::build(2, 16).unwrap();
    let material = microhom::cell::CellMaterial::two_phase(
        mesh,
        microhom::cell::Geometry::Checkerboard { cells: 2 },
        Tensor4::isotropic(2, 1.0, 1.0).unwrap(),
        Tensor4::isotropic(2, 6.0, 4.0).unwrap(),
    )
    .unwrap();
    let solver = CellSolver::new(material, SolverOptions::default());
    let op = solver.canonical_operator().unwrap();
    let c = effective_elasticity(&op).unwrap();
    let q = Tensor2::rotation_2d(std::f64::consts::FRAC_PI_2);
    let gap = rel4(&c.transform(&q), &c);
    assert!(gap < 1e-8, "quarter-turn gap {gap:.3e}");
}

#[test]
fn operator_cache_keys_quantize_the_maps() {
    let case = contrast_case();
    let solver = CellSolver::new(case.material(8).unwrap(), SolverOptions::default());
    let h = Tensor2::identity(2);
    let k = Tensor2::diagonal(&[1.25, 0.8]);

    let op1 = solver.operator_at(&h, &k).unwrap();
    let mut nudged = k;
    nudged[[0, 0]] += 2e-13; // a fifth of the default quantum
    let op2 = solver.operator_at(&h, &nudged).unwrap();
    assert!(Arc::ptr_eq(&op1, &op2), "sub-quantum nudge must hit the cache");
    let stats = solver.stats();
    assert_eq!(stats.assemblies, 1);
    assert_eq!(stats.cache_hits, 1);

    let mut moved = k;
    moved[[0, 0]] += 1e-9; // a thousand quanta away
    let op3 = solver.operator_at(&h, &moved).unwrap();
    assert!(!Arc::ptr_eq(&op1, &op3));
    assert_eq!(solver.stats().assemblies, 2);
}
