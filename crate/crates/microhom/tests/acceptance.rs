//! The acceptance gate. Every numbered criterion runs here, in order, each
//! producing one or more check reports with one PASS/FAIL line apiece; the
//! stated runtime budgets are asserted, and at the end the produced check
//! ids are cross-checked against the traceability table so no criterion can
//! silently lose its coverage.
//!
//! Everything lives in a single test function: the budgets are wall-clock
//! statements and only hold on a process that is not fighting its siblings
//! for the core.

use microhom::cell::{CellMaterial, CellMesh};
use microhom::field::{derive_h_from_l, rotation_field, Domain, FieldFn, TransformField};
use microhom::law::{build_fast_path, effective_elasticity, effective_pair, EffectiveLaw};
use microhom::macrofem::{linear_displacement, solve_homogenized, MacroMesh, StudySetup};
use microhom::micro::{reduce_nonperiodic, reduction_distance_grid, NonperiodicField};
use microhom::solver::{CellSolver, SolverOptions};
use microhom::sparse::CgOptions;
use microhom::tensor::{Tensor2, Tensor4};
use microhom::verify::{
    all_passed, fast_path_gap, material_uniformity_gap, random_invertible, reports_csv,
    run_convergence_acceptance, run_invariant_suite, run_laminate_oracle, traceability,
    CheckReport, ConvergenceAcceptance, LaminateCase,
};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::sync::Arc;
use std::time::Instant;

fn contrast_case() -> LaminateCase {
    LaminateCase {
        dim: 2,
        axis: 0,
        lame: vec![(1.0, 1.0), (10.0, 10.0)],
        fractions: vec![0.5, 0.5],
    }
}

fn emit(all: &mut Vec<CheckReport>, reports: Vec<CheckReport>) {
    for r in reports {
        println!("{}", r.line());
        all.push(r);
    }
}

fn budget(start: Instant, limit_seconds: f64, criterion: &str) {
    let elapsed = start.elapsed().as_secs_f64();
    println!("       criterion {criterion}: {elapsed:.1}s of {limit_seconds:.0}s budget");
    assert!(
        elapsed <= limit_seconds,
        "criterion {criterion} blew its runtime budget: {elapsed:.1}s > {limit_seconds:.0}s"
    );
}

fn max_abs(values: &[f64]) -> f64 {
    values.iter().fold(0.0f64, |m, v| m.max(v.abs()))
}

#[test]
fn acceptance_criteria() {
    let mut all: Vec<CheckReport> = Vec::new();
    let opts = SolverOptions::default();

    // ----- 1: laminate oracle ---------------------------------------------
    let start = Instant::now();
    let case = contrast_case();
    let reports = run_laminate_oracle(&case, &[16, 32, 64], &opts).unwrap();
    emit(&mut all, reports);
    budget(start, 30.0, "1");

    // ----- 2: trivial reductions ------------------------------------------
    let start = Instant::now();
    let uniform_c = Tensor4::isotropic(2, 2.0, 1.5).unwrap();
    let uniform = CellMaterial::uniform(CellMesh::build(2, 16).unwrap(), uniform_c.clone()).unwrap();
    let usolver = CellSolver::new(uniform, opts);
    let h = Tensor2::from_rows(&[&[1.05, 0.1], &[0.0, 0.95]]);
    let k = Tensor2::from_rows(&[&[1.1, 0.2], &[0.05, 0.9]]);
    let mut corrector_amp: f64 = 0.0;
    for i in 0..3 {
        let w = usolver
            .solve_corrector(&h, &k, &Tensor2::sym_basis(2, i))
            .unwrap();
        corrector_amp = corrector_amp.max(max_abs(&w.values));
    }
    let op = usolver.operator_at(&h, &k).unwrap();
    let pushed = uniform_c.transform(&k);
    let gap = effective_elasticity(&op)
        .unwrap()
        .sub(&pushed)
        .norm()
        / pushed.norm();
    emit(
        &mut all,
        vec![CheckReport::upper_bound(
            "constant_elasticity_pushforward",
            corrector_amp.max(gap),
            1e-10,
            "a uniform cell has nothing to correct; its law is the plain transport",
            &format!("max corrector amplitude {corrector_amp:.3e}, tensor gap {gap:.3e}"),
        )],
    );

    let solver16 = Arc::new(CellSolver::new(case.material(16).unwrap(), opts));
    let mut residual_rel: f64 = 0.0;
    for theta in [0.4, 2.1] {
        let q = Tensor2::rotation_2d(theta);
        let op = solver16.operator_at(&q, &q).unwrap();
        let (s, c) = effective_pair(&op).unwrap();
        residual_rel = residual_rel.max(s.norm() / c.norm());
    }
    emit(
        &mut all,
        vec![CheckReport::upper_bound(
            "orthogonal_k_zero_residual",
            residual_rel,
            1e-10,
            "the stress generator is metric-driven and vanishes at KᵀK = 1",
            "‖effective residual‖ / ‖effective elasticity‖ for rotation K",
        )],
    );
    budget(start, 5.0, "2");

    // ----- 3: effective-tensor structure -----------------------------------
    let start = Instant::now();
    let solver32 = Arc::new(CellSolver::new(case.material(32).unwrap(), opts));
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    let mut symmetry: f64 = 0.0;
    let mut coercivity = f64::INFINITY;
    for _ in 0..20 {
        let h = random_invertible(2, &mut rng);
        let k = random_invertible(2, &mut rng);
        assert!(h.condition() <= 10.0 && k.condition() <= 10.0);
        let op = solver32.operator_at(&h, &k).unwrap();
        let c = effective_elasticity(&op).unwrap();
        let rep = c.check_symmetries(f64::INFINITY);
        symmetry = symmetry.max(rep.max_violation / c.norm());
        coercivity = coercivity.min(c.coercivity_constant().unwrap_or(f64::NEG_INFINITY));
    }
    emit(
        &mut all,
        vec![
            CheckReport::upper_bound(
                "effective_symmetry_random",
                symmetry,
                1e-10,
                "cell averaging preserves minor and major symmetry",
                "worst relative violation over 20 random (H, K) pairs at m = 32",
            ),
            CheckReport::lower_bound(
                "effective_coercivity_random",
                coercivity,
                0.0,
                "homogenization inherits coercivity from the phases",
                "smallest coercivity constant over 20 random (H, K) pairs",
            ),
        ],
    );
    budget(start, 300.0, "3");

    // ----- 4: H = K fast path ----------------------------------------------
    let start = Instant::now();
    let field = rotation_field(2, vec![0.9, 0.4], 0.3);
    let points: Vec<Vec<f64>> = vec![vec![0.2, 0.3], vec![0.55, 0.45], vec![0.8, 0.7]];
    let gap32 = fast_path_gap(&solver32, &field, &points).unwrap();
    let solver64 = Arc::new(CellSolver::new(case.material(64).unwrap(), opts));
    let gap64 = fast_path_gap(&solver64, &field, &points).unwrap();
    // both gaps sit at the solver floor when the discrete identity is exact;
    // the shrink requirement only bites above the floor
    let shrink_ok = gap64 <= (0.5 * gap32).max(1e-9);
    emit(
        &mut all,
        vec![CheckReport::upper_bound(
            "fast_path_direct",
            if shrink_ok { gap32 } else { gap32.max(1.0) },
            1e-3,
            "pushforward identity: the H = K law is a transport of the canonical law",
            &format!("gap {gap32:.3e} at m = 32, {gap64:.3e} at m = 64 (shrink ok: {shrink_ok})"),
        )],
    );

    let case3 = LaminateCase {
        dim: 3,
        axis: 2,
        lame: vec![(1.0, 1.0), (5.0, 5.0)],
        fractions: vec![0.5, 0.5],
    };
    let solver3 = Arc::new(CellSolver::new(case3.material(8).unwrap(), opts));
    let field3 = rotation_field(3, vec![0.3, 0.2, 0.1], 0.4);
    solver3.reset_stats();
    let fast3 = build_fast_path(
        solver3.clone(),
        &field3,
        &field3,
        &[vec![0.3, 0.4, 0.5], vec![0.7, 0.2, 0.6]],
    )
    .unwrap();
    fast3.evaluate(&[0.3, 0.4, 0.5]).unwrap();
    fast3.evaluate(&[0.7, 0.2, 0.6]).unwrap();
    let solves = solver3.stats().strain_solves;
    emit(
        &mut all,
        vec![CheckReport::upper_bound(
            "canonical_solve_count",
            (solves as f64 - 6.0).abs(),
            0.0,
            "the canonical cell problem is solved once per symmetric basis strain",
            &format!("{solves} strain solves for the 3D fast path, n(n+1)/2 = 6"),
        )],
    );
    budget(start, 300.0, "4");

    // ----- 5: material uniformity ------------------------------------------
    let stretch = Tensor2::diagonal(&[1.2, 0.8]);
    let base = rotation_field(2, vec![0.9, 0.4], 0.3);
    let k_field: FieldFn = Arc::new(move |x: &[f64]| base(x).mul(&stretch));
    let mut rng = ChaCha8Rng::seed_from_u64(1234);
    let pairs: Vec<(Vec<f64>, Vec<f64>)> = (0..5)
        .map(|_| {
            let p = |rng: &mut ChaCha8Rng| {
                vec![
                    rand::Rng::gen_range(rng, 0.05..0.95),
                    rand::Rng::gen_range(rng, 0.05..0.95),
                ]
            };
            (p(&mut rng), p(&mut rng))
        })
        .collect();
    let uniformity = material_uniformity_gap(&solver32, &k_field, &pairs).unwrap();
    emit(
        &mut all,
        vec![CheckReport::upper_bound(
            "material_uniformity",
            uniformity,
            1e-3,
            "laws at two points are conjugate under M = K₁K₂⁻¹ when KᵀK is constant",
            "worst relative gap over 5 random point pairs at m = 32",
        )],
    );

    // ----- 6: corrector linearity ------------------------------------------
    let h6 = Tensor2::from_rows(&[&[1.05, 0.0], &[0.2, 0.95]]);
    let k6 = Tensor2::from_rows(&[&[1.1, 0.15], &[0.0, 0.9]]);
    let e1 = Tensor2::from_rows(&[&[0.4, 0.1], &[0.1, -0.2]]);
    let e2 = Tensor2::from_rows(&[&[-0.1, 0.3], &[0.3, 0.5]]);
    let (a, b) = (0.7, -1.3);
    let w1 = solver16.solve_corrector(&h6, &k6, &e1).unwrap();
    let w2 = solver16.solve_corrector(&h6, &k6, &e2).unwrap();
    let w12 = solver16
        .solve_corrector(&h6, &k6, &e1.scaled(a).add(&e2.scaled(b)))
        .unwrap();
    let scale = max_abs(&w12.values).max(1.0);
    let linearity = w12
        .values
        .iter()
        .zip(w1.values.iter().zip(&w2.values))
        .map(|(s, (x, y))| (s - a * x - b * y).abs())
        .fold(0.0f64, f64::max)
        / scale;

    let mut skewed = e1;
    skewed[[0, 1]] += 0.6;
    skewed[[1, 0]] -= 0.6;
    let ws = solver16.solve_corrector(&h6, &k6, &skewed).unwrap();
    let skew_drift = ws
        .values
        .iter()
        .zip(&w1.values)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0f64, f64::max)
        / max_abs(&w1.values).max(1.0);
    emit(
        &mut all,
        vec![
            CheckReport::upper_bound(
                "corrector_linearity",
                linearity,
                1e-10,
                "the cell problem is linear in the driving strain",
                "relative defect of w(aE₁ + bE₂) against a·w(E₁) + b·w(E₂)",
            ),
            CheckReport::upper_bound(
                "corrector_skew_zero",
                skew_drift,
                1e-10,
                "correctors depend on the symmetric part of the loading only",
                "relative drift of w(E + skew) against w(E)",
            ),
        ],
    );

    // ----- 7: two-scale convergence ----------------------------------------
    let start = Instant::now();
    let law = EffectiveLaw::FastPath(
        build_fast_path(solver16.clone(), &field, &field, &[vec![0.5, 0.5]]).unwrap(),
    );
    let setup = StudySetup {
        solver: solver16.clone(),
        law,
        h_field: field.clone(),
        k_field: field.clone(),
        domain: Domain::unit(2),
        mesh_dims: vec![256, 256],
        eps_list: vec![1.0 / 8.0, 1.0 / 16.0, 1.0 / 32.0],
        r: 0.6,
        bc: linear_displacement(Tensor2::from_rows(&[&[0.1, 0.03], &[0.03, -0.05]])),
        body: None,
        cg: CgOptions {
            rel_tol: 1e-8,
            ..CgOptions::default()
        },
    };
    let (study, checks) = run_convergence_acceptance(&ConvergenceAcceptance {
        setup,
        budget_seconds: 900.0,
        final_ratio: 0.5,
        h1_band: 1.5,
    })
    .unwrap();
    println!("       ladder: {}", study.csv().replace('\n', " | "));
    emit(&mut all, checks);
    budget(start, 900.0, "7");

    // ----- 8: residual irrelevance -----------------------------------------
    let k8 = Tensor2::diagonal(&[1.2, 0.8]);
    let op8 = solver16.operator_at(&k8, &k8).unwrap();
    let (s_hom, c_hom) = effective_pair(&op8).unwrap();
    let s_norm = s_hom.norm();
    assert!(
        s_norm > 0.1,
        "criterion 8 needs a genuinely nonzero homogenized residual, got {s_norm:.3e}"
    );
    let mesh8 = MacroMesh::build(Domain::unit(2), vec![24, 24]).unwrap();
    let bc8 = linear_displacement(Tensor2::from_rows(&[&[0.2, 0.05], &[0.05, -0.1]]));
    let cg8 = CgOptions {
        rel_tol: 1e-13,
        ..CgOptions::default()
    };
    let with = solve_homogenized(
        &mesh8,
        &EffectiveLaw::Constant {
            residual: s_hom,
            elasticity: c_hom.clone(),
        },
        &bc8,
        None,
        &cg8,
    )
    .unwrap();
    let without = solve_homogenized(
        &mesh8,
        &EffectiveLaw::Constant {
            residual: Tensor2::zeros(2),
            elasticity: c_hom,
        },
        &bc8,
        None,
        &cg8,
    )
    .unwrap();
    let rel_gap = with
        .values
        .iter()
        .zip(&without.values)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0f64, f64::max)
        / max_abs(&without.values).max(1.0);
    emit(
        &mut all,
        vec![CheckReport::upper_bound(
            "constant_residual_irrelevance",
            rel_gap,
            1e-10,
            "a constant internal stress integrates to zero against Dirichlet test fields",
            &format!("‖S_r,hom‖ = {s_norm:.3}, displacement gap with/without it"),
        )],
    );

    // ----- 9: nonperiodic reduction diagnostic ------------------------------
    let start = Instant::now();
    let layout = TransformField::IsotropicScale {
        a: vec![0.0, 0.2],
        b: 1.0,
    }
    .compile(2)
    .unwrap();
    // closed form for L = (1 + 0.2 x₁)·1: H = [[s, 0.2 x₀ s], [0, s²]]
    let mut jac_gap: f64 = 0.0;
    for x in [[0.5, 0.5], [0.1, 0.9], [0.8, 0.3]] {
        let hd = derive_h_from_l(&layout, &x, 1e-5).unwrap();
        let s = 1.0 + 0.2 * x[1];
        let exact = Tensor2::from_rows(&[&[s, 0.2 * x[0] * s], &[0.0, s * s]]);
        jac_gap = jac_gap.max(hd.sub(&exact).norm());
    }
    emit(
        &mut all,
        vec![CheckReport::upper_bound(
            "layout_jacobian",
            jac_gap,
            1e-8,
            "closed-form Jacobian of the layout inverse map",
            "finite-difference H against the analytic one at 3 points",
        )],
    );

    let material9 = case.material(16).unwrap();
    let domain9 = Domain::unit(2);
    let mut distances = Vec::new();
    for eps in [1.0 / 8.0, 1.0 / 16.0, 1.0 / 32.0] {
        let full = NonperiodicField {
            material: material9.clone(),
            layout: layout.clone(),
            eps,
        };
        let reduced =
            reduce_nonperiodic(material9.clone(), &layout, domain9.clone(), eps, 0.6).unwrap();
        let rep = reduction_distance_grid(&full, &reduced, &[512, 512]).unwrap();
        distances.push(rep.tensor_l2);
    }
    let worst_ratio = distances
        .windows(2)
        .map(|w| w[1] / w[0])
        .fold(0.0f64, f64::max);
    emit(
        &mut all,
        vec![CheckReport::upper_bound(
            "reduction_ladder",
            worst_ratio,
            1.0 - 1e-12,
            "the locally periodic reduction converges to the nonperiodic field",
            &format!(
                "coefficient distances {} on a 512² grid must decrease",
                distances
                    .iter()
                    .map(|d| format!("{d:.4}"))
                    .collect::<Vec<_>>()
                    .join(" ")
            ),
        )],
    );
    budget(start, 120.0, "9");

    // ----- 10: determinism ---------------------------------------------------
    let mut mismatches = 0usize;
    let a = reports_csv(&run_invariant_suite(7).unwrap());
    let b = reports_csv(&run_invariant_suite(7).unwrap());
    if a != b {
        mismatches += 1;
    }
    let a = reports_csv(&run_laminate_oracle(&case, &[16, 32], &opts).unwrap());
    let b = reports_csv(&run_laminate_oracle(&case, &[16, 32], &opts).unwrap());
    if a != b {
        mismatches += 1;
    }
    let small_study = || {
        let law = EffectiveLaw::FastPath(
            build_fast_path(solver16.clone(), &field, &field, &[vec![0.5, 0.5]]).unwrap(),
        );
        let setup = StudySetup {
            solver: solver16.clone(),
            law,
            h_field: field.clone(),
            k_field: field.clone(),
            domain: Domain::unit(2),
            mesh_dims: vec![64, 64],
            eps_list: vec![1.0 / 4.0, 1.0 / 8.0],
            r: 0.6,
            bc: linear_displacement(Tensor2::from_rows(&[&[0.1, 0.03], &[0.03, -0.05]])),
            body: None,
            cg: CgOptions {
                rel_tol: 1e-8,
                ..CgOptions::default()
            },
        };
        microhom::macrofem::convergence_study(&setup).unwrap().csv()
    };
    if small_study() != small_study() {
        mismatches += 1;
    }
    emit(
        &mut all,
        vec![CheckReport::upper_bound(
            "csv_determinism",
            mismatches as f64,
            0.0,
            "fixed seed and config reproduce every CSV byte for byte",
            "invariant suite, laminate oracle and a reduced convergence study, run twice each",
        )],
    );

    // ----- the gate ----------------------------------------------------------
    let produced: std::collections::HashSet<&str> = all.iter().map(|r| r.id.as_str()).collect();
    for (criterion, ids) in traceability() {
        for id in ids.split_whitespace() {
            assert!(
                produced.contains(id),
                "criterion '{criterion}' references check '{id}' which never ran"
            );
        }
    }
    let failed: Vec<&CheckReport> = all.iter().filter(|r| !r.passed()).collect();
    assert!(
        all_passed(&all),
        "acceptance failures:\n{}",
        failed
            .iter()
            .map(|r| r.line())
            .collect::<Vec<_>>()
            .join("\n")
    );
    println!("all {} acceptance checks passed", all.len());
}
