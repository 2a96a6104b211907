//! Run the built-in verification battery and print the reports the way the
//! `microhom verify` subcommand does.
//!
//! Two layers: the laminate oracle compares discrete effective tensors with
//! a closed form on a refinement ladder, and the invariant suite checks the
//! structural identities of the transformed cell problem (composition of
//! pushforwards, symmetry and coercivity inheritance, exact zeros, the
//! fast-path identity, material uniformity) on seeded random inputs.

use microhom::solver::SolverOptions;
use microhom::verify::{
    all_passed, reports_csv, run_invariant_suite, run_laminate_oracle, LaminateCase,
};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let case = LaminateCase {
        dim: 2,
        axis: 0,
        lame: vec![(1.0, 1.0), (10.0, 10.0)],
        fractions: vec![0.5, 0.5],
    };
    let mut reports = run_laminate_oracle(&case, &[16, 32, 64], &SolverOptions::default())?;
    reports.extend(run_invariant_suite(20260815)?);

    for r in &reports {
        println!("{}", r.line());
    }
    println!(
        "\n{} checks, all passed: {}",
        reports.len(),
        all_passed(&reports)
    );
    println!("\ncsv export (deterministic, no runtimes):\n{}", reports_csv(&reports));
    Ok(())
}
