//! Numerical homogenization for linearly elastic materials whose
//! microstructure is locally periodic: an underlying Y-periodic material is
//! carried around the macroscopic domain by two pointwise linear maps, one
//! deforming the periodicity cell (H) and one transporting the anisotropy of
//! the constitutive law (K). A non-orthogonal K additionally generates
//! residual stress at the microscale.
//!
//! The crate solves the unit-cell corrector problems attached to a point
//! (through H_x and K_x), averages them into an effective constitutive law
//! (elasticity tensor plus residual stress), solves the macroscopic
//! boundary-value problem with that law, and cross-checks the whole chain by
//! ε-resolved direct simulations and closed-form oracles.
//!
//! Start with the runnable programs under `examples/`; each one exercises a
//! single capability end to end. The `microhom` binary exposes the same
//! pipeline behind a JSON config (`cell`, `homogenize`, `direct`, `converge`,
//! `verify` subcommands).

pub mod cell;
pub mod cli;
pub mod field;
pub mod law;
pub mod macrofem;
pub mod micro;
mod q1;
pub mod solver;
pub mod sparse;
pub mod tensor;
pub mod verify;

/// Crate-wide error type. Construction-time validation failures are
/// `Invalid`, schema/config problems are `Config`, iterative-solver
/// breakdowns are `Solver`.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    Invalid(String),
    #[error("config error: {0}")]
    Config(String),
    #[error("singular matrix: {0}")]
    Singular(String),
    #[error("solver failed in {context}: residual {residual:.3e} after {iterations} iterations")]
    Solver {
        context: String,
        residual: f64,
        iterations: usize,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
