//! Solvers for two-player zero-sum Markov games in which one (or both)
//! players privately observe a continuous-time Markov chain and play at
//! high frequency.
//!
//! The crate computes the discretized game values by splitting dynamic
//! programming ([`shapley_dp`]), the limit value as the solution of an
//! obstacle Hamilton-Jacobi equation ([`hj`]), closed-form upper/lower
//! bounds ([`analysis`]), and optimal belief-martingale constructions with
//! Monte Carlo evaluation ([`process_sim`]). All routes cross-validate each
//! other; the `acceptance` integration test runs the full battery.

pub mod analysis;
pub mod catalog;
pub mod chain;
pub mod envelope;
pub mod game_model;
pub mod hj;
pub mod matrix_game;
pub mod process_sim;
pub mod shapley_dp;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("parse error: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("validation failed:\n{}", .0.iter().map(|v| format!("  - {v}")).collect::<Vec<_>>().join("\n"))]
    Validation(Vec<game_model::Violation>),
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("domain error: {0}")]
    Domain(String),
    #[error("reducible chain: invariant measure is not unique")]
    ReducibleChain,
    #[error("unsupported dimension: {0}")]
    UnsupportedDimension(String),
    #[error("solver did not converge: {0}")]
    NonConvergence(String),
}

pub type Result<T> = std::result::Result<T, Error>;
