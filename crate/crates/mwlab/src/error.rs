//! Crate-wide error type.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("transition matrix is not row-stochastic: row {row} sums to {sum}")]
    NotStochastic { row: usize, sum: f64 },

    #[error("transition matrix has a negative entry at ({row},{col}): {value}")]
    NegativeEntry { row: usize, col: usize, value: f64 },

    #[error("chain is reducible: communicating classes {classes:?}")]
    ReducibleChain { classes: Vec<Vec<usize>> },

    #[error("chain is periodic with period {period}")]
    PeriodicChain { period: usize },

    #[error("invalid parameter {name}: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("observable must be centered for this operation ({context})")]
    UncenteredObservable { context: &'static str },

    #[error("operation requires a grid observable, got a scalar one")]
    ScalarObservableRejected,

    #[error("operation requires a scalar observable, got a grid one")]
    GridObservableRejected,

    #[error(
        "path too short: needs indices {needed_start}..={needed_end}, \
         has {have_start}..={have_end}"
    )]
    PathTooShort {
        needed_start: i64,
        needed_end: i64,
        have_start: i64,
        have_end: i64,
    },

    #[error(
        "requested path of {requested} states exceeds the materialization \
         budget of {budget}; use the streaming walker instead"
    )]
    PathTooLong { requested: usize, budget: usize },

    #[error(
        "model with {states} states is too large for dense {operation}; \
         use the iterative route (resolvent / sequential profiles)"
    )]
    TooLargeForDense { states: usize, operation: &'static str },

    #[error(
        "Poisson solve is near-singular (condition estimate {cond:.3e}); \
         use resolvent_approx instead"
    )]
    NearSingularSolve { cond: f64 },

    #[error("degenerate limit: asymptotic variance is zero ({context})")]
    DegenerateVariance { context: &'static str },

    #[error("numerical degeneracy: {context} produced {value:.3e}")]
    NumericalDegeneracy { context: &'static str, value: f64 },
}
