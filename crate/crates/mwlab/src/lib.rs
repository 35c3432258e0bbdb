//! A computational laboratory for stationary Markov functionals.
//!
//! Everything here runs on finite, irreducible, aperiodic Markov models,
//! where conditional expectations are exact linear algebra. On top of that
//! exact layer the crate provides:
//!
//! - [`models`]: model construction (including the renewal chain with
//!   heavy-tailed return times), observables, and seeded two-sided paths;
//! - [`conditions`]: projective-condition norms (`MW2`, `N_p`, `H_2`, the
//!   strengthened sum) and rho-mixing coefficients, evaluated exactly;
//! - [`martingale`]: the Poisson equation, martingale differences,
//!   asymptotic covariance, and exact approximation error;
//! - [`maximal`]: the dyadic maximal decomposition, maximal functions
//!   `M1`/`M2`, and Doob/Hopf inequality checks;
//! - [`limits`]: seeded Monte Carlo experiments for the CLT/WIP, the law of
//!   the iterated logarithm, and the heavy-tail counterexample regime;
//! - [`empirical`]: empirical-process distances, dependence coefficients
//!   (`phi~`, `alpha~`, `tau-check`), and their exact inequality checks.
//!
//! All randomness flows through the counter-based generator in [`rng`], so
//! every experiment is bit-reproducible from `(seed, stream)`.

pub mod conditions;
pub mod empirical;
pub mod error;
pub mod limits;
pub mod martingale;
pub mod maximal;
pub mod models;
pub mod rng;
pub mod stats;

pub use error::{Error, Result};
