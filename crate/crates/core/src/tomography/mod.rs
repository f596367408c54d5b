//! Two-photon polarization tomography.
//!
//! Each of the 36 settings projects the exciton photon (first qubit) and the
//! biexciton photon (second qubit) onto one of `H, V, D, A, R, L`. The
//! reconstruction maximizes the Poisson likelihood of the recorded counts
//! over physical density matrices with the iterative `RρR` scheme, and error
//! bars come from Poisson resampling of the counts.

mod basis;
mod counts;
mod mle;
mod montecarlo;

pub use basis::{expected_counts, projector, BasisLabel, Pol};
pub use counts::{synthesize_counts, CountEntry, CountTable};
pub use mle::{log_likelihood, reconstruct_mle, MleOptions, TomographyResult};
pub use montecarlo::{monte_carlo_errors, tomography_with_errors, MetricErrors, LOW_RUN_THRESHOLD};

use thiserror::Error;

use crate::quantum::QuantumError;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TomographyError {
    #[error("count table line {line}: {message}")]
    Csv { line: usize, message: String },
    #[error("count table is missing settings: {0}")]
    MissingLabels(String),
    #[error("all counts are zero")]
    AllZero,
    #[error("invalid acquisition time {time} s for {label}")]
    InvalidExposure { label: String, time: f64 },
    #[error("likelihood stopped improving at iteration {iteration} (log-likelihood {loglik}, last change {delta:e})")]
    Stalled { iteration: usize, loglik: f64, delta: f64 },
    #[error("Monte Carlo needs at least 2 runs, got {0}")]
    TooFewRuns(usize),
    #[error("every Monte Carlo run failed; first error: {0}")]
    AllRunsFailed(String),
    #[error(transparent)]
    Quantum(#[from] QuantumError),
}
