//! Two-qubit polarization states and entanglement metrics.
//!
//! Basis order throughout the crate is `(HH, HV, VH, VV)`, with the exciton (X)
//! photon as the first qubit and the biexciton (XX) photon as the second.

mod json;
mod metrics;
pub mod oracle;
pub mod random;
mod state;

pub use json::{DensityMatrixDocument, Metadata};
pub use metrics::{
    concurrence, fidelity_to_state, fully_entangled_fraction, magic_basis, purity,
    trace_distance, MetricReport,
};
pub use oracle::fef_bruteforce_oracle;
pub use state::{
    kron2, project_to_physical, validate_density_matrix, DensityMatrix, Matrix2c, Matrix4c,
    PureState, C64,
};

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum QuantumError {
    #[error("matrix is not Hermitian: max |M - M†| = {deviation:e}")]
    NotHermitian { deviation: f64 },
    #[error("trace is {trace} (expected 1)")]
    TraceNotOne { trace: f64 },
    #[error("matrix has negative eigenvalue {value:e}")]
    NegativeEigenvalue { value: f64 },
    #[error("state is not normalized: |ψ|² = {norm_sq}")]
    NotNormalized { norm_sq: f64 },
    #[error("matrix entry is not finite")]
    NonFinite,
    #[error("malformed density-matrix document: {0}")]
    Document(String),
}
