//! JSON document for density matrices.
//!
//! ```json
//! {
//!   "basis": ["HH", "HV", "VH", "VV"],
//!   "entries": [[[re, im], ...4], ...4],   // row-major
//!   "metadata": { "source": "...", "timestamp": null, "provenance": ["..."] }
//! }
//! ```

use serde::{Deserialize, Serialize};

use super::state::{validate_density_matrix, DensityMatrix, Matrix4c, C64};
use super::QuantumError;

pub const BASIS_ORDER: [&str; 4] = ["HH", "HV", "VH", "VV"];

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Metadata {
    pub source: String,
    /// Omitted by default so that reruns stay byte-identical.
    #[serde(default)]
    pub timestamp: Option<String>,
    #[serde(default)]
    pub provenance: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DensityMatrixDocument {
    pub basis: Vec<String>,
    pub entries: [[[f64; 2]; 4]; 4],
    pub metadata: Metadata,
}

impl DensityMatrixDocument {
    pub fn new(rho: &DensityMatrix, metadata: Metadata) -> Self {
        let m = rho.matrix();
        let entries = [0, 1, 2, 3].map(|r| [0, 1, 2, 3].map(|c| [m[(r, c)].re, m[(r, c)].im]));
        Self {
            basis: BASIS_ORDER.iter().map(|s| s.to_string()).collect(),
            entries,
            metadata,
        }
    }

    pub fn density_matrix(&self) -> Result<DensityMatrix, QuantumError> {
        if self.basis.iter().map(String::as_str).ne(BASIS_ORDER) {
            return Err(QuantumError::Document(format!(
                "basis must be {BASIS_ORDER:?}, got {:?}",
                self.basis
            )));
        }
        let m = Matrix4c::from_fn(|r, c| {
            let [re, im] = self.entries[r][c];
            C64::new(re, im)
        });
        validate_density_matrix(m)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("document serializes")
    }

    pub fn from_json(s: &str) -> Result<Self, QuantumError> {
        serde_json::from_str(s).map_err(|e| QuantumError::Document(e.to_string()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quantum::PureState;

    #[test]
    fn round_trips_through_json() {
        let rho = DensityMatrix::werner(0.8).unwrap();
        let doc = DensityMatrixDocument::new(
            &rho,
            Metadata {
                source: "test".into(),
                timestamp: None,
                provenance: vec!["synthetic".into()],
            },
        );
        let back = DensityMatrixDocument::from_json(&doc.to_json()).unwrap();
        assert_eq!(back, doc);
        assert_eq!(back.density_matrix().unwrap(), rho);
    }

    #[test]
    fn rejects_wrong_basis_and_unphysical_entries() {
        let rho = PureState::phi_plus().to_density_matrix();
        let mut doc = DensityMatrixDocument::new(&rho, Metadata::default());
        doc.basis.swap(1, 2);
        assert!(doc.density_matrix().is_err());
        let mut doc = DensityMatrixDocument::new(&rho, Metadata::default());
        doc.entries[0][0] = [2.0, 0.0];
        assert!(matches!(doc.density_matrix(), Err(QuantumError::TraceNotOne { .. })));
    }
}
