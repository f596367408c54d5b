use std::f64::consts::FRAC_1_SQRT_2;

use nalgebra::{Matrix4, SymmetricEigen};
use serde::{Deserialize, Serialize};

use super::state::{hermitize, DensityMatrix, Matrix4c, PureState, C64};

/// Columns are the magic basis
/// `e1 = (|HH⟩+|VV⟩)/√2, e2 = i(|HH⟩−|VV⟩)/√2, e3 = i(|HV⟩+|VH⟩)/√2, e4 = (|HV⟩−|VH⟩)/√2`.
/// A state is maximally entangled iff its coefficients in this basis are real
/// up to a global phase.
pub fn magic_basis() -> Matrix4c {
    let r = C64::new(FRAC_1_SQRT_2, 0.0);
    let i = C64::new(0.0, FRAC_1_SQRT_2);
    let z = C64::new(0.0, 0.0);
    Matrix4c::new(
        r, i, z, z, //
        z, z, i, r, //
        z, z, i, -r, //
        r, -i, z, z,
    )
}

/// Maximum overlap `⟨Φ|ρ|Φ⟩` over all maximally entangled `|Φ⟩`: the largest
/// eigenvalue of `Re(M† ρ M)` in the magic basis.
pub fn fully_entangled_fraction(rho: &DensityMatrix) -> f64 {
    let m = magic_basis();
    let in_magic = m.adjoint() * rho.matrix() * m;
    let real = Matrix4::<f64>::from_fn(|r, c| 0.5 * (in_magic[(r, c)].re + in_magic[(c, r)].re));
    SymmetricEigen::new(real).eigenvalues.max()
}

/// Wootters concurrence `max(0, λ1 − λ2 − λ3 − λ4)`.
///
/// With `ρ = W W†` (columns of `W` are `√p_k |v_k⟩`), the `λ_i` are the singular
/// values of `Wᵀ (σy⊗σy) W`. This avoids square roots of round-off-sized
/// eigenvalues, so near-pure states keep full precision.
pub fn concurrence(rho: &DensityMatrix) -> f64 {
    let z = C64::new(0.0, 0.0);
    let one = C64::new(1.0, 0.0);
    // σy ⊗ σy in (HH, HV, VH, VV)
    let sy_sy = Matrix4c::new(
        z, z, z, -one, //
        z, z, one, z, //
        z, one, z, z, //
        -one, z, z, z,
    );
    let eig = rho.matrix().symmetric_eigen();
    let mut w = Matrix4c::zeros();
    for k in 0..4 {
        let scale = C64::from(eig.eigenvalues[k].max(0.0).sqrt());
        w.set_column(k, &(eig.eigenvectors.column(k) * scale));
    }
    let tau = w.transpose() * sy_sy * w;
    let mut lam: Vec<f64> = tau.singular_values().iter().copied().collect();
    lam.sort_by(|a, b| b.total_cmp(a));
    (lam[0] - lam[1] - lam[2] - lam[3]).max(0.0)
}

/// `⟨ψ|ρ|ψ⟩`
pub fn fidelity_to_state(rho: &DensityMatrix, target: &PureState) -> f64 {
    let v = target.amplitudes();
    (v.adjoint() * rho.matrix() * v)[(0, 0)].re.clamp(0.0, 1.0)
}

/// `Tr ρ²`
pub fn purity(rho: &DensityMatrix) -> f64 {
    let m = rho.matrix();
    m.iter().map(|z| z.norm_sqr()).sum()
}

/// `½ Σ |λ_i(ρ − σ)|`
pub fn trace_distance(a: &DensityMatrix, b: &DensityMatrix) -> f64 {
    let d = hermitize(&(a.matrix() - b.matrix()));
    0.5 * d.symmetric_eigen().eigenvalues.iter().map(|v| v.abs()).sum::<f64>()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub fef: f64,
    pub concurrence: f64,
    pub purity: f64,
    pub fidelity_to_target: f64,
}

impl MetricReport {
    pub fn compute(rho: &DensityMatrix, target: &PureState) -> Self {
        Self {
            fef: fully_entangled_fraction(rho),
            concurrence: concurrence(rho),
            purity: purity(rho),
            fidelity_to_target: fidelity_to_state(rho, target),
        }
    }

    pub fn as_array(&self) -> [f64; 4] {
        [self.fef, self.concurrence, self.purity, self.fidelity_to_target]
    }

    pub fn from_array(v: [f64; 4]) -> Self {
        Self {
            fef: v[0],
            concurrence: v[1],
            purity: v[2],
            fidelity_to_target: v[3],
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quantum::state::validate_density_matrix;
    use approx::assert_abs_diff_eq;

    fn hh() -> DensityMatrix {
        let mut m = Matrix4c::zeros();
        m[(0, 0)] = C64::new(1.0, 0.0);
        validate_density_matrix(m).unwrap()
    }

    #[test]
    fn magic_basis_is_unitary() {
        let m = magic_basis();
        assert!((m.adjoint() * m - Matrix4c::identity()).norm() < 1e-14);
    }

    #[test]
    fn fef_reference_values() {
        assert_abs_diff_eq!(fully_entangled_fraction(&PureState::phi_plus().to_density_matrix()), 1.0, epsilon = 1e-14);
        assert_abs_diff_eq!(fully_entangled_fraction(&DensityMatrix::maximally_mixed()), 0.25, epsilon = 1e-14);
        // Frozen from fef_bruteforce_oracle(|HH⟩⟨HH|, 8) = 0.5.
        assert_abs_diff_eq!(fully_entangled_fraction(&hh()), 0.5, epsilon = 1e-14);
    }

    #[test]
    fn concurrence_reference_values() {
        assert_abs_diff_eq!(concurrence(&PureState::phi_plus().to_density_matrix()), 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(concurrence(&DensityMatrix::maximally_mixed()), 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(concurrence(&hh()), 0.0, epsilon = 1e-12);
        // Werner: (3p - 1)/2
        let w = DensityMatrix::werner(0.9333).unwrap();
        assert_abs_diff_eq!(concurrence(&w), (3.0 * 0.9333 - 1.0) / 2.0, epsilon = 1e-9);
        assert_abs_diff_eq!(concurrence(&w), 0.90, epsilon = 1e-3);
    }

    #[test]
    fn fidelity_reference_values() {
        let phi = PureState::phi_plus();
        let rho = phi.to_density_matrix();
        assert_abs_diff_eq!(fidelity_to_state(&rho, &phi), 1.0, epsilon = 1e-14);
        assert_abs_diff_eq!(fidelity_to_state(&rho, &PureState::psi_plus()), 0.0, epsilon = 1e-14);
        assert_abs_diff_eq!(fidelity_to_state(&DensityMatrix::maximally_mixed(), &PureState::psi_minus()), 0.25, epsilon = 1e-14);
    }

    #[test]
    fn trace_distance_of_orthogonal_bell_states_is_one() {
        let a = PureState::phi_plus().to_density_matrix();
        let b = PureState::psi_minus().to_density_matrix();
        assert_abs_diff_eq!(trace_distance(&a, &b), 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(trace_distance(&a, &a), 0.0, epsilon = 1e-12);
    }
}
