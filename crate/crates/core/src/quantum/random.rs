//! Random states and unitaries for property tests and simulations.

use nalgebra::Vector4;
use rand::Rng;
use rand_distr::StandardNormal;

use super::state::{hermitize, validate_density_matrix, DensityMatrix, Matrix2c, Matrix4c, PureState, C64};

fn gaussian_c64<R: Rng + ?Sized>(rng: &mut R) -> C64 {
    C64::new(rng.sample(StandardNormal), rng.sample(StandardNormal))
}

/// Haar-random pure state.
pub fn pure_state<R: Rng + ?Sized>(rng: &mut R) -> PureState {
    loop {
        let amps = [0; 4].map(|_| gaussian_c64(rng));
        if let Ok(s) = PureState::normalized(amps) {
            return s;
        }
    }
}

/// Hilbert–Schmidt random mixed state `G G† / Tr(G G†)` with Ginibre `G`.
pub fn density_matrix<R: Rng + ?Sized>(rng: &mut R) -> DensityMatrix {
    let g = Matrix4c::from_fn(|_, _| gaussian_c64(rng));
    let m = g * g.adjoint();
    let t = m.trace();
    validate_density_matrix(hermitize(&(m / t))).expect("Ginibre product is physical")
}

/// Haar-random single-qubit unitary (QR of a Ginibre matrix with phase fix).
pub fn unitary2<R: Rng + ?Sized>(rng: &mut R) -> Matrix2c {
    let g = Matrix2c::from_fn(|_, _| gaussian_c64(rng));
    let qr = g.qr();
    let (q, r) = (qr.q(), qr.r());
    let mut out = q;
    for k in 0..2 {
        let d = r[(k, k)];
        let phase = if d.norm() > 0.0 { d / C64::from(d.norm()) } else { C64::new(1.0, 0.0) };
        let col = out.column(k) * phase;
        out.set_column(k, &col);
    }
    out
}

/// Maximally entangled state `(U_A ⊗ U_B)|Φ⁺⟩` with Haar-random local unitaries.
pub fn maximally_entangled<R: Rng + ?Sized>(rng: &mut R) -> PureState {
    let ua = unitary2(rng);
    let ub = unitary2(rng);
    let v: Vector4<C64> = super::kron2(&ua, &ub) * PureState::phi_plus().amplitudes();
    PureState::normalized([v[0], v[1], v[2], v[3]]).expect("unitary image is normalized")
}
