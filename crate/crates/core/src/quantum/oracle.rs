//! Brute-force reference for the fully entangled fraction.
//!
//! Maximizes `⟨Φ|ρ|Φ⟩` over `|Φ⟩ = (U_A ⊗ U_B)|Φ⁺⟩` directly in the six Euler
//! angles of the two local unitaries. It shares no code with the magic-basis
//! evaluation and is meant for tests, not production paths.

use std::f64::consts::PI;

use nalgebra::Vector4;

use super::state::{kron2, DensityMatrix, Matrix2c, PureState, C64};
use crate::fit::nelder_mead;

/// `Rz(α) Ry(β) Rz(γ)`
fn euler_unitary(alpha: f64, beta: f64, gamma: f64) -> Matrix2c {
    let (cb, sb) = ((beta / 2.0).cos(), (beta / 2.0).sin());
    let e = |phi: f64| C64::from_polar(1.0, phi);
    Matrix2c::new(
        e(-(alpha + gamma) / 2.0) * cb,
        -e(-(alpha - gamma) / 2.0) * sb,
        e((alpha - gamma) / 2.0) * sb,
        e((alpha + gamma) / 2.0) * cb,
    )
}

fn candidate_state(angles: &[f64]) -> Vector4<C64> {
    let ua = euler_unitary(angles[0], angles[1], angles[2]);
    let ub = euler_unitary(angles[3], angles[4], angles[5]);
    kron2(&ua, &ub) * PureState::phi_plus().amplitudes()
}

fn overlap(rho: &DensityMatrix, angles: &[f64]) -> f64 {
    let v = candidate_state(angles);
    (v.adjoint() * rho.matrix() * v)[(0, 0)].re
}

/// Dense grid over the six angles followed by Nelder–Mead polish of the best
/// grid points. Always a lower bound on the true value.
pub fn fef_bruteforce_oracle(rho: &DensityMatrix, grid_resolution: usize) -> f64 {
    let n = grid_resolution.max(8);
    let cyclic: Vec<f64> = (0..n).map(|i| 2.0 * PI * i as f64 / n as f64).collect();
    let polar: Vec<f64> = (0..n).map(|i| PI * i as f64 / (n - 1) as f64).collect();

    const KEEP: usize = 4;
    let mut best: Vec<(f64, [f64; 6])> = Vec::with_capacity(KEEP + 1);
    for &a0 in &cyclic {
        for &a1 in &polar {
            for &a2 in &cyclic {
                for &a3 in &cyclic {
                    for &a4 in &polar {
                        for &a5 in &cyclic {
                            let angles = [a0, a1, a2, a3, a4, a5];
                            let v = overlap(rho, &angles);
                            if best.len() < KEEP || v > best[best.len() - 1].0 {
                                best.push((v, angles));
                                best.sort_by(|x, y| y.0.total_cmp(&x.0));
                                best.truncate(KEEP);
                            }
                        }
                    }
                }
            }
        }
    }

    best.iter()
        .map(|(v0, start)| {
            let (_, neg) = nelder_mead(|x| -overlap(rho, x), start, 0.3, 20_000, 1e-15);
            v0.max(-neg)
        })
        .fold(f64::NEG_INFINITY, f64::max)
}
