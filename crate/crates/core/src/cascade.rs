//! Biexciton–exciton cascade model.
//!
//! The two-photon state emitted a time `t` after the exciton is populated is
//! `(|HH⟩ + e^{i s t/ħ}|VV⟩)/√2`. Averaging over the exciton's exponential
//! decay and admixing isotropic noise with weight `1 − k` gives the state whose
//! fully entangled fraction is
//!
//! `FEF = ¼ (1 + k + 2k / √(1 + (s τ_X / ħ)²))`.

use nalgebra::Matrix4;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fit::{levenberg_marquardt, FitError, LmOptions};
use crate::quantum::{
    fully_entangled_fraction, project_to_physical, validate_density_matrix, DensityMatrix,
    Matrix4c, PureState, QuantumError, C64,
};
use crate::HBAR_UEV_NS;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CascadeError {
    #[error("invalid cascade parameters: {0}")]
    InvalidParams(String),
    #[error("time must be non-negative, got {0} ns")]
    NegativeTime(f64),
    #[error("degenerate data: {0}")]
    DegenerateData(String),
    #[error("g2 correction: {0}")]
    Correction(String),
    #[error(transparent)]
    Fit(#[from] FitError),
    #[error(transparent)]
    Quantum(#[from] QuantumError),
}

/// Physics of one quantum dot.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CascadeParams {
    /// Fine structure splitting magnitude, μeV.
    #[serde(rename = "s_ueV")]
    pub s: f64,
    /// Exciton lifetime, ns.
    #[serde(rename = "tau_x_ns")]
    pub tau_x: f64,
    /// Biexciton lifetime, ns.
    #[serde(rename = "tau_xx_ns")]
    pub tau_xx: f64,
    /// Weight of the coherent cascade state against isotropic noise.
    pub k: f64,
}

impl CascadeParams {
    pub fn new(s: f64, tau_x: f64, tau_xx: f64, k: f64) -> Result<Self, CascadeError> {
        let p = Self { s, tau_x, tau_xx, k };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<(), CascadeError> {
        let bad = |m: String| Err(CascadeError::InvalidParams(m));
        if !(self.s.is_finite() && self.s >= 0.0) {
            return bad(format!("s must be >= 0 μeV, got {}", self.s));
        }
        if !(self.tau_x.is_finite() && self.tau_x > 0.0) {
            return bad(format!("tau_x must be > 0 ns, got {}", self.tau_x));
        }
        if !(self.tau_xx.is_finite() && self.tau_xx > 0.0) {
            return bad(format!("tau_xx must be > 0 ns, got {}", self.tau_xx));
        }
        if !(0.0..=1.0).contains(&self.k) {
            return bad(format!("k must lie in [0, 1], got {}", self.k));
        }
        Ok(())
    }

    pub fn with_s(self, s: f64) -> Self {
        Self { s, ..self }
    }

    /// Dimensionless precession during one exciton lifetime, `s τ_X / ħ`.
    pub fn precession(&self) -> f64 {
        self.s * self.tau_x / HBAR_UEV_NS
    }
}

/// `(|HH⟩ + e^{i s t/ħ}|VV⟩)/√2`, `t` in ns.
pub fn cascade_state_at(t: f64, params: &CascadeParams) -> Result<PureState, CascadeError> {
    if !(t >= 0.0) {
        return Err(CascadeError::NegativeTime(t));
    }
    params.validate()?;
    let a = std::f64::consts::FRAC_1_SQRT_2;
    let z = C64::new(0.0, 0.0);
    let phase = C64::from_polar(a, params.s * t / HBAR_UEV_NS);
    Ok(PureState::new([C64::new(a, 0.0), z, z, phase])?)
}

/// `k ρ_avg + (1 − k) I/4` where `ρ_avg` is the decay-weighted average of
/// [`cascade_state_at`]. The `|VV⟩⟨HH|` coherence is `1 / (2 (1 − i x))`
/// with `x = s τ_X / ħ`, i.e. magnitude `1/(2√(1+x²))` and phase `atan x`.
pub fn time_averaged_density_matrix(params: &CascadeParams) -> Result<DensityMatrix, CascadeError> {
    params.validate()?;
    let x = params.precession();
    let k = params.k;
    let coherence = C64::new(1.0, 0.0) / C64::new(1.0, -x) * C64::from(0.5 * k);
    let pop = C64::from(0.5 * k + 0.25 * (1.0 - k));
    let noise = C64::from(0.25 * (1.0 - k));
    let z = C64::new(0.0, 0.0);
    let m: Matrix4c = Matrix4::new(
        pop, z, z, coherence.conj(), //
        z, noise, z, z, //
        z, z, noise, z, //
        coherence, z, z, pop,
    );
    Ok(validate_density_matrix(m)?)
}

/// The closed-form entangled-fraction law.
pub fn fef_analytic(params: &CascadeParams) -> f64 {
    let x = params.precession();
    let k = params.k;
    0.25 * (1.0 + k + 2.0 * k / (1.0 + x * x).sqrt())
}

/// One measured point of the FEF-versus-FSS curve.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FefPoint {
    #[serde(rename = "s_ueV")]
    pub s: f64,
    pub fef: f64,
    pub fef_err: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FefFit {
    pub tau_x_ns: f64,
    pub tau_x_err_ns: f64,
    pub k: f64,
    pub k_err: f64,
    /// Row-major 2×2 covariance of `(tau_x_ns, k)`.
    pub covariance: [[f64; 2]; 2],
    pub chi2: f64,
    pub iterations: usize,
}

fn fef_model(s: f64, tau: f64, k: f64) -> f64 {
    let x = s * tau / HBAR_UEV_NS;
    0.25 * (1.0 + k + 2.0 * k / (1.0 + x * x).sqrt())
}

/// Weighted least-squares fit of [`fef_analytic`] for `(τ_X, k)`.
pub fn fit_fef_curve(points: &[FefPoint]) -> Result<FefFit, CascadeError> {
    if points.iter().any(|p| !(p.fef_err > 0.0) || !p.s.is_finite() || !p.fef.is_finite()) {
        return Err(CascadeError::DegenerateData(
            "every point needs finite s, fef and a positive fef_err".into(),
        ));
    }
    let mut distinct: Vec<f64> = points.iter().map(|p| p.s).collect();
    distinct.sort_by(f64::total_cmp);
    distinct.dedup();
    if distinct.len() < 2 || distinct.iter().all(|&s| s == 0.0) {
        return Err(CascadeError::DegenerateData(
            "need points at two or more distinct s values, one of them nonzero".into(),
        ));
    }
    if points.len() < 3 {
        return Err(CascadeError::DegenerateData(format!(
            "need at least 3 points, got {}",
            points.len()
        )));
    }

    // k enters linearly: for each trial τ solve k in closed form, keep the best.
    let chi2_at = |tau: f64, k: f64| -> f64 {
        points
            .iter()
            .map(|p| ((p.fef - fef_model(p.s, tau, k)) / p.fef_err).powi(2))
            .sum()
    };
    let best_k = |tau: f64| -> f64 {
        let (mut num, mut den) = (0.0, 0.0);
        for p in points {
            let x = p.s * tau / HBAR_UEV_NS;
            let slope = 0.25 * (1.0 + 2.0 / (1.0 + x * x).sqrt());
            let w = 1.0 / (p.fef_err * p.fef_err);
            num += w * slope * (p.fef - 0.25);
            den += w * slope * slope;
        }
        num / den
    };
    let (tau0, k0) = (0..241)
        .map(|i| 1e-4 * 10f64.powf(i as f64 / 40.0))
        .map(|tau| (tau, best_k(tau)))
        .min_by(|a, b| chi2_at(a.0, a.1).total_cmp(&chi2_at(b.0, b.1)))
        .expect("nonempty grid");

    let sol = levenberg_marquardt(
        |p, out| {
            for (o, pt) in out.iter_mut().zip(points) {
                *o = (pt.fef - fef_model(pt.s, p[0], p[1])) / pt.fef_err;
            }
        },
        &[tau0, k0],
        points.len(),
        &LmOptions::default(),
    )?;
    let tau = sol.params[0].abs();
    let cov = &sol.covariance;
    Ok(FefFit {
        tau_x_ns: tau,
        tau_x_err_ns: sol.std_err(0),
        k: sol.params[1],
        k_err: sol.std_err(1),
        covariance: [[cov[(0, 0)], cov[(0, 1)]], [cov[(1, 0)], cov[(1, 1)]]],
        chi2: sol.chi2,
        iterations: sol.iterations,
    })
}

/// Removes multiphoton coincidences modelled as isotropic background with
/// weight `ε = g2_x + g2_xx`: `ρ' = (ρ − ε I/4)/(1 − ε)`, re-projected onto
/// physical states when the subtraction leaves negative eigenvalues.
pub fn g2_correct_density_matrix(
    rho: &DensityMatrix,
    g2_x: f64,
    g2_xx: f64,
) -> Result<DensityMatrix, CascadeError> {
    for (name, g) in [("g2_x", g2_x), ("g2_xx", g2_xx)] {
        if !(0.0..0.5).contains(&g) {
            return Err(CascadeError::Correction(format!("{name} must lie in [0, 0.5), got {g}")));
        }
    }
    let eps = g2_x + g2_xx;
    if eps >= 1.0 {
        return Err(CascadeError::Correction(format!("background weight {eps} >= 1")));
    }
    if eps == 0.0 {
        return Ok(*rho);
    }
    let m = (rho.matrix() - Matrix4c::identity() * C64::from(eps / 4.0)) / C64::from(1.0 - eps);
    match validate_density_matrix(m) {
        Ok(r) => Ok(r),
        Err(QuantumError::NegativeEigenvalue { .. }) => project_to_physical(&m).map_err(|e| {
            CascadeError::Correction(format!("projection of corrected state failed: {e}"))
        }),
        Err(e) => Err(e.into()),
    }
}

/// FEF after the isotropic g² correction, `(F − ε/4)/(1 − ε)`, valid whenever
/// the corrected state needs no projection.
pub fn g2_corrected_fef(fef: f64, g2_x: f64, g2_xx: f64) -> f64 {
    let eps = g2_x + g2_xx;
    (fef - eps / 4.0) / (1.0 - eps)
}

/// Natural linewidth `ħ/τ` in μeV for a lifetime in ns.
pub fn natural_linewidth(tau_ns: f64) -> f64 {
    HBAR_UEV_NS / tau_ns
}

/// Purcell factor as the ratio of bulk to in-cavity lifetime.
pub fn purcell_factor(tau_measured_ns: f64, tau_bulk_ns: f64) -> f64 {
    tau_bulk_ns / tau_measured_ns
}

/// Convenience: FEF of the modelled state through the tomography metric path.
pub fn fef_of_model_state(params: &CascadeParams) -> Result<f64, CascadeError> {
    Ok(fully_entangled_fraction(&time_averaged_density_matrix(params)?))
}
