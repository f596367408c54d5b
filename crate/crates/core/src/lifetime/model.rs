//! Decay models integrated over histogram bins and blurred by the IRF.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DecayModel {
    /// `e^{−t/τ} / τ`
    SingleExp,
    /// Exponential decay fed by an exponential rise, as for the exciton
    /// populated by the biexciton: `(e^{−t/τ} − e^{−t/τ_r}) / (τ − τ_r)`.
    RiseDecay,
}

/// Cumulative distribution of the emission time for excitation at `t = 0`.
pub fn emission_cdf(model: DecayModel, tau: f64, rise_tau: f64, t: f64) -> f64 {
    if t <= 0.0 {
        return 0.0;
    }
    match model {
        DecayModel::SingleExp => -(-t / tau).exp_m1(),
        DecayModel::RiseDecay => {
            let d = tau - rise_tau;
            if d.abs() < 1e-9 * tau {
                1.0 - (-t / tau).exp() * (1.0 + t / tau)
            } else {
                1.0 - (tau * (-t / tau).exp() - rise_tau * (-t / rise_tau).exp()) / d
            }
        }
    }
}

/// Fraction of emissions inside `[t − w/2, t + w/2)`.
pub fn bin_probability(model: DecayModel, tau: f64, rise_tau: f64, t: f64, w: f64) -> f64 {
    emission_cdf(model, tau, rise_tau, t + w / 2.0) - emission_cdf(model, tau, rise_tau, t - w / 2.0)
}

/// Uniform-grid IRF stored as weights at bin offsets `first..first + len`
/// relative to the bin holding `t = 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct IrfKernel {
    pub first: i64,
    pub weights: Vec<f64>,
}

impl IrfKernel {
    /// Keeps the nonzero span of an IRF sampled on bin centres `k · w`.
    pub fn from_profile(bin_centers: &[f64], irf: &[f64], w: f64) -> Self {
        let nz: Vec<usize> = (0..irf.len()).filter(|&i| irf[i] > 0.0).collect();
        let (lo, hi) = match (nz.first(), nz.last()) {
            (Some(&lo), Some(&hi)) => (lo, hi),
            _ => return Self { first: 0, weights: vec![1.0] },
        };
        Self {
            first: (bin_centers[lo] / w).round() as i64,
            weights: irf[lo..=hi].to_vec(),
        }
    }
}

/// Expected counts per bin for bin centres `k0 · w, (k0 + 1) · w, …`:
/// `A · Σ_j irf_j · P(bin − j − δ) + b`.
#[allow(clippy::too_many_arguments)]
pub fn convolved_model(
    model: DecayModel,
    tau: f64,
    rise_tau: f64,
    amplitude: f64,
    background: f64,
    offset: f64,
    k0: i64,
    n: usize,
    w: f64,
    kernel: &IrfKernel,
    out: &mut [f64],
) {
    // bin probabilities depend only on the index difference
    let kmin = k0 - (kernel.first + kernel.weights.len() as i64 - 1);
    let kmax = k0 + n as i64 - 1 - kernel.first;
    let probs: Vec<f64> = (kmin..=kmax)
        .map(|k| bin_probability(model, tau, rise_tau, k as f64 * w - offset, w))
        .collect();
    for (i, o) in out.iter_mut().enumerate().take(n) {
        let mut acc = 0.0;
        for (j, wt) in kernel.weights.iter().enumerate() {
            let k = k0 + i as i64 - (kernel.first + j as i64);
            acc += wt * probs[(k - kmin) as usize];
        }
        *o = amplitude * acc + background;
    }
}
