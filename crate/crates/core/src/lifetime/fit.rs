use serde::{Deserialize, Serialize};

use super::model::{convolved_model, DecayModel, IrfKernel};
use super::{DecayTrace, LifetimeError};
use crate::fit::{levenberg_marquardt, FitError, LmOptions};

/// Smallest lifetime the fit resolves, in units of the bin width.
pub const TAU_FLOOR_BINS: f64 = 0.05;

/// Relative χ² increase that defines the reported interval.
const CI_CHI2_FRACTION: f64 = 0.05;
const REWEIGHT_ROUNDS: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitDecayOptions {
    pub model: DecayModel,
    /// Rise time for [`DecayModel::RiseDecay`], held fixed in the fit.
    pub fixed_rise_tau: Option<f64>,
    /// Scan the χ² profile for intervals; otherwise both intervals collapse
    /// to the point estimate.
    pub scan_intervals: bool,
}

impl FitDecayOptions {
    pub fn single_exp() -> Self {
        Self { model: DecayModel::SingleExp, fixed_rise_tau: None, scan_intervals: true }
    }

    pub fn rise_decay(rise_tau: f64) -> Self {
        Self { model: DecayModel::RiseDecay, fixed_rise_tau: Some(rise_tau), scan_intervals: true }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecayFitResult {
    pub model: DecayModel,
    pub tau: f64,
    /// Where χ² has risen 5% above its minimum.
    pub tau_ci: (f64, f64),
    /// Where χ² has risen by one.
    pub tau_ci_delta_chi2_1: (f64, f64),
    pub rise_tau: Option<f64>,
    pub amplitude: f64,
    pub background: f64,
    /// Trace time offset relative to the IRF, ns.
    pub offset: f64,
    pub chi2: f64,
    pub dof: usize,
    /// The estimate or an interval edge sits at the resolution floor.
    pub at_lower_bound: bool,
    /// An interval edge reached the longest lifetime the grid can hold.
    pub at_upper_bound: bool,
}

struct Problem<'a> {
    counts: Vec<f64>,
    sigma2: Vec<f64>,
    k0: i64,
    w: f64,
    kernel: &'a IrfKernel,
    model: DecayModel,
    rise: f64,
}

impl Problem<'_> {
    fn n(&self) -> usize {
        self.counts.len()
    }

    fn eval(&self, tau: f64, a: f64, b: f64, delta: f64, out: &mut [f64]) {
        convolved_model(self.model, tau, self.rise, a, b, delta, self.k0, self.n(), self.w, self.kernel, out);
    }

    fn residuals(&self, tau: f64, a: f64, b: f64, delta: f64, r: &mut [f64]) {
        self.eval(tau, a, b, delta, r);
        for i in 0..r.len() {
            r[i] = (self.counts[i] - r[i]) / self.sigma2[i].sqrt();
        }
    }

    /// Minimum χ² over amplitude, background and offset at fixed τ.
    fn profile(&self, tau: f64, start: [f64; 3]) -> Result<(f64, [f64; 3]), FitError> {
        let sol = levenberg_marquardt(
            |p, r| self.residuals(tau, p[0], p[1], p[2], r),
            &start,
            self.n(),
            &LmOptions::default(),
        )?;
        Ok((sol.chi2, [sol.params[0], sol.params[1], sol.params[2]]))
    }
}

/// Weighted least-squares lifetime fit of an IRF-convolved decay model.
///
/// Free parameters are τ, amplitude, flat background and a time offset between
/// trace and IRF. Weights start from the counts and are then replaced by the
/// fitted model (Pearson weights) over a few refits. Intervals come from the
/// χ² profile in τ with the final weights frozen.
pub fn fit_decay(trace: &DecayTrace, options: &FitDecayOptions) -> Result<DecayFitResult, LifetimeError> {
    trace.validate()?;
    if trace.counts.len() < 5 || trace.total() == 0 {
        return Err(LifetimeError::EmptyTrace);
    }
    let rise = match (options.model, options.fixed_rise_tau) {
        (DecayModel::RiseDecay, None) => return Err(LifetimeError::MissingRiseTau),
        (DecayModel::RiseDecay, Some(r)) if !(r > 0.0) => {
            return Err(LifetimeError::InvalidParams(format!("rise time must be > 0, got {r}")))
        }
        (_, r) => r.unwrap_or(0.0),
    };
    let w = trace.bin_width();
    let kernel = IrfKernel::from_profile(&trace.bin_centers, &trace.irf, w);
    let counts: Vec<f64> = trace.counts.iter().map(|&n| n as f64).collect();
    let mut prob = Problem {
        sigma2: counts.iter().map(|n| n.max(1.0)).collect(),
        counts,
        k0: (trace.bin_centers[0] / w).round() as i64,
        w,
        kernel: &kernel,
        model: options.model,
        rise,
    };
    let tau_floor = TAU_FLOOR_BINS * w;
    let tau_ceiling = trace.bin_centers[trace.bin_centers.len() - 1] - trace.bin_centers[0];

    // starting values from the first tenth of the trace and the mean delay
    let head = (prob.n() / 10).max(1);
    let b0 = prob.counts[..head].iter().sum::<f64>() / head as f64;
    let a0 = prob.counts.iter().map(|n| n - b0).sum::<f64>().max(1.0);
    let t_mean = trace.bin_centers.iter().zip(&prob.counts).map(|(t, n)| t * (n - b0)).sum::<f64>() / a0;
    let irf_mean: f64 = trace.bin_centers.iter().zip(&trace.irf).map(|(t, g)| t * g).sum();
    let tau0 = (t_mean - irf_mean - rise).clamp(2.0 * w, tau_ceiling / 4.0);

    // τ = floor + e^u keeps the lifetime above the resolution floor
    let to_tau = |u: f64| tau_floor + u.exp();
    let mut p = vec![a0, (tau0 - tau_floor).ln(), b0, 0.0];
    let mut pinned = false;
    for round in 0..=REWEIGHT_ROUNDS {
        let free = levenberg_marquardt(
            |q, r| prob.residuals(to_tau(q[1]), q[0], q[2], q[3], r),
            &p,
            prob.n(),
            &LmOptions::default(),
        );
        match free {
            Ok(sol) => {
                p = sol.params;
                pinned = false;
            }
            // no lifetime information left: pin τ at the floor
            Err(FitError::Singular) => {
                let (_, rest) = prob.profile(tau_floor, [p[0], p[2], p[3]])?;
                p = vec![rest[0], f64::NEG_INFINITY, rest[1], rest[2]];
                pinned = true;
            }
            Err(e) => return Err(e.into()),
        }
        if round < REWEIGHT_ROUNDS {
            let mut m = vec![0.0; prob.n()];
            prob.eval(to_tau(p[1]), p[0], p[2], p[3], &mut m);
            prob.sigma2 = m.iter().map(|v| v.max(1.0)).collect();
        }
    }
    let tau = to_tau(p[1]);
    let best = [p[0], p[2], p[3]];
    let mut r = vec![0.0; prob.n()];
    prob.residuals(tau, best[0], best[1], best[2], &mut r);
    let chi2: f64 = r.iter().map(|v| v * v).sum();

    let mut at_lower_bound = pinned || tau < 2.0 * tau_floor;
    let mut at_upper_bound = false;
    let (ci5, ci1) = if options.scan_intervals {
        let scan = |target: f64, dir: f64| -> Result<(f64, bool), FitError> {
            interval_edge(&prob, tau, best, target, dir, tau_floor, tau_ceiling)
        };
        let (lo5, lo5_hit) = scan(chi2 * (1.0 + CI_CHI2_FRACTION), -1.0)?;
        let (hi5, hi5_hit) = scan(chi2 * (1.0 + CI_CHI2_FRACTION), 1.0)?;
        let (lo1, lo1_hit) = scan(chi2 + 1.0, -1.0)?;
        let (hi1, hi1_hit) = scan(chi2 + 1.0, 1.0)?;
        at_lower_bound |= lo5_hit || lo1_hit;
        at_upper_bound = hi5_hit || hi1_hit;
        ((lo5, hi5), (lo1, hi1))
    } else {
        ((tau, tau), (tau, tau))
    };

    Ok(DecayFitResult {
        model: options.model,
        tau,
        tau_ci: ci5,
        tau_ci_delta_chi2_1: ci1,
        rise_tau: options.fixed_rise_tau,
        amplitude: best[0],
        background: best[1],
        offset: best[2],
        chi2,
        dof: prob.n() - 4,
        at_lower_bound,
        at_upper_bound,
    })
}

/// Walks from the best τ in direction `dir` until the χ² profile exceeds
/// `target`, then bisects. Returns the edge and whether a bound was hit.
fn interval_edge(
    prob: &Problem,
    tau_best: f64,
    best: [f64; 3],
    target: f64,
    dir: f64,
    floor: f64,
    ceiling: f64,
) -> Result<(f64, bool), FitError> {
    let mut inside = tau_best;
    let mut start = best;
    let mut step = 0.02 * tau_best.max(floor);
    let outside = loop {
        let t = (inside + dir * step).clamp(floor, ceiling);
        if t == inside {
            return Ok((t, true));
        }
        let (c, params) = prob.profile(t, start)?;
        if c >= target {
            break t;
        }
        inside = t;
        start = params;
        step *= 1.6;
    };
    let (mut a, mut b) = (inside, outside);
    for _ in 0..40 {
        let mid = 0.5 * (a + b);
        let (c, params) = prob.profile(mid, start)?;
        if c >= target {
            b = mid;
        } else {
            a = mid;
            start = params;
        }
        if (b - a).abs() < 1e-7 * tau_best.max(floor) {
            break;
        }
    }
    Ok((0.5 * (a + b), false))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lifetime::{synthesize_trace, TraceNoise, TraceSpec};

    #[test]
    fn noiseless_single_exp_round_trip() {
        let spec = TraceSpec { tau: 0.014, noise: TraceNoise::Expected, total_counts: 1e8, ..Default::default() };
        let t = synthesize_trace(&spec, 0).unwrap();
        let r = fit_decay(&t, &FitDecayOptions::single_exp()).unwrap();
        assert!((r.tau - 0.014).abs() < 1e-4, "{}", r.tau);
        for (lo, hi) in [r.tau_ci, r.tau_ci_delta_chi2_1] {
            assert!(lo <= r.tau && r.tau <= hi);
        }
    }

    #[test]
    fn rise_decay_recovers_exciton_lifetime() {
        let spec = TraceSpec {
            model: DecayModel::RiseDecay,
            tau: 0.023,
            rise_tau: Some(0.014),
            total_counts: 1e5,
            ..Default::default()
        };
        let t = synthesize_trace(&spec, 12).unwrap();
        let r = fit_decay(&t, &FitDecayOptions::rise_decay(0.014)).unwrap();
        assert!((0.021..=0.025).contains(&r.tau), "{}", r.tau);
        assert!(r.tau_ci.0 <= r.tau && r.tau <= r.tau_ci.1);
        assert!(r.chi2 >= 0.0);
    }

    #[test]
    fn pure_irf_hits_the_floor() {
        let spec = TraceSpec { tau: 1e-5, total_counts: 1e5, ..Default::default() };
        let t = synthesize_trace(&spec, 3).unwrap();
        let r = fit_decay(&t, &FitDecayOptions::single_exp()).unwrap();
        assert!(r.at_lower_bound);
        assert!((r.tau_ci.0 - TAU_FLOOR_BINS * t.bin_width()).abs() < 1e-12);
    }

    #[test]
    fn rise_decay_needs_rise_time() {
        let t = synthesize_trace(&TraceSpec::default(), 1).unwrap();
        let opts = FitDecayOptions { model: DecayModel::RiseDecay, fixed_rise_tau: None, scan_intervals: false };
        assert_eq!(fit_decay(&t, &opts), Err(LifetimeError::MissingRiseTau));
    }
}
