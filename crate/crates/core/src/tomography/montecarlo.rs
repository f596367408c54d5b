use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::counts::{poisson, CountTable};
use super::mle::{reconstruct_mle, MleOptions, TomographyResult};
use super::TomographyError;
use crate::quantum::MetricReport;
use crate::rng::domain_stream;

/// Below this many successful runs the standard deviations are flagged as unreliable.
pub const LOW_RUN_THRESHOLD: usize = 30;

const DOMAIN: u64 = 0x746f_6d6f;

/// 1σ spread of each metric across Poisson resamples.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricErrors {
    pub fef: f64,
    pub concurrence: f64,
    pub purity: f64,
    pub fidelity_to_target: f64,
    pub runs: usize,
    pub failed_runs: usize,
    pub low_run_warning: bool,
}

impl MetricErrors {
    pub fn as_report(&self) -> MetricReport {
        MetricReport::from_array([self.fef, self.concurrence, self.purity, self.fidelity_to_target])
    }
}

/// Redraws every count as `Poisson(observed)`, reconstructs each resample and
/// returns the sample standard deviation (n−1) of each metric. Run `i` always
/// uses the same random stream, so the result is independent of thread count.
pub fn monte_carlo_errors(
    counts: &CountTable,
    runs: usize,
    seed: u64,
    options: MleOptions,
) -> Result<MetricErrors, TomographyError> {
    if runs < 2 {
        return Err(TomographyError::TooFewRuns(runs));
    }
    counts.check_complete()?;

    let outcomes: Vec<Result<[f64; 4], TomographyError>> = (0..runs)
        .into_par_iter()
        .map(|i| {
            let mut rng = domain_stream(seed, DOMAIN, i as u64);
            let mut resampled = CountTable::new();
            for (l, e) in counts.iter() {
                resampled.insert(*l, poisson(e.counts as f64, &mut rng), e.acquisition_time_s);
            }
            reconstruct_mle(&resampled, options).map(|r| r.metrics.as_array())
        })
        .collect();

    let mut samples = Vec::with_capacity(runs);
    let mut first_error = None;
    for o in outcomes {
        match o {
            Ok(m) => samples.push(m),
            Err(e) => {
                first_error.get_or_insert(e);
            }
        }
    }
    let failed_runs = runs - samples.len();
    if samples.len() < 2 {
        let msg = first_error.map(|e| e.to_string()).unwrap_or_else(|| "fewer than two runs succeeded".into());
        return Err(TomographyError::AllRunsFailed(msg));
    }

    let n = samples.len() as f64;
    let mut sd = [0.0; 4];
    for (k, out) in sd.iter_mut().enumerate() {
        let mean = samples.iter().map(|s| s[k]).sum::<f64>() / n;
        let var = samples.iter().map(|s| (s[k] - mean).powi(2)).sum::<f64>() / (n - 1.0);
        *out = var.sqrt();
    }
    Ok(MetricErrors {
        fef: sd[0],
        concurrence: sd[1],
        purity: sd[2],
        fidelity_to_target: sd[3],
        runs,
        failed_runs,
        low_run_warning: samples.len() < LOW_RUN_THRESHOLD,
    })
}

/// Reconstruction plus Monte Carlo error bars.
pub fn tomography_with_errors(
    counts: &CountTable,
    runs: usize,
    seed: u64,
    options: MleOptions,
) -> Result<TomographyResult, TomographyError> {
    let mut res = reconstruct_mle(counts, options)?;
    res.metric_errors = Some(monte_carlo_errors(counts, runs, seed, options)?);
    res.mc_runs = runs;
    Ok(res)
}
