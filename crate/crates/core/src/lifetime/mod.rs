//! Time-resolved photoluminescence: IRF-convolved decay models, synthetic
//! traces and lifetime fits with χ²-surface intervals.

mod fit;
mod model;

pub use fit::{fit_decay, DecayFitResult, FitDecayOptions, TAU_FLOOR_BINS};
pub use model::{bin_probability, convolved_model, emission_cdf, DecayModel, IrfKernel};

use std::io::{Read, Write};

use rand::Rng;
use serde::{Deserialize, Serialize};
use statrs::function::erf::erf;
use thiserror::Error;

use crate::fit::FitError;
use crate::rng::substream;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LifetimeError {
    #[error("trace is empty")]
    EmptyTrace,
    #[error("malformed trace: {0}")]
    InvalidTrace(String),
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
    #[error("rise-decay fits need the rise time (XX lifetime)")]
    MissingRiseTau,
    #[error("trace file: {0}")]
    Format(String),
    #[error(transparent)]
    Fit(#[from] FitError),
}

/// FWHM of independent Gaussian jitters added in quadrature.
pub fn combine_jitter_fwhm(fwhms: &[f64]) -> f64 {
    fwhms.iter().map(|f| f * f).sum::<f64>().sqrt()
}

/// Gaussian IRF integrated over each bin and normalized to unit sum. A zero
/// width gives a delta in the bin holding `t = 0`.
pub fn gaussian_irf(bin_centers: &[f64], bin_width: f64, fwhm: f64) -> Vec<f64> {
    let mut irf = vec![0.0; bin_centers.len()];
    if fwhm <= 0.0 {
        if let Some(i) = (0..bin_centers.len()).min_by(|&a, &b| bin_centers[a].abs().total_cmp(&bin_centers[b].abs())) {
            irf[i] = 1.0;
        }
        return irf;
    }
    let sigma = fwhm / (8.0 * std::f64::consts::LN_2).sqrt();
    let phi = |x: f64| 0.5 * (1.0 + erf(x / (sigma * std::f64::consts::SQRT_2)));
    for (v, c) in irf.iter_mut().zip(bin_centers) {
        *v = phi(c + bin_width / 2.0) - phi(c - bin_width / 2.0);
    }
    let total: f64 = irf.iter().sum();
    irf.iter_mut().for_each(|v| *v /= total);
    irf
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecayTrace {
    pub bin_centers: Vec<f64>,
    pub counts: Vec<u64>,
    /// Unit-sum instrument response on the same grid.
    pub irf: Vec<f64>,
}

impl DecayTrace {
    pub fn is_empty(&self) -> bool {
        self.counts.is_empty()
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn bin_width(&self) -> f64 {
        if self.bin_centers.len() < 2 {
            return 0.0;
        }
        (self.bin_centers[self.bin_centers.len() - 1] - self.bin_centers[0]) / (self.bin_centers.len() - 1) as f64
    }

    pub fn validate(&self) -> Result<(), LifetimeError> {
        let n = self.bin_centers.len();
        if self.counts.len() != n || self.irf.len() != n {
            return Err(LifetimeError::InvalidTrace(format!(
                "lengths differ: {} centres, {} counts, {} irf",
                n,
                self.counts.len(),
                self.irf.len()
            )));
        }
        if n < 2 {
            return Ok(());
        }
        let w = self.bin_width();
        if !(w > 0.0) || self.bin_centers.windows(2).any(|p| ((p[1] - p[0]) - w).abs() > 1e-6 * w) {
            return Err(LifetimeError::InvalidTrace("bins must be uniform and increasing".into()));
        }
        if self.irf.iter().any(|v| !(*v >= 0.0)) {
            return Err(LifetimeError::InvalidTrace("irf must be nonnegative".into()));
        }
        let s: f64 = self.irf.iter().sum();
        if (s - 1.0).abs() > 1e-9 {
            return Err(LifetimeError::InvalidTrace(format!("irf sums to {s}, expected 1")));
        }
        Ok(())
    }

    /// CSV with columns `bin_center_ns, counts, irf`.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<(), LifetimeError> {
        let mut wr = csv::Writer::from_writer(w);
        let fmt = |e: csv::Error| LifetimeError::Format(e.to_string());
        wr.write_record(["bin_center_ns", "counts", "irf"]).map_err(fmt)?;
        for i in 0..self.counts.len() {
            wr.write_record([self.bin_centers[i].to_string(), self.counts[i].to_string(), self.irf[i].to_string()])
                .map_err(fmt)?;
        }
        wr.flush().map_err(|e| LifetimeError::Format(e.to_string()))
    }

    /// Reads `bin_center_ns, counts[, irf]`. Without an IRF column a Gaussian
    /// of `default_irf_fwhm` is assumed.
    pub fn read_csv<R: Read>(r: R, default_irf_fwhm: f64) -> Result<Self, LifetimeError> {
        let mut rd = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(r);
        let headers = rd.headers().map_err(|e| LifetimeError::Format(e.to_string()))?.clone();
        let has_irf = headers.len() >= 3;
        let (mut centers, mut counts, mut irf) = (Vec::new(), Vec::new(), Vec::new());
        for (i, rec) in rd.records().enumerate() {
            let rec = rec.map_err(|e| LifetimeError::Format(e.to_string()))?;
            let line = i + 2;
            let field = |k: usize| rec.get(k).ok_or_else(|| LifetimeError::Format(format!("line {line}: missing column {k}")));
            centers.push(field(0)?.parse::<f64>().map_err(|e| LifetimeError::Format(format!("line {line}: {e}")))?);
            counts.push(field(1)?.parse::<u64>().map_err(|e| LifetimeError::Format(format!("line {line}: {e}")))?);
            if has_irf {
                irf.push(field(2)?.parse::<f64>().map_err(|e| LifetimeError::Format(format!("line {line}: {e}")))?);
            }
        }
        let mut trace = Self { irf: vec![0.0; centers.len()], bin_centers: centers, counts };
        if has_irf {
            let s: f64 = irf.iter().sum();
            if !(s > 0.0) {
                return Err(LifetimeError::InvalidTrace("irf column sums to zero".into()));
            }
            trace.irf = irf.into_iter().map(|v| v / s).collect();
        } else {
            trace.irf = gaussian_irf(&trace.bin_centers, trace.bin_width(), default_irf_fwhm);
        }
        trace.validate()?;
        Ok(trace)
    }
}

/// Histogram grid; bin centres are the multiples of `bin_width` inside
/// `[t_start, t_stop]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TraceGrid {
    pub bin_width: f64,
    pub t_start: f64,
    pub t_stop: f64,
}

impl Default for TraceGrid {
    fn default() -> Self {
        Self { bin_width: 0.004, t_start: -0.4, t_stop: 1.2 }
    }
}

impl TraceGrid {
    pub fn centers(&self) -> Vec<f64> {
        let k0 = (self.t_start / self.bin_width).ceil() as i64;
        let k1 = (self.t_stop / self.bin_width).floor() as i64;
        (k0..=k1).map(|k| k as f64 * self.bin_width).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum TraceNoise {
    #[default]
    Poisson,
    /// Expected counts rounded to integers.
    Expected,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TraceSpec {
    pub model: DecayModel,
    /// ns
    pub tau: f64,
    /// ns; required for the rise-decay model.
    pub rise_tau: Option<f64>,
    /// ns
    pub irf_fwhm: f64,
    /// Mean number of counts in the trace, background excluded.
    pub total_counts: f64,
    pub background_per_bin: f64,
    pub grid: TraceGrid,
    pub noise: TraceNoise,
}

impl Default for TraceSpec {
    fn default() -> Self {
        Self {
            model: DecayModel::SingleExp,
            tau: 0.023,
            rise_tau: None,
            irf_fwhm: 0.070,
            total_counts: 1e5,
            background_per_bin: 0.0,
            grid: TraceGrid::default(),
            noise: TraceNoise::Poisson,
        }
    }
}

/// Counts drawn from the IRF-convolved model on the spec's grid.
pub fn synthesize_trace(spec: &TraceSpec, seed: u64) -> Result<DecayTrace, LifetimeError> {
    if !(spec.tau > 0.0) {
        return Err(LifetimeError::InvalidParams(format!("tau must be > 0, got {}", spec.tau)));
    }
    let rise = match (spec.model, spec.rise_tau) {
        (DecayModel::RiseDecay, None) => return Err(LifetimeError::MissingRiseTau),
        (DecayModel::RiseDecay, Some(r)) if !(r > 0.0) => {
            return Err(LifetimeError::InvalidParams(format!("rise_tau must be > 0, got {r}")))
        }
        (_, r) => r.unwrap_or(0.0),
    };
    if spec.total_counts <= 0.0 {
        return Ok(DecayTrace { bin_centers: vec![], counts: vec![], irf: vec![] });
    }
    let centers = spec.grid.centers();
    let w = spec.grid.bin_width;
    let irf = gaussian_irf(&centers, w, spec.irf_fwhm);
    let kernel = IrfKernel::from_profile(&centers, &irf, w);
    let k0 = (centers[0] / w).round() as i64;
    let mut expected = vec![0.0; centers.len()];
    convolved_model(
        spec.model,
        spec.tau,
        rise,
        spec.total_counts,
        spec.background_per_bin,
        0.0,
        k0,
        centers.len(),
        w,
        &kernel,
        &mut expected,
    );
    let mut rng = substream(seed, 0);
    let counts = expected
        .iter()
        .map(|&m| match spec.noise {
            TraceNoise::Poisson => poisson(m, &mut rng),
            TraceNoise::Expected => m.round() as u64,
        })
        .collect();
    Ok(DecayTrace { bin_centers: centers, counts, irf })
}

fn poisson<R: Rng + ?Sized>(mean: f64, rng: &mut R) -> u64 {
    use rand_distr::{Distribution, Poisson};
    if mean <= 0.0 {
        0
    } else {
        Poisson::new(mean).expect("finite mean").sample(rng) as u64
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn irf_has_unit_area_and_combines_in_quadrature() {
        let grid = TraceGrid::default();
        let c = grid.centers();
        let irf = gaussian_irf(&c, grid.bin_width, combine_jitter_fwhm(&[0.070, 0.008]));
        assert!((irf.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!((combine_jitter_fwhm(&[0.070, 0.008]) - 0.070456).abs() < 1e-6);
        let delta = gaussian_irf(&c, grid.bin_width, 0.0);
        assert_eq!(delta.iter().filter(|v| **v > 0.0).count(), 1);
        assert_eq!(c[delta.iter().position(|v| *v > 0.0).unwrap()], 0.0);
    }

    #[test]
    fn zero_width_irf_gives_plain_exponential() {
        let spec = TraceSpec { irf_fwhm: 0.0, noise: TraceNoise::Expected, total_counts: 1e6, ..Default::default() };
        let t = synthesize_trace(&spec, 0).unwrap();
        assert!(t.counts.iter().zip(&t.bin_centers).filter(|(_, c)| **c < -0.002).all(|(n, _)| *n == 0));
        let i0 = t.bin_centers.iter().position(|c| *c > 0.01).unwrap();
        let ratio = t.counts[i0 + 5] as f64 / t.counts[i0] as f64;
        assert!((ratio - (-5.0 * 0.004 / 0.023f64).exp()).abs() < 1e-3);
    }

    #[test]
    fn irf_broadens_the_peak() {
        let spec = TraceSpec { noise: TraceNoise::Expected, total_counts: 1e6, ..Default::default() };
        let t = synthesize_trace(&spec, 0).unwrap();
        let peak = *t.counts.iter().max().unwrap() as f64;
        let above: Vec<f64> =
            t.bin_centers.iter().zip(&t.counts).filter(|(_, n)| **n as f64 >= peak / 2.0).map(|(c, _)| *c).collect();
        let fwhm = above.last().unwrap() - above.first().unwrap();
        assert!(fwhm > 0.023, "{fwhm}");
    }

    #[test]
    fn zero_counts_give_empty_trace() {
        let t = synthesize_trace(&TraceSpec { total_counts: 0.0, ..Default::default() }, 1).unwrap();
        assert!(t.is_empty());
    }

    #[test]
    fn csv_round_trip() {
        let t = synthesize_trace(&TraceSpec::default(), 4).unwrap();
        let mut buf = Vec::new();
        t.write_csv(&mut buf).unwrap();
        let back = DecayTrace::read_csv(buf.as_slice(), 0.07).unwrap();
        assert_eq!(back.counts, t.counts);
        assert!(back.irf.iter().zip(&t.irf).all(|(a, b)| (a - b).abs() < 1e-12));
        let two_col = "bin_center_ns,counts\n0.0,4\n0.004,3\n0.008,1\n";
        let t2 = DecayTrace::read_csv(two_col.as_bytes(), 0.0).unwrap();
        assert_eq!(t2.irf, vec![1.0, 0.0, 0.0]);
    }
}
