use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;

use super::correlation::{cross_correlation, CorrelationHistogram};
use super::{fwhm_to_sigma, Event, EventStream, StreamError, TruthTag};
use crate::fit::{levenberg_marquardt, LmOptions};
use crate::rng::domain_stream;

const DOMAIN_HOM: u64 = 4;

/// Unbalanced Mach–Zehnder interferometer and its output detectors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HomSetup {
    /// Arm length difference, ns. Should match the source's pulse pair delay.
    pub delay: f64,
    /// Photon indistinguishability M.
    pub indistinguishability: f64,
    /// Reflectivity R of the output beam splitter.
    pub bs_reflectivity: f64,
    /// Single-photon interferometer visibility V_s.
    pub interferometer_visibility: f64,
    pub copolarized: bool,
    /// Output detector jitter, ns FWHM.
    pub jitter_fwhm: f64,
    pub bin_width: f64,
    /// Histogram half range, ns; defaults to half the repetition period.
    pub window: Option<f64>,
}

impl Default for HomSetup {
    fn default() -> Self {
        Self {
            delay: 1.8,
            indistinguishability: 1.0,
            bs_reflectivity: 0.5,
            interferometer_visibility: 1.0,
            copolarized: true,
            jitter_fwhm: 0.35,
            bin_width: 0.025,
            window: None,
        }
    }
}

impl HomSetup {
    pub fn validate(&self) -> Result<(), StreamError> {
        let bad = |m: String| Err(StreamError::InvalidConfig(m));
        if !(self.bs_reflectivity > 0.0 && self.bs_reflectivity < 1.0) {
            return bad(format!("reflectivity must lie in (0, 1), got {}", self.bs_reflectivity));
        }
        if !(self.delay > 0.0) {
            return bad(format!("delay must be > 0, got {}", self.delay));
        }
        for (name, v) in [
            ("indistinguishability", self.indistinguishability),
            ("interferometer_visibility", self.interferometer_visibility),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return bad(format!("{name} must lie in [0, 1], got {v}"));
            }
        }
        if !(self.bin_width > 0.0 && self.jitter_fwhm >= 0.0) {
            return bad("bin_width must be > 0 and jitter_fwhm >= 0".into());
        }
        Ok(())
    }

    /// Two-photon overlap entering the coincidence probability.
    pub fn overlap(&self) -> f64 {
        if self.copolarized {
            self.indistinguishability * self.interferometer_visibility.powi(2)
        } else {
            0.0
        }
    }

    /// Visibility an ideal single-photon source would show.
    pub fn ideal_visibility(&self) -> f64 {
        let (r, t) = (self.bs_reflectivity, 1.0 - self.bs_reflectivity);
        self.indistinguishability * self.interferometer_visibility.powi(2) * 2.0 * r * t / (r * r + t * t)
    }
}

struct Photon {
    t: f64,
    long: bool,
}

/// Sends the photons of `stream` through the interferometer and correlates
/// the two output ports (channel 0 against channel 1).
///
/// Photons are grouped by laser period and split into early and late slots at
/// half the delay. Each takes the long or short arm with equal probability.
/// When exactly one early photon took the long arm and exactly one late photon
/// took the short arm, the two meet at the output splitter and leave through
/// different ports with probability `R² + T² − 2RT·M·V_s²` (`R² + T²` for
/// crossed polarizations). All other photons are routed independently.
pub fn hom_simulate(stream: &EventStream, setup: &HomSetup, seed: u64) -> Result<CorrelationHistogram, StreamError> {
    setup.validate()?;
    let period = stream.rep_period_ns;
    if setup.delay >= period / 2.0 {
        return Err(StreamError::InvalidConfig(format!(
            "delay {} must be below half the repetition period {period}",
            setup.delay
        )));
    }
    let mut rng = domain_stream(seed, DOMAIN_HOM, 0);
    let (r, t) = (setup.bs_reflectivity, 1.0 - setup.bs_reflectivity);
    let p_split = r * r + t * t - 2.0 * r * t * setup.overlap();
    let p_both_reflect = r * r / (r * r + t * t);
    let jitter = (setup.jitter_fwhm > 0.0).then(|| Normal::new(0.0, fwhm_to_sigma(setup.jitter_fwhm)).expect("finite"));

    let mut out = Vec::with_capacity(stream.events.len());
    let mut emit = |t: f64, port_c: bool, rng: &mut crate::rng::SimRng| {
        let dt = jitter.map_or(0.0, |n| n.sample(rng));
        out.push(Event { timestamp_ns: t + dt, channel: if port_c { 0 } else { 1 }, tag: TruthTag::Signal });
    };
    let period_of = |t: f64| ((t + period / 4.0) / period).floor() as i64;

    let mut i = 0;
    let events = &stream.events;
    while i < events.len() {
        let k = period_of(events[i].timestamp_ns);
        let mut j = i;
        while j < events.len() && period_of(events[j].timestamp_ns) == k {
            j += 1;
        }
        let base = k as f64 * period;
        let photons: Vec<(Photon, bool)> = events[i..j]
            .iter()
            .map(|e| {
                let early = e.timestamp_ns - base < setup.delay / 2.0;
                let long = rng.random::<bool>();
                (Photon { t: e.timestamp_ns + if long { setup.delay } else { 0.0 }, long }, early)
            })
            .collect();
        let early_long: Vec<usize> = (0..photons.len()).filter(|&n| photons[n].1 && photons[n].0.long).collect();
        let late_short: Vec<usize> = (0..photons.len()).filter(|&n| !photons[n].1 && !photons[n].0.long).collect();
        let pair = (early_long.len() == 1 && late_short.len() == 1).then(|| (early_long[0], late_short[0]));

        for (n, (ph, _)) in photons.iter().enumerate() {
            match pair {
                Some((a, _)) if n == a => {
                    let b = pair.expect("checked").1;
                    let (long_c, short_c) = if rng.random::<f64>() < p_split {
                        if rng.random::<f64>() < p_both_reflect { (true, false) } else { (false, true) }
                    } else {
                        let c = rng.random::<bool>();
                        (c, c)
                    };
                    emit(ph.t, long_c, &mut rng);
                    emit(photons[b].0.t, short_c, &mut rng);
                }
                Some((_, b)) if n == b => {}
                _ => {
                    // long arm feeds the port that reflects into output c
                    let p_c = if ph.long { r } else { t };
                    let c = rng.random::<f64>() < p_c;
                    emit(ph.t, c, &mut rng);
                }
            }
        }
        i = j;
    }
    out.sort_by(|a, b| a.timestamp_ns.total_cmp(&b.timestamp_ns).then(a.channel.cmp(&b.channel)));
    let outputs = EventStream { events: out, channels: 2, rep_period_ns: period };
    let window = setup.window.unwrap_or(period / 2.0);
    cross_correlation(&outputs, 0, 1, setup.bin_width, window)
}

/// Unit-area Gaussian (σ) convolved with a two-sided exponential (τ).
pub(crate) fn gauss_exp_peak(t: f64, sigma: f64, tau: f64) -> f64 {
    let s2 = std::f64::consts::SQRT_2 * sigma;
    let z1 = (sigma * sigma / tau - t) / s2;
    let z2 = (sigma * sigma / tau + t) / s2;
    let log_g = -t * t / (2.0 * sigma * sigma);
    (scaled_erfc(log_g, z1) + scaled_erfc(log_g, z2)) / (4.0 * tau)
}

/// `e^{a + z²} erfc(z)`, which equals `e^{σ²/2τ² ∓ t/τ} erfc(z)` above but
/// stays finite when either factor alone would overflow.
fn scaled_erfc(a: f64, z: f64) -> f64 {
    if z < 10.0 {
        (a + z * z).exp() * erfc(z)
    } else {
        let inv = 1.0 / (z * z);
        let series = 1.0 - 0.5 * inv + 0.75 * inv * inv - 1.875 * inv.powi(3) + 6.5625 * inv.powi(4);
        a.exp() * series / (z * std::f64::consts::PI.sqrt())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PeakClusterFit {
    /// Areas of the peaks at `−2d, −d, 0, d, 2d`.
    pub areas: [f64; 5],
    pub area_errs: [f64; 5],
    pub sigma: f64,
    pub tau: f64,
    pub background: f64,
    pub chi2: f64,
}

/// Joint fit of the five-peak cluster within half a repetition period.
pub fn fit_peak_cluster(hist: &CorrelationHistogram, delay: f64, rep_period: f64) -> Result<PeakClusterFit, crate::fit::FitError> {
    let half = rep_period / 2.0;
    let data: Vec<(f64, f64)> = hist
        .counts
        .iter()
        .enumerate()
        .map(|(i, &n)| (hist.bin_center(i), n as f64))
        .filter(|(c, _)| c.abs() < half)
        .collect();
    let w = hist.bin_width;
    let centers = [-2.0 * delay, -delay, 0.0, delay, 2.0 * delay];

    let areas0 = centers.map(|c| data.iter().filter(|(x, _)| (x - c).abs() < delay / 2.0).map(|(_, n)| n).sum::<f64>());
    let (mut m1, mut m2, mut norm) = (0.0, 0.0, 0.0);
    for (x, n) in &data {
        let dx = x - delay;
        if dx.abs() < delay / 2.0 {
            m1 += n * dx;
            m2 += n * dx * dx;
            norm += n;
        }
    }
    let spread = if norm > 0.0 { (m2 / norm - (m1 / norm).powi(2)).max(w * w).sqrt() } else { delay / 6.0 };
    let edge: Vec<f64> = data.iter().filter(|(x, _)| x.abs() > 2.0 * delay + delay / 2.0).map(|(_, n)| *n).collect();
    let bg0 = if edge.is_empty() { 0.0 } else { edge.iter().sum::<f64>() / edge.len() as f64 };

    // σ and τ are fitted through their logarithms to keep them positive
    let mut p0 = areas0.to_vec();
    p0.push((0.8 * spread).ln());
    p0.push((0.3 * spread).ln());
    p0.push(bg0);
    let model = |p: &[f64], x: f64| {
        let (sigma, tau) = (p[5].exp(), p[6].exp());
        p[7] + w * (0..5).map(|j| p[j] * gauss_exp_peak(x - centers[j], sigma, tau)).sum::<f64>()
    };
    let sol = levenberg_marquardt(
        |p, r| {
            for (k, (x, n)) in data.iter().enumerate() {
                let m = model(p, *x);
                r[k] = (n - m) / m.max(1.0).sqrt();
            }
        },
        &p0,
        data.len(),
        &LmOptions::default(),
    )?;
    let p = &sol.params;
    Ok(PeakClusterFit {
        areas: [p[0], p[1], p[2], p[3], p[4]],
        area_errs: [0, 1, 2, 3, 4].map(|j| sol.std_err(j)),
        sigma: p[5].exp(),
        tau: p[6].exp(),
        background: p[7],
        chi2: sol.chi2,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HomVisibility {
    pub v: f64,
    pub v_err: f64,
    pub co: PeakClusterFit,
    pub cross: PeakClusterFit,
}

/// `V = 1 − A_co(0) / A_cross(0)` from fitted zero-delay peak areas.
pub fn hom_visibility(
    co: &CorrelationHistogram,
    cross: &CorrelationHistogram,
    delay: f64,
    rep_period: f64,
) -> Result<HomVisibility, StreamError> {
    let fco = fit_peak_cluster(co, delay, rep_period).map_err(|source| StreamError::PeakFit { which: "co-polarized", source })?;
    let fcr = fit_peak_cluster(cross, delay, rep_period)
        .map_err(|source| StreamError::PeakFit { which: "cross-polarized", source })?;
    let (a, ea) = (fco.areas[2].max(0.0), fco.area_errs[2]);
    let (b, eb) = (fcr.areas[2], fcr.area_errs[2]);
    let ratio = a / b;
    let v_err = ((ea / b).powi(2) + (ratio * eb / b).powi(2)).sqrt();
    Ok(HomVisibility { v: 1.0 - ratio, v_err, co: fco, cross: fcr })
}

/// Indistinguishability from a measured HOM visibility, undoing the
/// multiphoton contribution, the splitter imbalance and the interferometer
/// contrast: `M = (V + 2 g²) (R² + T²) / (2RT) / V_s²`.
pub fn indistinguishability_from_hom(
    v_meas: f64,
    g2: f64,
    bs_reflectivity: f64,
    interferometer_visibility: f64,
) -> Result<f64, StreamError> {
    if !(bs_reflectivity > 0.0 && bs_reflectivity < 1.0) {
        return Err(StreamError::InvalidConfig(format!("reflectivity must lie in (0, 1), got {bs_reflectivity}")));
    }
    if !(interferometer_visibility > 0.0 && interferometer_visibility <= 1.0) || !(g2 >= 0.0) || !v_meas.is_finite() {
        return Err(StreamError::InvalidConfig(format!(
            "need g2 >= 0 and V_s in (0, 1], got g2 = {g2}, V_s = {interferometer_visibility}"
        )));
    }
    let (r, t) = (bs_reflectivity, 1.0 - bs_reflectivity);
    Ok((v_meas + 2.0 * g2) * (r * r + t * t) / (2.0 * r * t) / interferometer_visibility.powi(2))
}

/// Lifetime-limited indistinguishability of cascade photons, `r / (1 + r)`
/// with `r = τ_X / τ_XX`.
pub fn hom_upper_bound(tau_x: f64, tau_xx: f64) -> Result<f64, StreamError> {
    if !(tau_x > 0.0 && tau_xx > 0.0) {
        return Err(StreamError::InvalidConfig(format!("lifetimes must be > 0, got {tau_x}, {tau_xx}")));
    }
    let r = tau_x / tau_xx;
    Ok(r / (1.0 + r))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn peak_shape_has_unit_area() {
        for (sigma, tau) in [(0.15, 0.02), (0.15, 0.2), (0.05, 0.5), (0.3, 0.001)] {
            let h = 1e-4;
            let area: f64 = (-200_000..200_000).map(|i| gauss_exp_peak(i as f64 * h, sigma, tau) * h).sum();
            assert!((area - 1.0).abs() < 1e-4, "σ={sigma} τ={tau}: {area}");
        }
    }

    #[test]
    fn peak_shape_matches_numerical_convolution() {
        let (sigma, tau) = (0.12, 0.08);
        let h = 1e-4;
        for t in [-0.3, 0.0, 0.05, 0.4] {
            let num: f64 = (-100_000..100_000)
                .map(|i| {
                    let s = i as f64 * h;
                    let g = (-(t - s) * (t - s) / (2.0 * sigma * sigma)).exp() / (sigma * (2.0 * std::f64::consts::PI).sqrt());
                    g * (-s.abs() / tau).exp() / (2.0 * tau) * h
                })
                .sum();
            assert!((num - gauss_exp_peak(t, sigma, tau)).abs() < 1e-6, "t={t}");
        }
    }

    #[test]
    fn correction_reference_values() {
        let m = indistinguishability_from_hom(1.0, 0.0, 0.5, 1.0).unwrap();
        assert!((m - 1.0).abs() < 1e-15);
        let m = indistinguishability_from_hom(0.60, 0.025, 0.48, 0.96).unwrap();
        assert!((m - 0.71).abs() < 0.02, "{m}");
        let m = indistinguishability_from_hom(0.61, 0.025, 0.48, 0.96).unwrap();
        assert!((m - 0.72).abs() < 0.02, "{m}");
        assert!(indistinguishability_from_hom(0.6, 0.0, 1.0, 0.9).is_err());
    }

    #[test]
    fn upper_bound_reference_values() {
        assert!((hom_upper_bound(0.044, 0.018).unwrap() - 0.710).abs() < 0.005);
        assert_eq!(hom_upper_bound(0.03, 0.03).unwrap(), 0.5);
        assert!((hom_upper_bound(0.120, 0.049).unwrap() - 0.71).abs() < 0.005);
        assert!(hom_upper_bound(0.0, 0.01).is_err());
    }
}
