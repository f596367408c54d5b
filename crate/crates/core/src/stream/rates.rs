use super::{DetectorConfig, PhotonStatistics, SourceConfig, StreamError};

/// Photon rate reaching a detector, undoing its efficiency and non-paralyzable
/// dead time: `r_arr = r_meas / (η (1 − r_meas τ_dead))`.
pub fn arriving_rate(measured_rate: f64, detector_efficiency: f64, deadtime_ns: f64) -> Result<f64, StreamError> {
    if !(detector_efficiency > 0.0 && detector_efficiency <= 1.0) {
        return Err(StreamError::InvalidConfig(format!("efficiency must lie in (0, 1], got {detector_efficiency}")));
    }
    if !(measured_rate >= 0.0 && deadtime_ns >= 0.0) {
        return Err(StreamError::InvalidConfig("rate and dead time must be >= 0".into()));
    }
    let load = measured_rate * deadtime_ns * 1e-9;
    if load >= 1.0 {
        return Err(StreamError::Saturated(load));
    }
    Ok(measured_rate / (detector_efficiency * (1.0 - load)))
}

/// Fraction of emitted photons collected by the first lens, given the rate
/// arriving at the detector and the calibrated setup transmission and
/// preparation fidelity.
pub fn extraction_efficiency(
    arriving_rate: f64,
    rep_rate: f64,
    setup_transmission: f64,
    prep_fidelity: f64,
) -> Result<f64, StreamError> {
    if !(arriving_rate > 0.0 && rep_rate > 0.0 && setup_transmission > 0.0 && prep_fidelity > 0.0) {
        return Err(StreamError::InvalidConfig("all inputs must be > 0".into()));
    }
    let eta = arriving_rate / (rep_rate * setup_transmission * prep_fidelity);
    if eta > 1.0 + 1e-12 {
        return Err(StreamError::InconsistentCalibration(eta));
    }
    Ok(eta)
}

/// Click rate (Hz) [`simulate_stream`](super::simulate_stream) produces on
/// `channel`, ignoring dead time.
pub fn expected_click_rate(source: &SourceConfig, detectors: &[DetectorConfig], channel: usize) -> f64 {
    let det = &detectors[channel];
    let sharing = detectors.iter().filter(|d| d.line == det.line).count() as f64;
    let photons_per_pulse = match source.statistics {
        PhotonStatistics::Cascade | PhotonStatistics::Poissonian => source.prep_fidelity + source.multiphoton_prob,
    };
    let pulses = if source.pulse_pair_delay.is_some() { 2.0 } else { 1.0 };
    source.rep_rate * pulses * source.duty_cycle() * photons_per_pulse * source.extraction_eff * source.setup_transmission
        * det.efficiency
        / sharing
        + det.dark_count_rate
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn arriving_rate_reference_values() {
        assert_eq!(arriving_rate(1e6, 1.0, 0.0).unwrap(), 1e6);
        let r = arriving_rate(3.52e6, 0.40, 25.0).unwrap();
        assert!((r - 9.6e6).abs() < 0.1e6, "{r}");
        assert!(matches!(arriving_rate(4e7, 0.5, 25.0), Err(StreamError::Saturated(_))));
    }

    #[test]
    fn saturation_model_round_trip() {
        let (eta, dead, arr) = (0.35, 22.0, 7.3e6);
        let meas = eta * arr / (1.0 + eta * arr * dead * 1e-9);
        assert!((arriving_rate(meas, eta, dead).unwrap() - arr).abs() < 1e-6);
    }

    #[test]
    fn extraction_reference_values() {
        assert!((extraction_efficiency(80e6 * 0.3 * 0.9, 80e6, 0.3, 0.9).unwrap() - 1.0).abs() < 1e-12);
        let e = extraction_efficiency(9.6e6, 80e6, 0.174, 1.0).unwrap();
        assert!((e - 0.69).abs() < 0.005, "{e}");
        assert!(matches!(
            extraction_efficiency(2.0 * 80e6 * 0.3, 80e6, 0.3, 1.0),
            Err(StreamError::InconsistentCalibration(_))
        ));
    }
}
