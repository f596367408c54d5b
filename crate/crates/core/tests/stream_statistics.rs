use qdent::stream::*;

fn hbt_pair(jitter: f64) -> Vec<DetectorConfig> {
    vec![DetectorConfig { jitter_fwhm: jitter, efficiency: 0.5, ..Default::default() }; 2]
}

fn pulses(source: &SourceConfig, n: f64) -> f64 {
    (n + 1.0) / source.rep_rate
}

#[test]
fn click_rates_follow_the_thinning_product() {
    let source = SourceConfig {
        prep_fidelity: 0.85,
        blink_on_rate: 2e4,
        blink_off_rate: 1e4,
        extraction_eff: 0.6,
        setup_transmission: 0.5,
        ..Default::default()
    };
    let dets = vec![
        DetectorConfig { efficiency: 0.4, line: Line::X, ..Default::default() },
        DetectorConfig { efficiency: 0.7, line: Line::XX, ..Default::default() },
    ];
    let n = 1e7;
    let s = simulate_stream(&source, &dets, pulses(&source, n + 1.0), 17).unwrap();
    for ch in 0..2u8 {
        let expected = expected_click_rate(&source, &dets, ch as usize) / source.rep_rate * n;
        let got = s.count(ch) as f64;
        // blinking makes the count over-dispersed, so only the relative bound is strict
        assert!((got / expected - 1.0).abs() < 0.02, "channel {ch}: {got} vs {expected}");
    }
    let steady = SourceConfig { blink_off_rate: 0.0, ..source };
    let s = simulate_stream(&steady, &dets, pulses(&steady, n + 1.0), 18).unwrap();
    for ch in 0..2u8 {
        let expected = expected_click_rate(&steady, &dets, ch as usize) / steady.rep_rate * n;
        let got = s.count(ch) as f64;
        assert!((got - expected).abs() < 3.0 * expected.sqrt(), "channel {ch}: {got} vs {expected}");
    }
}

#[test]
fn single_photons_are_antibunched() {
    let source = SourceConfig::default();
    let s = simulate_stream(&source, &hbt_pair(0.35), pulses(&source, 2e6), 1).unwrap();
    let h = hbt_histogram(&s, 0.1, 50.0).unwrap();
    let g = g2_zero(&h, 12.5).unwrap();
    assert_eq!(g.zero_area, 0);
    assert!(g.side_mean > 1e4);
}

#[test]
fn injected_multiphoton_matches_the_analytic_g2() {
    let source = SourceConfig { multiphoton_prob: 0.02, ..Default::default() };
    let s = simulate_stream(&source, &hbt_pair(0.35), pulses(&source, 4e6), 2).unwrap();
    let g = g2_zero(&hbt_histogram(&s, 0.1, 50.0).unwrap(), 12.5).unwrap();
    let expected = expected_g2_zero(&source, g.side_peaks_per_side);
    assert!((g.g2 - expected).abs() < 3.0 * g.g2_err, "{} ± {} vs {expected}", g.g2, g.g2_err);
}

#[test]
fn blinking_raises_near_side_peaks_as_predicted() {
    let source = SourceConfig { multiphoton_prob: 0.05, blink_on_rate: 1e6, blink_off_rate: 2e6, ..Default::default() };
    let s = simulate_stream(&source, &hbt_pair(0.35), pulses(&source, 4e6), 3).unwrap();
    let g = g2_zero(&hbt_histogram(&s, 0.1, 50.0).unwrap(), 12.5).unwrap();
    let expected = expected_g2_zero(&source, g.side_peaks_per_side);
    assert!((g.g2 - expected).abs() < 3.0 * g.g2_err, "{} ± {} vs {expected}", g.g2, g.g2_err);
}

#[test]
fn laser_light_has_unit_g2() {
    let source = SourceConfig { statistics: PhotonStatistics::Poissonian, prep_fidelity: 0.3, ..Default::default() };
    let s = simulate_stream(&source, &hbt_pair(0.35), pulses(&source, 2e6), 4).unwrap();
    let g = g2_zero(&hbt_histogram(&s, 0.1, 50.0).unwrap(), 12.5).unwrap();
    assert!((g.g2 - 1.0).abs() < 3.0 * g.g2_err, "{} ± {}", g.g2, g.g2_err);
}

#[test]
fn deadtime_never_increases_the_rate() {
    let source = SourceConfig { statistics: PhotonStatistics::Poissonian, prep_fidelity: 2.0_f64.min(1.0), ..Default::default() };
    let mut last = usize::MAX;
    for dead in [0.0, 5.0, 12.0, 25.0, 60.0] {
        let dets = vec![DetectorConfig { deadtime: dead, dark_count_rate: 1e5, ..Default::default() }];
        let n = simulate_stream(&source, &dets, pulses(&source, 2e5), 5).unwrap().count(0);
        assert!(n <= last, "deadtime {dead}: {n} > {last}");
        last = n;
    }
}

fn hom_input(multiphoton: f64, seed: u64) -> EventStream {
    let source = SourceConfig {
        prep_fidelity: 0.9,
        multiphoton_prob: multiphoton,
        extraction_eff: 1.0,
        pulse_pair_delay: Some(1.8),
        ..Default::default()
    };
    let det = vec![DetectorConfig { jitter_fwhm: 0.0, ..Default::default() }];
    simulate_stream(&source, &det, pulses(&source, 3e5), seed).unwrap()
}

fn zero_area(h: &CorrelationHistogram) -> f64 {
    h.area(-0.9, 0.9) as f64
}

#[test]
fn perfect_interference_empties_the_zero_peak() {
    let s = hom_input(0.0, 6);
    let setup = HomSetup { indistinguishability: 1.0, bs_reflectivity: 0.5, interferometer_visibility: 1.0, ..Default::default() };
    let h = hom_simulate(&s, &setup, 1).unwrap();
    // only jitter tails of the ±delay peaks reach the zero-delay window
    let side = h.area(0.9, 2.7) as f64;
    assert!(side > 10_000.0);
    assert!(zero_area(&h) < 1e-3 * side, "{} vs {side}", zero_area(&h));
}

#[test]
fn distinguishable_photons_follow_classical_routing() {
    let s = hom_input(0.0, 7);
    let (r, t) = (0.48, 0.52);
    let cross = HomSetup { bs_reflectivity: r, copolarized: false, indistinguishability: 0.8, ..Default::default() };
    let h = hom_simulate(&s, &cross, 2).unwrap();

    // enumerate slot occupations and arm choices: a coincidence at zero delay
    // needs an early long-arm photon and a late short-arm photon
    let period = s.rep_period_ns;
    let mut pairs = 0.0;
    let mut k = 0;
    while k < s.events.len() {
        let base = ((s.events[k].timestamp_ns + period / 4.0) / period).floor() * period;
        let mut early = 0;
        let mut late = 0;
        while k < s.events.len() && s.events[k].timestamp_ns < base + 0.75 * period {
            if s.events[k].timestamp_ns - base < 0.9 { early += 1 } else { late += 1 }
            k += 1;
        }
        if early == 1 && late == 1 {
            pairs += 1.0;
        }
    }
    let expected = pairs * 0.25 * (r * r + t * t);
    let got = zero_area(&h);
    assert!((got - expected).abs() < 3.0 * expected.sqrt(), "{got} vs {expected}");

    let m0 = HomSetup { copolarized: true, indistinguishability: 0.0, ..cross.clone() };
    let h0 = hom_simulate(&s, &m0, 3).unwrap();
    let diff = zero_area(&h0) - got;
    assert!(diff.abs() < 3.0 * (2.0 * got).sqrt(), "{} vs {got}", zero_area(&h0));
}

#[test]
fn visibility_round_trip_and_bound() {
    let s = hom_input(0.0, 8);
    // M V_s² 2RT/(R²+T²) = 0.598
    let setup = HomSetup { indistinguishability: 0.6, bs_reflectivity: 0.5, interferometer_visibility: 0.998_332, ..Default::default() };
    assert!((setup.ideal_visibility() - 0.598).abs() < 1e-5);
    let co = hom_simulate(&s, &setup, 4).unwrap();
    let cross = hom_simulate(&s, &HomSetup { copolarized: false, ..setup.clone() }, 5).unwrap();
    let v = hom_visibility(&co, &cross, 1.8, 12.5).unwrap();
    assert!((v.v - 0.598).abs() < 3.0 * v.v_err, "{} ± {}", v.v, v.v_err);
    assert!((v.v - 0.60).abs() < 0.02);

    let noisy = hom_input(0.02, 9);
    let co = hom_simulate(&noisy, &setup, 6).unwrap();
    let cross = hom_simulate(&noisy, &HomSetup { copolarized: false, ..setup.clone() }, 7).unwrap();
    let v = hom_visibility(&co, &cross, 1.8, 12.5).unwrap();
    assert!(v.v <= setup.ideal_visibility() + 3.0 * v.v_err);
}
