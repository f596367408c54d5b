//! Simulate a pulsed single-photon stream on a two-detector HBT setup and
//! measure g²(0) from the coincidence histogram.
//!
//! cargo run --release --example hbt_antibunching

use qdent::stream::{
    expected_click_rate, expected_g2_zero, g2_zero, hbt_histogram, simulate_stream, DetectorConfig, Line,
    PhotonStatistics, SourceConfig,
};

fn main() -> qdent::Result<()> {
    let dets = vec![
        DetectorConfig { efficiency: 0.4, line: Line::X, ..Default::default() },
        DetectorConfig { efficiency: 0.4, line: Line::X, ..Default::default() },
    ];
    for (name, source) in [
        ("cascade", SourceConfig { multiphoton_prob: 0.00547, ..Default::default() }),
        ("laser", SourceConfig { statistics: PhotonStatistics::Poissonian, prep_fidelity: 0.05, ..Default::default() }),
    ] {
        let stream = simulate_stream(&source, &dets, 0.05, 3)?;
        let hist = hbt_histogram(&stream, 0.05, 62.5)?;
        let g2 = g2_zero(&hist, stream.rep_period_ns)?;
        println!(
            "{name:>8}: {} clicks on ch0 ({:.3e}/s expected {:.3e}/s), g²(0) = {:.4} ± {:.4} (generator {:.4})",
            stream.count(0),
            stream.count(0) as f64 / 0.05,
            expected_click_rate(&source, &dets, 0),
            g2.g2,
            g2.g2_err,
            expected_g2_zero(&source, g2.side_peaks_per_side)
        );
    }
    Ok(())
}
