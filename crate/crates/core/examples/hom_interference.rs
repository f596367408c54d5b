//! Two-photon interference of consecutive photons in an unbalanced
//! interferometer, and the inversion from visibility to indistinguishability.
//!
//! cargo run --release --example hom_interference

use qdent::stream::{
    hom_simulate, hom_upper_bound, hom_visibility, indistinguishability_from_hom, simulate_stream, DetectorConfig,
    HomSetup, SourceConfig,
};

fn main() -> qdent::Result<()> {
    let source = SourceConfig {
        tau_x: 0.044,
        tau_xx: 0.018,
        multiphoton_prob: 0.0114,
        extraction_eff: 1.0,
        pulse_pair_delay: Some(1.8),
        ..Default::default()
    };
    let g2 = 2.0 * source.prep_fidelity * source.multiphoton_prob / (source.prep_fidelity + source.multiphoton_prob).powi(2);
    let input = vec![DetectorConfig { jitter_fwhm: 0.0, ..Default::default() }];
    let stream = simulate_stream(&source, &input, 0.01, 21)?;

    let setup = HomSetup { indistinguishability: 0.71, bs_reflectivity: 0.48, interferometer_visibility: 0.96, ..Default::default() };
    let co = hom_simulate(&stream, &setup, 1)?;
    let cross = hom_simulate(&stream, &HomSetup { copolarized: false, ..setup.clone() }, 2)?;
    let v = hom_visibility(&co, &cross, setup.delay, stream.rep_period_ns)?;
    let m = indistinguishability_from_hom(v.v, g2, setup.bs_reflectivity, setup.interferometer_visibility)?;

    println!("g²(0) of the input       {g2:.4}");
    println!("ideal visibility         {:.4}", setup.ideal_visibility());
    println!("measured visibility      {:.4} ± {:.4}", v.v, v.v_err);
    println!("indistinguishability     {m:.3} (set {})", setup.indistinguishability);
    println!("lifetime-limited bound   {:.3}", hom_upper_bound(source.tau_x, source.tau_xx)?);
    Ok(())
}
