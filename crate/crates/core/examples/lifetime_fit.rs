//! Fit exciton and biexciton decays measured through a 70 ps instrument
//! response.
//!
//! cargo run --release --example lifetime_fit

use qdent::lifetime::{fit_decay, synthesize_trace, DecayModel, FitDecayOptions, TraceSpec};

fn main() -> qdent::Result<()> {
    let xx = TraceSpec { tau: 0.014, ..Default::default() };
    let x = TraceSpec { model: DecayModel::RiseDecay, tau: 0.023, rise_tau: Some(0.014), ..Default::default() };

    let fit_xx = fit_decay(&synthesize_trace(&xx, 1)?, &FitDecayOptions::single_exp())?;
    println!(
        "XX: τ = {:.1} ps  (5% χ² interval {:.1}..{:.1} ps)",
        fit_xx.tau * 1e3,
        fit_xx.tau_ci.0 * 1e3,
        fit_xx.tau_ci.1 * 1e3
    );
    // the biexciton lifetime feeds the exciton rise
    let fit_x = fit_decay(&synthesize_trace(&x, 2)?, &FitDecayOptions::rise_decay(fit_xx.tau))?;
    println!(
        "X:  τ = {:.1} ps  (5% χ² interval {:.1}..{:.1} ps)",
        fit_x.tau * 1e3,
        fit_x.tau_ci.0 * 1e3,
        fit_x.tau_ci.1 * 1e3
    );
    Ok(())
}
