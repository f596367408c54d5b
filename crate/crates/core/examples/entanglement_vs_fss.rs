//! Entangled fraction of the time-averaged cascade state against the fine
//! structure splitting, with the g²(0) correction applied.
//!
//! cargo run --example entanglement_vs_fss

use qdent::cascade::{fef_analytic, g2_correct_density_matrix, time_averaged_density_matrix, CascadeParams};
use qdent::quantum::{concurrence, fully_entangled_fraction};

fn main() -> qdent::Result<()> {
    let base = CascadeParams::new(0.0, 0.051, 0.018, 0.892)?;
    let (g2_x, g2_xx) = (0.016, 0.012);

    println!("{:>7} {:>8} {:>8} {:>10} {:>10}", "s/μeV", "FEF", "C", "FEF corr", "C corr");
    for i in 0..=12 {
        let p = base.with_s(i as f64 * 2.5);
        let rho = time_averaged_density_matrix(&p)?;
        let corrected = g2_correct_density_matrix(&rho, g2_x, g2_xx)?;
        let fef = fully_entangled_fraction(&rho);
        assert!((fef - fef_analytic(&p)).abs() < 1e-9);
        println!(
            "{:>7.1} {:>8.4} {:>8.4} {:>10.4} {:>10.4}",
            p.s,
            fef,
            concurrence(&rho),
            fully_entangled_fraction(&corrected),
            concurrence(&corrected)
        );
    }
    Ok(())
}
