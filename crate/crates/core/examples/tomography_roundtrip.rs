//! Synthesize tomography counts from a cascade state, reconstruct it by
//! maximum likelihood and attach Monte Carlo error bars.
//!
//! cargo run --release --example tomography_roundtrip -- [pairs_per_group] [counts.csv]

use std::fs::File;

use qdent::cascade::{time_averaged_density_matrix, CascadeParams};
use qdent::quantum::trace_distance;
use qdent::rng::substream;
use qdent::tomography::{synthesize_counts, tomography_with_errors, MleOptions};

fn main() -> qdent::Result<()> {
    let mut args = std::env::args().skip(1);
    let pairs: f64 = args.next().map(|a| a.parse().expect("pairs_per_group")).unwrap_or(1.1e3);
    let out = args.next();

    let truth = time_averaged_density_matrix(&CascadeParams::new(0.0, 0.051, 0.018, 0.892)?)?;
    let counts = synthesize_counts(&truth, pairs, 1.0, &mut substream(7, 0));
    if let Some(path) = out {
        let f = File::create(&path).map_err(|e| qdent::Error::Io { path: path.clone(), source: e })?;
        counts.write_csv(f).map_err(|e| qdent::Error::Data(e.to_string()))?;
        println!("wrote {path}");
    }

    let res = tomography_with_errors(&counts, 200, 11, MleOptions::default())?;
    let err = res.metric_errors.expect("runs >= 2");
    println!("total counts      {}", counts.total_counts());
    println!("MLE iterations    {} (converged: {})", res.iterations, res.converged);
    println!("trace distance    {:.4}", trace_distance(&res.rho, &truth));
    println!("FEF               {:.4} ± {:.4}", res.metrics.fef, err.fef);
    println!("concurrence       {:.4} ± {:.4}", res.metrics.concurrence, err.concurrence);
    println!("purity            {:.4} ± {:.4}", res.metrics.purity, err.purity);
    Ok(())
}
