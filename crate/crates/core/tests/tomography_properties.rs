use proptest::prelude::*;
use qdent::cascade::{time_averaged_density_matrix, CascadeParams};
use qdent::quantum::{random, trace_distance};
use qdent::rng::substream;
use qdent::tomography::{
    expected_counts, log_likelihood, monte_carlo_errors, reconstruct_mle, synthesize_counts, CountTable,
    MleOptions,
};

fn tight() -> MleOptions {
    MleOptions { max_iter: 1_000_000, tol: 1e-10 }
}

#[test]
fn noiseless_random_states_are_recovered() {
    let mut rng = substream(2024, 0);
    for i in 0..50 {
        let truth = random::density_matrix(&mut rng);
        let counts = CountTable::from_expected(&expected_counts(&truth, 1e12), 1.0);
        let res = reconstruct_mle(&counts, tight()).unwrap();
        let d = trace_distance(&res.rho, &truth);
        assert!(d < 1e-5, "state {i}: distance {d}, {} iterations", res.iterations);
    }
}

#[test]
fn mle_dominates_the_generating_state() {
    for seed in 0..20 {
        let mut rng = substream(seed, 0);
        let truth = random::density_matrix(&mut rng);
        let counts = synthesize_counts(&truth, 500.0, 1.0, &mut rng);
        let res = reconstruct_mle(&counts, MleOptions::default()).unwrap();
        assert!(res.loglik >= log_likelihood(&counts, &truth).unwrap() - 1e-9, "seed {seed}");
    }
}

#[test]
fn sigma_scales_as_inverse_root_n() {
    let params = CascadeParams::new(0.0, 0.051, 0.018, 0.9067).unwrap();
    let truth = time_averaged_density_matrix(&params).unwrap();
    let mut ratios = Vec::new();
    for rep in 0..10 {
        let mut rng = substream(77, rep);
        let small = synthesize_counts(&truth, 2000.0, 1.0, &mut rng);
        let large = synthesize_counts(&truth, 4000.0, 1.0, &mut rng);
        let a = monte_carlo_errors(&small, 200, rep, MleOptions::default()).unwrap().fef;
        let b = monte_carlo_errors(&large, 200, rep, MleOptions::default()).unwrap().fef;
        ratios.push(a / b);
    }
    let mean = ratios.iter().sum::<f64>() / ratios.len() as f64;
    assert!((mean / 2f64.sqrt() - 1.0).abs() < 0.15, "ratio {mean}");
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 32, failure_persistence: None, ..ProptestConfig::default() })]
    #[test]
    fn permuted_row_order_gives_same_result(seed in 0u64..1000, perm_seed in 0u64..1000) {
        use rand::seq::SliceRandom;
        let mut rng = substream(seed, 0);
        let truth = random::density_matrix(&mut rng);
        let counts = synthesize_counts(&truth, 300.0, 1.0, &mut rng);
        let mut lines: Vec<String> = counts.to_csv_string().lines().skip(1).map(String::from).collect();
        lines.shuffle(&mut substream(perm_seed, 1));
        let text = format!("arm_x,arm_xx,counts,acquisition_time_s\n{}\n", lines.join("\n"));
        let shuffled = CountTable::read_csv(text.as_bytes()).unwrap();
        let a = reconstruct_mle(&counts, MleOptions::default()).unwrap();
        let b = reconstruct_mle(&shuffled, MleOptions::default()).unwrap();
        prop_assert_eq!(a, b);
    }
}
