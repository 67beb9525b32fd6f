mod common;

use burstlab::simulate::{generate_dataset, SyntheticSpec};
use common::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[test]
fn poisson_gaps_pass_ks_against_exponential() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let seq = simulate_pair(1.5, 0.0, 1.0, 4000.0, &mut rng);
    let gaps: Vec<f64> = seq.times().windows(2).map(|w| w[1] - w[0]).take(5000).collect();
    assert!(gaps.len() >= 5000);
    let d = ks_exponential(&gaps, 1.5);
    assert!(d < ks_critical_001(gaps.len()), "D = {d}");
}

#[test]
fn subcritical_mean_count_matches_branching_formula() {
    let (u, a, beta, horizon) = (0.5, 0.5, 2.0, 400.0);
    let mut rng = ChaCha8Rng::seed_from_u64(22);
    let draws = 200;
    let mean = (0..draws).map(|_| simulate_pair(u, a, beta, horizon, &mut rng).len() as f64).sum::<f64>() / draws as f64;
    let expect = u * horizon / (1.0 - a);
    assert!((mean - expect).abs() / expect < 0.05, "{mean} vs {expect}");
}

#[test]
fn poisson_mean_count_is_rate_times_horizon() {
    let mut rng = ChaCha8Rng::seed_from_u64(23);
    let draws = 1000;
    let mean = (0..draws).map(|_| simulate_pair(2.0, 0.0, 1.0, 100.0, &mut rng).len() as f64).sum::<f64>() / draws as f64;
    assert!((mean - 200.0).abs() / 200.0 < 0.01, "{mean}");
}

#[test]
fn generation_is_a_pure_function_of_spec() {
    let spec = SyntheticSpec { n_assignments: 3, n_students: 7, horizon: 30.0, seed: 4, ..Default::default() };
    let (d1, t1) = generate_dataset(&spec).unwrap();
    let (d2, t2) = generate_dataset(&spec).unwrap();
    assert_eq!(d1, d2);
    assert_eq!(t1, t2);
    let (d3, _) = generate_dataset(&SyntheticSpec { seed: 5, ..spec }).unwrap();
    assert_ne!(d1, d3);
}
