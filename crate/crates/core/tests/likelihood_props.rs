mod common;

use burstlab::likelihood::{compute_compensator_weights, intensity, smooth_nll, smooth_nll_with_grad};
use burstlab::{EventDataset, EventSequence, HawkesParams, LikelihoodCache, PairIndex};
use common::*;
use nalgebra::DMatrix;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn grid_dataset(rng: &mut ChaCha8Rng, n: usize, m: usize, max_events: usize) -> EventDataset {
    let mut seqs = Vec::new();
    for i in 0..n {
        for j in 0..m {
            if rng.random::<f64>() < 0.25 {
                continue;
            }
            let horizon = 5.0 + 20.0 * rng.random::<f64>();
            let count = rng.random_range(0..=max_events);
            let times = random_times(rng, count, horizon);
            seqs.push(EventSequence::with_horizon(PairIndex::new(i, j), times, horizon).unwrap());
        }
    }
    if seqs.is_empty() {
        seqs.push(EventSequence::with_horizon(PairIndex::new(0, 0), vec![1.0], 2.0).unwrap());
    }
    EventDataset::new(n, m, seqs).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn recursion_matches_naive_double_sum(
        seed in any::<u64>(),
        n in 0usize..=200,
        beta in 0.1f64..5.0,
        u in 0.0f64..3.0,
        a in 0.0f64..2.0,
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let horizon = 1.0 + 100.0 * rng.random::<f64>();
        let times = random_times(&mut rng, n, horizon);
        let oracle = naive_nll(&times, horizon, u, a, beta);
        let seq = EventSequence::with_horizon(PairIndex::new(0, 0), times, horizon).unwrap();
        let ds = EventDataset::new(1, 1, vec![seq]).unwrap();
        let cache = LikelihoodCache::build(&ds, beta).unwrap();
        let p = HawkesParams::new(DMatrix::from_element(1, 1, a), DMatrix::from_element(1, 1, u), beta).unwrap();
        let got = smooth_nll(&p, &ds, &cache).unwrap();
        prop_assert!((got - oracle).abs() <= 1e-9 * oracle.abs().max(1.0), "{got} vs {oracle}");
    }

    #[test]
    fn intensity_decays_between_events_and_jumps_by_a_beta(
        seed in any::<u64>(),
        beta in 0.1f64..5.0,
        a in 0.0f64..2.0,
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let times = random_times(&mut rng, 12, 20.0);
        let seq = EventSequence::with_horizon(PairIndex::new(0, 0), times.clone(), 20.0).unwrap();
        let p = HawkesParams::new(DMatrix::from_element(1, 1, a), DMatrix::from_element(1, 1, 0.7), beta).unwrap();
        let mut grid: Vec<f64> = (0..400).map(|s| 20.0 * s as f64 / 400.0).collect();
        grid.retain(|t| !times.contains(t));
        for w in grid.windows(2) {
            if times.iter().any(|&x| x > w[0] && x < w[1]) {
                continue;
            }
            prop_assert!(intensity(&p, &seq, w[1]).unwrap() <= intensity(&p, &seq, w[0]).unwrap() + 1e-12);
        }
        for &x in &times {
            let eps = 1e-9;
            let jump = intensity(&p, &seq, x + eps).unwrap() - intensity(&p, &seq, x - eps).unwrap();
            prop_assert!((jump - a * beta).abs() < 1e-6 * (1.0 + a * beta), "jump {jump}");
        }
    }

    #[test]
    fn compensator_weights_lie_between_zero_and_count(seed in any::<u64>(), beta in 0.01f64..10.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let ds = grid_dataset(&mut rng, 3, 4, 30);
        let w = compute_compensator_weights(&ds, beta).unwrap();
        for seq in ds.sequences() {
            let p = seq.pair();
            let v = w[(p.assignment, p.student)];
            prop_assert!(v >= 0.0 && v <= seq.len() as f64);
        }
    }

    #[test]
    fn smooth_gradient_matches_finite_differences(seed in any::<u64>(), beta in 0.1f64..5.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let ds = grid_dataset(&mut rng, 2, 3, 40);
        let cache = LikelihoodCache::build(&ds, beta).unwrap();
        let a = random_matrix(&mut rng, 2, 3, 1e-3, 1.5);
        let u = random_matrix(&mut rng, 2, 3, 1e-3, 2.0);
        let (_, ga, gu) = smooth_nll_with_grad(&HawkesParams::new(a.clone(), u.clone(), beta).unwrap(), &ds, &cache).unwrap();
        let fa = fd_gradient(|x| smooth_nll(&HawkesParams::new(x.clone(), u.clone(), beta).unwrap(), &ds, &cache).unwrap(), &a, 1e-6);
        let fu = fd_gradient(|x| smooth_nll(&HawkesParams::new(a.clone(), x.clone(), beta).unwrap(), &ds, &cache).unwrap(), &u, 1e-6);
        prop_assert!(rel_err(&ga, &fa) < 1e-5, "dA err {}", rel_err(&ga, &fa));
        prop_assert!(rel_err(&gu, &fu) < 1e-5, "dU err {}", rel_err(&gu, &fu));
    }
}
