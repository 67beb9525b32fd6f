mod common;

use burstlab::linops::{capped_simplex_project, nuclear_norm, project_z, svt};
use common::*;
use nalgebra::{DMatrix, SymmetricEigen};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn prox_objective(x: &DMatrix<f64>, y: &DMatrix<f64>, tau: f64) -> f64 {
    0.5 * (x - y).norm_squared() + tau * nuclear_norm(x)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn capped_simplex_matches_enumeration(
        v in proptest::collection::vec(-2.0f64..3.0, 1..=6),
        kf in 0.0f64..1.0,
    ) {
        let k = (kf * v.len() as f64).floor().max(1.0).min(v.len() as f64);
        let got = capped_simplex_project(&v, k).unwrap();
        let oracle = capped_simplex_oracle(&v, k);
        prop_assert!((got.iter().sum::<f64>() - k).abs() < 1e-10);
        prop_assert!(got.iter().all(|&s| (0.0..=1.0).contains(&s)));
        for (g, o) in got.iter().zip(&oracle) {
            prop_assert!((g - o).abs() < 1e-8, "{got:?} vs {oracle:?}");
        }
    }

    #[test]
    fn project_z_is_feasible_and_idempotent(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let m = rng.random_range(1..9);
        let k = rng.random_range(1..=m);
        let x = random_matrix(&mut rng, m, m, -3.0, 3.0);
        let z = project_z(&x, k).unwrap();
        prop_assert!((z.matrix().trace() - k as f64).abs() < 1e-8);
        let eig = SymmetricEigen::new(z.matrix().clone());
        prop_assert!(eig.eigenvalues.iter().all(|&e| e >= -1e-10 && e <= 1.0 + 1e-10));
        let again = project_z(z.matrix(), k).unwrap();
        prop_assert!((again.matrix() - z.matrix()).amax() < 1e-8);
    }
}

#[test]
fn svt_beats_random_perturbations() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..20 {
        let (n, m) = (rng.random_range(1..6), rng.random_range(1..6));
        let y = random_matrix(&mut rng, n, m, -2.0, 2.0);
        let tau = 2.0 * rng.random::<f64>();
        let x = svt(&y, tau).unwrap();
        let best = prox_objective(&x, &y, tau);
        for _ in 0..200 {
            let scale = 10f64.powf(-4.0 + 4.0 * rng.random::<f64>());
            let p = &x + random_matrix(&mut rng, n, m, -scale, scale);
            assert!(prox_objective(&p, &y, tau) >= best - 1e-12);
        }
    }
}
