mod common;

use burstlab::linops::project_z;
use burstlab::regularizers::{
    cluster_loss, cluster_loss_grad_a, cluster_loss_grad_z, gamma_log_prior, gamma_log_prior_grad,
};
use burstlab::{ClusterPenaltyConfig, ClusterState, GammaComponent, GammaMixtureSpec};
use common::*;
use nalgebra::DMatrix;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_cfg(rng: &mut ChaCha8Rng, m: usize) -> ClusterPenaltyConfig {
    ClusterPenaltyConfig {
        rho1: 0.1 + 5.0 * rng.random::<f64>(),
        rho2: 0.1 + 5.0 * rng.random::<f64>(),
        k: rng.random_range(1..m),
    }
}

fn random_feasible_z(rng: &mut ChaCha8Rng, m: usize, k: usize) -> ClusterState {
    let r = random_matrix(rng, m, m, -1.0, 1.0);
    project_z(&(&r + r.transpose()), k).unwrap()
}

fn random_mixture(rng: &mut ChaCha8Rng) -> GammaMixtureSpec {
    let n = rng.random_range(1..=4);
    GammaMixtureSpec::new(
        (0..n)
            .map(|_| GammaComponent::new(1.0 + 5.0 * rng.random::<f64>(), 0.02 + 0.3 * rng.random::<f64>()))
            .collect(),
    )
    .unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn cluster_gradients_match_finite_differences(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (n, m) = (rng.random_range(1..5), rng.random_range(3..7));
        let cfg = random_cfg(&mut rng, m);
        let a = random_matrix(&mut rng, n, m, 0.0, 2.0);
        let z = interior_cluster_state(&mut rng, m, cfg.k);
        let ga = cluster_loss_grad_a(&a, &z, &cfg).unwrap();
        let fa = fd_gradient(|x| cluster_loss(x, &z, &cfg).unwrap(), &a, 1e-6);
        prop_assert!(rel_err(&ga, &fa) < 1e-6, "dA err {}", rel_err(&ga, &fa));

        let gz = cluster_loss_grad_z(&a, &z, &cfg).unwrap();
        for _ in 0..3 {
            let d = traceless_symmetric(&mut rng, m);
            let analytic = gz.dot(&d);
            let numeric = directional_fd(
                |x| cluster_loss(&a, &ClusterState::new(x.clone(), cfg.k).unwrap(), &cfg).unwrap(),
                z.matrix(),
                &d,
                1e-6,
            );
            prop_assert!((analytic - numeric).abs() <= 1e-6 * analytic.abs().max(1.0), "{analytic} vs {numeric}");
        }
    }

    #[test]
    fn cluster_loss_is_jointly_midpoint_convex(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (n, m) = (rng.random_range(1..5), rng.random_range(2..7));
        let cfg = random_cfg(&mut rng, m);
        let (a1, a2) = (random_matrix(&mut rng, n, m, 0.0, 2.0), random_matrix(&mut rng, n, m, 0.0, 2.0));
        let (z1, z2) = (random_feasible_z(&mut rng, m, cfg.k), random_feasible_z(&mut rng, m, cfg.k));
        let zm = ClusterState::new((z1.matrix() + z2.matrix()) * 0.5, cfg.k).unwrap();
        let mid = cluster_loss(&((&a1 + &a2) * 0.5), &zm, &cfg).unwrap();
        let ends = 0.5 * (cluster_loss(&a1, &z1, &cfg).unwrap() + cluster_loss(&a2, &z2, &cfg).unwrap());
        prop_assert!(mid <= ends + 1e-9, "{mid} > {ends}");
    }

    #[test]
    fn cluster_loss_at_center_has_closed_form(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (n, m) = (rng.random_range(1..5), rng.random_range(2..8));
        let cfg = random_cfg(&mut rng, m);
        let a = random_matrix(&mut rng, n, m, 0.0, 2.0);
        let got = cluster_loss(&a, &ClusterState::center(m, cfg.k).unwrap(), &cfg).unwrap();
        let expect = cfg.rho2 * (cfg.rho2 + cfg.rho1) / cfg.rho1 * a.norm_squared()
            / (cfg.rho1 / cfg.rho2 + cfg.k as f64 / m as f64);
        prop_assert!((got - expect).abs() <= 1e-12 * expect.max(1.0));
    }

    #[test]
    fn prior_gradient_matches_finite_differences(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mix = random_mixture(&mut rng);
        let a = random_matrix(&mut rng, 3, 4, 0.02, 2.0);
        let mask = DMatrix::from_fn(3, 4, |_, _| rng.random::<f64>() < 0.7);
        let g = gamma_log_prior_grad(&a, &mix, &mask).unwrap();
        let f = fd_gradient(|x| gamma_log_prior(x, &mix, &mask).unwrap(), &a, 1e-6);
        prop_assert!(rel_err(&g, &f) < 1e-5, "err {}", rel_err(&g, &f));
    }

    #[test]
    fn prior_ignores_component_order(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mix = random_mixture(&mut rng);
        let mut rev = mix.clone();
        rev.components.reverse();
        let a = random_matrix(&mut rng, 2, 3, 0.0, 2.0);
        let mask = DMatrix::from_element(2, 3, true);
        let (p, q) = (gamma_log_prior(&a, &mix, &mask).unwrap(), gamma_log_prior(&a, &rev, &mask).unwrap());
        prop_assert!((p - q).abs() <= 1e-12 * p.abs().max(1.0));
    }
}
