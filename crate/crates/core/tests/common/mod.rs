//! Independent reference implementations shared by the property tests and the
//! acceptance harness.
#![allow(dead_code)]

use burstlab::simulate::thinning_sample;
use burstlab::{ClusterState, EventSequence, PairIndex};
use nalgebra::DMatrix;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// Direct double-sum negative log-likelihood of one sequence.
pub fn naive_nll(times: &[f64], horizon: f64, u: f64, a: f64, beta: f64) -> f64 {
    let mut log_sum = 0.0;
    for (t_idx, &t) in times.iter().enumerate() {
        let mut excite = 0.0;
        for &x in &times[..t_idx] {
            if x < t {
                excite += (-beta * (t - x)).exp();
            }
        }
        log_sum += (u + a * beta * excite).max(1e-12).ln();
    }
    let mut comp = u * horizon;
    for &x in times {
        comp += a * (1.0 - (-beta * (horizon - x)).exp());
    }
    comp - log_sum
}

/// Sorted uniform event times on `(0, horizon)`.
pub fn random_times(rng: &mut ChaCha8Rng, n: usize, horizon: f64) -> Vec<f64> {
    let mut t: Vec<f64> = (0..n).map(|_| rng.random::<f64>() * horizon).collect();
    t.sort_by(f64::total_cmp);
    t.dedup();
    t
}

/// Central difference of `f` at `x` in direction `d`.
pub fn directional_fd(f: impl Fn(&DMatrix<f64>) -> f64, x: &DMatrix<f64>, d: &DMatrix<f64>, h: f64) -> f64 {
    (f(&(x + d * h)) - f(&(x - d * h))) / (2.0 * h)
}

/// Entry-wise central-difference gradient.
pub fn fd_gradient(f: impl Fn(&DMatrix<f64>) -> f64, x: &DMatrix<f64>, h: f64) -> DMatrix<f64> {
    let mut g = DMatrix::zeros(x.nrows(), x.ncols());
    for idx in 0..x.len() {
        let step = h * x[idx].abs().max(1.0);
        let mut hi = x.clone();
        let mut lo = x.clone();
        hi[idx] += step;
        lo[idx] -= step;
        g[idx] = (f(&hi) - f(&lo)) / (2.0 * step);
    }
    g
}

/// `max |a − b| / max(max |a|, 1)`.
pub fn rel_err(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    (a - b).amax() / a.amax().max(1.0)
}

/// Euclidean projection onto `{x : Σx = k, 0 ≤ x ≤ 1}` by enumerating every
/// assignment of coordinates to lower bound, upper bound, or free.
pub fn capped_simplex_oracle(v: &[f64], k: f64) -> Vec<f64> {
    let m = v.len();
    let mut best: Option<(f64, Vec<f64>)> = None;
    for code in 0..3usize.pow(m as u32) {
        let mut state = vec![0u8; m];
        let mut c = code;
        for s in state.iter_mut() {
            *s = (c % 3) as u8;
            c /= 3;
        }
        let n_up = state.iter().filter(|&&s| s == 2).count() as f64;
        let free: Vec<usize> = (0..m).filter(|&i| state[i] == 1).collect();
        let mut x: Vec<f64> = state.iter().map(|&s| if s == 2 { 1.0 } else { 0.0 }).collect();
        if free.is_empty() {
            if (n_up - k).abs() > 1e-12 {
                continue;
            }
        } else {
            let theta = (free.iter().map(|&i| v[i]).sum::<f64>() + n_up - k) / free.len() as f64;
            for &i in &free {
                x[i] = v[i] - theta;
            }
            if free.iter().any(|&i| x[i] < -1e-12 || x[i] > 1.0 + 1e-12) {
                continue;
            }
        }
        let obj: f64 = x.iter().zip(v).map(|(a, b)| (a - b) * (a - b)).sum();
        if best.as_ref().is_none_or(|(o, _)| obj < *o) {
            best = Some((obj, x));
        }
    }
    best.expect("capped simplex is nonempty").1
}

pub fn random_matrix(rng: &mut ChaCha8Rng, n: usize, m: usize, lo: f64, hi: f64) -> DMatrix<f64> {
    DMatrix::from_fn(n, m, |_, _| lo + (hi - lo) * rng.random::<f64>())
}

/// Random orthogonal matrix via QR of a Gaussian-ish matrix.
pub fn random_orthogonal(rng: &mut ChaCha8Rng, m: usize) -> DMatrix<f64> {
    random_matrix(rng, m, m, -1.0, 1.0).qr().q()
}

/// Strictly interior feasible cluster state: eigenvalues `k/M` plus a small
/// zero-sum perturbation.
pub fn interior_cluster_state(rng: &mut ChaCha8Rng, m: usize, k: usize) -> ClusterState {
    let base = k as f64 / m as f64;
    let spread = 0.5 * base.min(1.0 - base);
    let r: Vec<f64> = (0..m).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect();
    let mean = r.iter().sum::<f64>() / m as f64;
    let sigma = DMatrix::from_diagonal(&nalgebra::DVector::from_iterator(
        m,
        r.iter().map(|x| base + spread * (x - mean)),
    ));
    let q = random_orthogonal(rng, m);
    let z = &q * sigma * q.transpose();
    let z = (&z + z.transpose()) * 0.5;
    ClusterState::new(z, k).expect("interior state is feasible")
}

/// Random symmetric direction with zero trace.
pub fn traceless_symmetric(rng: &mut ChaCha8Rng, m: usize) -> DMatrix<f64> {
    let r = random_matrix(rng, m, m, -1.0, 1.0);
    let mut d = (&r + r.transpose()) * 0.5;
    let shift = d.trace() / m as f64;
    for i in 0..m {
        d[(i, i)] -= shift;
    }
    d
}

pub fn simulate_pair(u: f64, a: f64, beta: f64, horizon: f64, rng: &mut ChaCha8Rng) -> EventSequence {
    thinning_sample(PairIndex::new(0, 0), u, a, beta, horizon, rng).expect("simulation succeeds")
}

/// Asymptotic one-sample Kolmogorov–Smirnov statistic against Exponential(rate).
pub fn ks_exponential(samples: &[f64], rate: f64) -> f64 {
    let mut s = samples.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len() as f64;
    s.iter()
        .enumerate()
        .map(|(i, &x)| {
            let cdf = 1.0 - (-rate * x).exp();
            (cdf - i as f64 / n).abs().max(((i + 1) as f64 / n - cdf).abs())
        })
        .fold(0.0, f64::max)
}

/// Critical value of the KS statistic at level 0.01 for large `n`.
pub fn ks_critical_001(n: usize) -> f64 {
    1.628 / (n as f64).sqrt()
}
