//! Exponential-kernel Hawkes intensity and the smooth negative log-likelihood.
//!
//! For pair `(i, j)` with events `x_1 < … < x_n` on `[0, T_ij]`:
//!
//! ```text
//! λ_ij(t) = U_ij + A_ij β Σ_{x_τ < t} exp(−β (t − x_τ))
//! ```
//!
//! The likelihood is evaluated in O(n) per pair through the recursion
//! `R(1) = 0`, `R(τ) = (1 + R(τ−1)) exp(−β (x_τ − x_{τ−1}))`, which gives
//! `λ(x_τ) = U + A β R(τ)`, and the compensator weights
//! `W_ij = Σ_τ (1 − exp(−β (T_ij − x_τ)))`, which give
//! `∫_0^T λ = U T + A W`.
//!
//! The compensator weights are the standard nonnegative form. Writing them as
//! `Σ (exp(−β(x_n − x_τ)) − 1)` flips the sign and would make the `A·W` term
//! reward large `A`.

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::events::{EventDataset, EventSequence};

/// Lower clamp applied to λ inside `log(λ)` and `1/λ`.
pub const LOG_EPS: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HawkesParams {
    /// `A`: expected number of offspring per event.
    pub excitation: DMatrix<f64>,
    /// `U`: exogenous event rate (events/hour).
    pub base_rate: DMatrix<f64>,
    /// `β`: global decay rate (1/hour).
    pub decay: f64,
}

impl HawkesParams {
    pub fn new(excitation: DMatrix<f64>, base_rate: DMatrix<f64>, decay: f64) -> Result<Self> {
        let p = Self {
            excitation,
            base_rate,
            decay,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if self.excitation.shape() != self.base_rate.shape() {
            return Err(Error::dims(self.excitation.shape(), self.base_rate.shape()));
        }
        if !(self.decay.is_finite() && self.decay > 0.0) {
            return Err(Error::Validation(format!(
                "decay rate must be finite and > 0, got {}",
                self.decay
            )));
        }
        for (name, m) in [("excitation", &self.excitation), ("base rate", &self.base_rate)] {
            if let Some(v) = m.iter().find(|v| !(v.is_finite() && **v >= 0.0)) {
                return Err(Error::Validation(format!(
                    "{name} entries must be finite and >= 0, found {v}"
                )));
            }
        }
        Ok(())
    }

    pub fn shape(&self) -> (usize, usize) {
        self.excitation.shape()
    }
}

fn check_decay(beta: f64) -> Result<()> {
    if beta.is_finite() && beta > 0.0 {
        Ok(())
    } else {
        Err(Error::Validation(format!(
            "decay rate must be finite and > 0, got {beta}"
        )))
    }
}

/// `R(τ) = Σ_{u<τ} exp(−β (x_τ − x_u))` computed by the one-step recursion.
pub fn compute_recursion(times: &[f64], beta: f64) -> Result<Vec<f64>> {
    check_decay(beta)?;
    if let Some(w) = times.windows(2).find(|w| w[1] <= w[0]) {
        return Err(Error::Validation(format!(
            "timestamps must be strictly increasing, found {} then {}",
            w[0], w[1]
        )));
    }
    let mut out = Vec::with_capacity(times.len());
    let mut r = 0.0;
    for (idx, &t) in times.iter().enumerate() {
        if idx > 0 {
            r = (1.0 + r) * (-beta * (t - times[idx - 1])).exp();
        }
        out.push(r);
    }
    Ok(out)
}

/// Compensator weight of one sequence: `Σ_τ (1 − exp(−β (T − x_τ)))`, in `[0, n]`.
pub fn compensator_weight(seq: &EventSequence, beta: f64) -> f64 {
    let horizon = seq.horizon();
    seq.times()
        .iter()
        .map(|&x| -(-beta * (horizon - x)).exp_m1())
        .sum()
}

/// N×M matrix of compensator weights; zero on unobserved pairs.
pub fn compute_compensator_weights(dataset: &EventDataset, beta: f64) -> Result<DMatrix<f64>> {
    check_decay(beta)?;
    let (n, m) = dataset.shape();
    let mut w = DMatrix::zeros(n, m);
    for seq in dataset.sequences() {
        let p = seq.pair();
        w[(p.assignment, p.student)] = compensator_weight(seq, beta);
    }
    Ok(w)
}

/// Quantities that depend only on the data and `β`, built once per fit.
#[derive(Debug, Clone)]
pub struct LikelihoodCache {
    beta: f64,
    shape: (usize, usize),
    /// Per observed pair, in dataset order.
    recursion: Vec<Vec<f64>>,
    compensator_weights: DMatrix<f64>,
}

impl LikelihoodCache {
    pub fn build(dataset: &EventDataset, beta: f64) -> Result<Self> {
        check_decay(beta)?;
        let recursion = dataset
            .sequences()
            .map(|s| compute_recursion(s.times(), beta))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            beta,
            shape: dataset.shape(),
            recursion,
            compensator_weights: compute_compensator_weights(dataset, beta)?,
        })
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn recursion(&self) -> &[Vec<f64>] {
        &self.recursion
    }

    pub fn compensator_weights(&self) -> &DMatrix<f64> {
        &self.compensator_weights
    }

    fn check(&self, params: &HawkesParams, dataset: &EventDataset) -> Result<()> {
        if params.shape() != dataset.shape() {
            return Err(Error::dims(dataset.shape(), params.shape()));
        }
        params.validate()?;
        if self.shape != dataset.shape() || self.recursion.len() != dataset.n_observed() {
            return Err(Error::Validation(
                "likelihood cache was built for a different dataset".into(),
            ));
        }
        if self.beta != params.decay {
            return Err(Error::Validation(format!(
                "likelihood cache built with decay {} but parameters use {}",
                self.beta, params.decay
            )));
        }
        Ok(())
    }
}

/// `λ(t)` using only events strictly before `t`.
pub fn intensity(params: &HawkesParams, seq: &EventSequence, t: f64) -> Result<f64> {
    if !(t >= 0.0) {
        return Err(Error::Domain(format!("intensity requested at t = {t} < 0")));
    }
    let p = seq.pair();
    let (n, m) = params.shape();
    if p.assignment >= n || p.student >= m {
        return Err(Error::dims((p.assignment + 1, p.student + 1), (n, m)));
    }
    let beta = params.decay;
    let excitation: f64 = seq
        .times()
        .iter()
        .take_while(|&&x| x < t)
        .map(|&x| (-beta * (t - x)).exp())
        .sum();
    let u = params.base_rate[(p.assignment, p.student)];
    let a = params.excitation[(p.assignment, p.student)];
    Ok(u + a * beta * excitation)
}

#[derive(Debug, Clone, Copy, Default)]
struct PairTerms {
    value: f64,
    grad_a: f64,
    grad_u: f64,
}

fn pair_terms(u: f64, a: f64, beta: f64, recursion: &[f64], horizon: f64, weight: f64) -> PairTerms {
    let mut log_sum = 0.0;
    let mut inv_sum = 0.0;
    let mut exc_sum = 0.0;
    for &r in recursion {
        let lambda = (u + a * beta * r).max(LOG_EPS);
        log_sum += lambda.ln();
        inv_sum += 1.0 / lambda;
        exc_sum += beta * r / lambda;
    }
    PairTerms {
        value: -log_sum + u * horizon + a * weight,
        grad_a: -exc_sum + weight,
        grad_u: -inv_sum + horizon,
    }
}

fn all_pair_terms(
    params: &HawkesParams,
    dataset: &EventDataset,
    cache: &LikelihoodCache,
) -> Result<Vec<(usize, usize, PairTerms)>> {
    cache.check(params, dataset)?;
    let seqs: Vec<&EventSequence> = dataset.sequences().collect();
    let beta = params.decay;
    Ok(seqs
        .par_iter()
        .zip(cache.recursion.par_iter())
        .map(|(seq, rec)| {
            let p = seq.pair();
            let (i, j) = (p.assignment, p.student);
            let terms = pair_terms(
                params.base_rate[(i, j)],
                params.excitation[(i, j)],
                beta,
                rec,
                seq.horizon(),
                cache.compensator_weights[(i, j)],
            );
            (i, j, terms)
        })
        .collect())
}

/// Smooth negative log-likelihood summed over observed pairs.
pub fn smooth_nll(
    params: &HawkesParams,
    dataset: &EventDataset,
    cache: &LikelihoodCache,
) -> Result<f64> {
    Ok(all_pair_terms(params, dataset, cache)?
        .iter()
        .map(|(_, _, t)| t.value)
        .sum())
}

/// Gradient of [`smooth_nll`] as `(d/dA, d/dU)`; zero off the observed set.
pub fn smooth_nll_grad(
    params: &HawkesParams,
    dataset: &EventDataset,
    cache: &LikelihoodCache,
) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let (_, ga, gu) = smooth_nll_with_grad(params, dataset, cache)?;
    Ok((ga, gu))
}

/// Value and gradient in one pass: `(value, d/dA, d/dU)`.
pub fn smooth_nll_with_grad(
    params: &HawkesParams,
    dataset: &EventDataset,
    cache: &LikelihoodCache,
) -> Result<(f64, DMatrix<f64>, DMatrix<f64>)> {
    let terms = all_pair_terms(params, dataset, cache)?;
    let (n, m) = dataset.shape();
    let mut ga = DMatrix::zeros(n, m);
    let mut gu = DMatrix::zeros(n, m);
    let mut value = 0.0;
    for (i, j, t) in terms {
        value += t.value;
        ga[(i, j)] = t.grad_a;
        gu[(i, j)] = t.grad_u;
    }
    Ok((value, ga, gu))
}
