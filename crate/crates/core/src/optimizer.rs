//! Accelerated proximal gradient descent over `(A, U, Z)`.
//!
//! The smooth part of the objective is
//!
//! ```text
//! f(A, U, Z) = NLL(A, U) − log p(A) + L_c(A, Z)
//! ```
//!
//! and the non-smooth part is `ρ3 ‖A‖_*` plus the constraints `A ≥ 0`,
//! `U ≥ 0` and `Z ∈ {0 ⪯ Z ⪯ I, tr Z = k}`. Each iteration takes a gradient
//! step at the search point, applies the three proximal maps, and increases
//! the inverse step size `γ` by `η` until the candidate satisfies the
//! quadratic upper bound of `f` at the search point.
//!
//! The iterate only moves to the candidate when the full objective does not
//! increase (the monotone variant of the accelerated scheme); the search point
//! still uses the candidate, so the momentum sequence `α` is never reset.
//!
//! Unobserved pairs get no likelihood or prior gradient. Their entries of `A`
//! move only through the clustering gradient and the singular value
//! thresholding step, which is how estimates transfer to pairs without data.

use std::time::Instant;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::events::EventDataset;
use crate::likelihood::{smooth_nll, smooth_nll_with_grad, HawkesParams, LikelihoodCache};
use crate::linops::{nonneg_project, nuclear_norm, project_z, svt};
use crate::regularizers::{
    gamma_log_prior, gamma_log_prior_grad, ClusterPenaltyConfig, ClusterState, GammaMixtureSpec,
    ShiftedInverse,
};

/// Consecutive step-size increases allowed before giving up.
pub const MAX_BACKTRACKS: usize = 50;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FitConfig {
    pub rho1: f64,
    pub rho2: f64,
    /// Nuclear-norm weight.
    pub rho3: f64,
    pub k: usize,
    /// Fixed global decay rate (1/hour).
    pub beta: f64,
    pub mixture: Option<GammaMixtureSpec>,
    /// Initial inverse step size.
    pub gamma0: f64,
    /// Backtracking multiplier for the inverse step size.
    pub eta: f64,
    pub max_iter: usize,
    /// Relative objective change below which the fit stops.
    pub tol: f64,
    pub enable_clustering: bool,
    pub enable_prior: bool,
    pub enable_lowrank: bool,
    /// Keep `Z` at its initial value `(k/M)·I`.
    pub freeze_cluster_state: bool,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            rho1: 1.0,
            rho2: 1.0,
            rho3: 1.0,
            k: 1,
            beta: 1.0,
            mixture: None,
            gamma0: 1.0,
            eta: 2.0,
            max_iter: 500,
            tol: 1e-6,
            enable_clustering: true,
            enable_prior: false,
            enable_lowrank: true,
            freeze_cluster_state: false,
        }
    }
}

impl FitConfig {
    /// Pure maximum likelihood: every penalty switched off.
    pub fn unpenalized(beta: f64) -> Self {
        Self {
            beta,
            enable_clustering: false,
            enable_prior: false,
            enable_lowrank: false,
            ..Self::default()
        }
    }

    pub fn cluster_penalty(&self) -> ClusterPenaltyConfig {
        ClusterPenaltyConfig {
            rho1: self.rho1,
            rho2: self.rho2,
            k: self.k,
        }
    }

    pub fn validate(&self, n_students: usize) -> Result<()> {
        let positive = |name: &str, v: f64| {
            if v.is_finite() && v > 0.0 {
                Ok(())
            } else {
                Err(Error::Config(format!("{name} must be finite and > 0, got {v}")))
            }
        };
        positive("beta", self.beta)?;
        positive("gamma0", self.gamma0)?;
        positive("tol", self.tol)?;
        if !(self.eta.is_finite() && self.eta >= 1.0) {
            return Err(Error::Config(format!("eta must be >= 1, got {}", self.eta)));
        }
        if !(self.rho3.is_finite() && self.rho3 >= 0.0) {
            return Err(Error::Config(format!("rho3 must be >= 0, got {}", self.rho3)));
        }
        if self.k == 0 || self.k > n_students {
            return Err(Error::Config(format!(
                "cluster count k = {} must lie in [1, {n_students}]",
                self.k
            )));
        }
        if self.enable_clustering {
            self.cluster_penalty().validate(n_students)?;
        }
        if self.enable_prior {
            match &self.mixture {
                Some(m) => m.validate()?,
                None => {
                    return Err(Error::Config(
                        "enable_prior requires a Gamma mixture specification".into(),
                    ))
                }
            }
        }
        Ok(())
    }
}

/// `(1 + sqrt(1 + 4α²)) / 2`, the momentum sequence of the accelerated method.
pub fn alpha_update(alpha: f64) -> f64 {
    (1.0 + (1.0 + 4.0 * alpha * alpha).sqrt()) / 2.0
}

/// Gradient step on `A` followed by nonnegative projection, singular value
/// thresholding at `ρ3/γ`, and a second nonnegative projection. Nonnegativity
/// and the nuclear norm have no joint closed-form proximal map; this
/// composition is the approximation used throughout.
pub fn prox_step_a(
    search: &DMatrix<f64>,
    grad: &DMatrix<f64>,
    gamma: f64,
    rho3: f64,
) -> Result<DMatrix<f64>> {
    let stepped = nonneg_project(&(search - grad / gamma));
    if rho3 == 0.0 {
        return Ok(stepped);
    }
    Ok(nonneg_project(&svt(&stepped, rho3 / gamma)?))
}

pub fn prox_step_u(search: &DMatrix<f64>, grad: &DMatrix<f64>, gamma: f64) -> DMatrix<f64> {
    nonneg_project(&(search - grad / gamma))
}

pub fn prox_step_z(
    search: &DMatrix<f64>,
    grad: &DMatrix<f64>,
    gamma: f64,
    k: usize,
) -> Result<ClusterState> {
    project_z(&(search - grad / gamma), k)
}

/// The full objective: smooth NLL, minus the log-prior, plus the cluster and
/// nuclear-norm penalties, each gated by its flag.
pub fn objective(
    a: &DMatrix<f64>,
    u: &DMatrix<f64>,
    z: &ClusterState,
    dataset: &EventDataset,
    cache: &LikelihoodCache,
    config: &FitConfig,
) -> Result<f64> {
    let problem = Problem::new(dataset, cache, config)?;
    let point = Point {
        a: a.clone(),
        u: u.clone(),
        z: z.clone(),
    };
    Ok(problem.smooth(&point)? + problem.nonsmooth(&point.a))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Point {
    a: DMatrix<f64>,
    u: DMatrix<f64>,
    z: ClusterState,
}

impl Point {
    fn extrapolate(&self, toward: &Point, weight: f64) -> Point {
        let z = self.z.matrix() + (toward.z.matrix() - self.z.matrix()) * weight;
        Point {
            a: &self.a + (&toward.a - &self.a) * weight,
            u: &self.u + (&toward.u - &self.u) * weight,
            z: ClusterState::new_unchecked(z),
        }
    }
}

struct Gradient {
    a: DMatrix<f64>,
    u: DMatrix<f64>,
    z: Option<DMatrix<f64>>,
}

struct Problem<'a> {
    dataset: &'a EventDataset,
    cache: &'a LikelihoodCache,
    config: &'a FitConfig,
    mask: DMatrix<bool>,
}

impl<'a> Problem<'a> {
    fn new(dataset: &'a EventDataset, cache: &'a LikelihoodCache, config: &'a FitConfig) -> Result<Self> {
        config.validate(dataset.n_students())?;
        if cache.beta() != config.beta {
            return Err(Error::Config(format!(
                "likelihood cache built with decay {} but config uses {}",
                cache.beta(),
                config.beta
            )));
        }
        Ok(Self {
            dataset,
            cache,
            config,
            mask: dataset.observed_mask(),
        })
    }

    fn params(&self, p: &Point) -> HawkesParams {
        HawkesParams {
            excitation: p.a.clone(),
            base_rate: p.u.clone(),
            decay: self.config.beta,
        }
    }

    fn mixture(&self) -> Option<&GammaMixtureSpec> {
        if self.config.enable_prior {
            self.config.mixture.as_ref()
        } else {
            None
        }
    }

    fn smooth(&self, p: &Point) -> Result<f64> {
        let mut value = smooth_nll(&self.params(p), self.dataset, self.cache)?;
        if let Some(mix) = self.mixture() {
            value -= gamma_log_prior(&p.a, mix, &self.mask)?;
        }
        if self.config.enable_clustering {
            value += ShiftedInverse::new(&p.z, &self.config.cluster_penalty())?.loss(&p.a)?;
        }
        Ok(value)
    }

    fn smooth_with_grad(&self, p: &Point) -> Result<(f64, Gradient)> {
        let (mut value, mut ga, gu) = smooth_nll_with_grad(&self.params(p), self.dataset, self.cache)?;
        if let Some(mix) = self.mixture() {
            value -= gamma_log_prior(&p.a, mix, &self.mask)?;
            ga -= gamma_log_prior_grad(&p.a, mix, &self.mask)?;
        }
        let mut gz = None;
        if self.config.enable_clustering {
            let inv = ShiftedInverse::new(&p.z, &self.config.cluster_penalty())?;
            value += inv.loss(&p.a)?;
            ga += inv.grad_a(&p.a)?;
            if !self.config.freeze_cluster_state {
                gz = Some(inv.grad_z(&p.a)?);
            }
        }
        Ok((value, Gradient { a: ga, u: gu, z: gz }))
    }

    fn nonsmooth(&self, a: &DMatrix<f64>) -> f64 {
        if self.config.enable_lowrank && self.config.rho3 > 0.0 {
            self.config.rho3 * nuclear_norm(a)
        } else {
            0.0
        }
    }

    /// Pulls an extrapolated search point back into the region where the
    /// likelihood is finite: `A` is clipped at 0, `U` entries that would
    /// become nonpositive fall back to the current iterate, and `Z` is
    /// projected onto its feasible set. With the prior on, observed `A`
    /// entries follow the `U` rule instead of clipping, keeping the search
    /// point off the density clamp.
    fn restrict_search(&self, raw: Point, current: &Point) -> Result<Point> {
        let u = raw.u.zip_map(&current.u, |s, x| if s > 0.0 { s } else { x });
        let mut a = nonneg_project(&raw.a);
        if self.mixture().is_some() {
            for (idx, &observed) in self.mask.iter().enumerate() {
                if observed && raw.a[idx] <= 0.0 {
                    a[idx] = current.a[idx];
                }
            }
        }
        let z = if self.config.enable_clustering && !self.config.freeze_cluster_state {
            project_z(raw.z.matrix(), self.config.k)?
        } else {
            current.z.clone()
        };
        Ok(Point { a, u, z })
    }

    fn rho3(&self) -> f64 {
        if self.config.enable_lowrank {
            self.config.rho3
        } else {
            0.0
        }
    }

    fn prox(&self, search: &Point, grad: &Gradient, gamma: f64) -> Result<Point> {
        let a = prox_step_a(&search.a, &grad.a, gamma, self.rho3())?;
        let u = prox_step_u(&search.u, &grad.u, gamma);
        let z = match &grad.z {
            Some(gz) => prox_step_z(search.z.matrix(), gz, gamma, self.config.k)?,
            None => search.z.clone(),
        };
        Ok(Point { a, u, z })
    }
}

fn frob_dot(x: &DMatrix<f64>, y: &DMatrix<f64>) -> f64 {
    x.component_mul(y).sum()
}

/// Deterministic starting point: `U_ij = n_ij / (2 T_ij)` on observed pairs,
/// column means elsewhere; `A = 0.5`; `Z = (k/M)·I`.
/// Starting point of [`fit`]: `U = n/(2T)` on observed pairs and the column
/// mean elsewhere, `A = 0.5`, `Z = (k/M)·I`.
pub fn initial_params(dataset: &EventDataset, config: &FitConfig) -> Result<(HawkesParams, ClusterState)> {
    let p = initial_point(dataset, config)?;
    Ok((HawkesParams::new(p.a, p.u, config.beta)?, p.z))
}

fn initial_point(dataset: &EventDataset, config: &FitConfig) -> Result<Point> {
    let (n, m) = dataset.shape();
    let mut u = DMatrix::zeros(n, m);
    let mut col_sum = vec![0.0; m];
    let mut col_cnt = vec![0usize; m];
    for seq in dataset.sequences() {
        let p = seq.pair();
        let count = seq.len() as f64;
        let rate = if seq.horizon() > 0.0 {
            0.5 * count / seq.horizon()
        } else {
            0.5 * count
        };
        u[(p.assignment, p.student)] = rate;
        col_sum[p.student] += rate;
        col_cnt[p.student] += 1;
    }
    let global = col_sum.iter().sum::<f64>() / col_cnt.iter().sum::<usize>().max(1) as f64;
    for j in 0..m {
        let fill = if col_cnt[j] > 0 {
            col_sum[j] / col_cnt[j] as f64
        } else {
            global
        };
        for i in 0..n {
            if !dataset.is_observed(crate::events::PairIndex::new(i, j)) {
                u[(i, j)] = fill;
            }
        }
    }
    Ok(Point {
        a: DMatrix::from_element(n, m, 0.5),
        u,
        z: ClusterState::center(m, config.k)?,
    })
}

/// One line of the optional per-iteration trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub iteration: usize,
    pub objective: f64,
    pub candidate_objective: f64,
    pub accepted: bool,
    pub gamma: f64,
    pub alpha: f64,
    pub backtracks: usize,
    pub step_norm_a: f64,
    pub step_norm_u: f64,
    pub step_norm_z: f64,
}

/// Loop state, also serialized as the diagnostic dump on numerical failure.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FitState {
    pub a: DMatrix<f64>,
    pub u: DMatrix<f64>,
    pub z: DMatrix<f64>,
    pub prev_a: DMatrix<f64>,
    pub prev_u: DMatrix<f64>,
    pub prev_z: DMatrix<f64>,
    pub search_a: DMatrix<f64>,
    pub search_u: DMatrix<f64>,
    pub search_z: DMatrix<f64>,
    pub alpha: f64,
    pub gamma: f64,
    pub iteration: usize,
}

impl FitState {
    fn snapshot(x: &Point, prev: &Point, search: &Point, alpha: f64, gamma: f64, iteration: usize) -> Self {
        Self {
            a: x.a.clone(),
            u: x.u.clone(),
            z: x.z.matrix().clone(),
            prev_a: prev.a.clone(),
            prev_u: prev.u.clone(),
            prev_z: prev.z.matrix().clone(),
            search_a: search.a.clone(),
            search_u: search.u.clone(),
            search_z: search.z.matrix().clone(),
            alpha,
            gamma,
            iteration,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FitResult {
    pub params: HawkesParams,
    pub cluster_state: ClusterState,
    /// Objective at the initial point followed by one value per iteration.
    pub objective_trace: Vec<f64>,
    /// `α_1, α_2, …` as used by successive iterations.
    pub alpha_trace: Vec<f64>,
    pub gamma_trace: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    pub wall_time_secs: f64,
}

pub fn fit(dataset: &EventDataset, config: &FitConfig) -> Result<FitResult> {
    fit_with_observer(dataset, config, |_| {})
}

/// [`fit`] that reports a [`TraceRecord`] after every iteration.
pub fn fit_with_observer(
    dataset: &EventDataset,
    config: &FitConfig,
    mut observer: impl FnMut(&TraceRecord),
) -> Result<FitResult> {
    let start = Instant::now();
    if dataset.n_observed() == 0 {
        return Err(Error::Validation("no observed pairs".into()));
    }
    config.validate(dataset.n_students())?;
    let cache = LikelihoodCache::build(dataset, config.beta)?;
    let problem = Problem::new(dataset, &cache, config)?;

    let mut x = initial_point(dataset, config)?;
    let mut prev = x.clone();
    let mut search = x.clone();
    let mut f_x = problem.smooth(&x)? + problem.nonsmooth(&x.a);
    if !f_x.is_finite() {
        return Err(Error::numerical(format!("objective at the initial point is {f_x}")));
    }
    let mut alpha = 1.0;
    let mut gamma = config.gamma0;
    let mut objective_trace = vec![f_x];
    let mut alpha_trace = vec![alpha];
    let mut gamma_trace = Vec::new();
    let mut converged = false;
    let mut iterations = 0;

    for iteration in 1..=config.max_iter {
        iterations = iteration;
        let (f_search, grad) = problem.smooth_with_grad(&search)?;
        let mut backtracks = 0;
        let (cand, f_cand) = loop {
            let attempt = problem
                .prox(&search, &grad, gamma)
                .and_then(|cand| Ok((problem.smooth(&cand)?, cand)));
            if let Ok((f_cand, cand)) = attempt {
                let da = &cand.a - &search.a;
                let du = &cand.u - &search.u;
                let dz = cand.z.matrix() - search.z.matrix();
                let mut model = f_search + frob_dot(&grad.a, &da) + frob_dot(&grad.u, &du);
                if let Some(gz) = &grad.z {
                    model += frob_dot(gz, &dz);
                }
                model += 0.5 * gamma * (da.norm_squared() + du.norm_squared() + dz.norm_squared());
                let slack = 1e-12 * f_search.abs().max(1.0);
                if f_cand.is_finite() && f_cand <= model + slack {
                    break (cand, f_cand);
                }
            }
            backtracks += 1;
            if backtracks > MAX_BACKTRACKS {
                let state = FitState::snapshot(&x, &prev, &search, alpha, gamma, iteration);
                return Err(Error::Numerical {
                    message: format!(
                        "no acceptable step after {MAX_BACKTRACKS} backtracks at iteration {iteration} (gamma = {gamma:e})"
                    ),
                    state_dump: serde_json::to_string(&state).ok(),
                });
            }
            gamma *= config.eta;
        };

        let big_f_cand = f_cand + problem.nonsmooth(&cand.a);
        let alpha_next = alpha_update(alpha);
        let accepted = big_f_cand <= f_x;
        let next = if accepted { cand.clone() } else { x.clone() };

        // S = X + (α/α')(C − X) + ((α − 1)/α')(X − X_prev)
        let toward_cand = next.extrapolate(&cand, alpha / alpha_next);
        let momentum = (alpha - 1.0) / alpha_next;
        let raw = Point {
            a: &toward_cand.a + (&next.a - &x.a) * momentum,
            u: &toward_cand.u + (&next.u - &x.u) * momentum,
            z: ClusterState::new_unchecked(
                toward_cand.z.matrix() + (next.z.matrix() - x.z.matrix()) * momentum,
            ),
        };
        search = problem.restrict_search(raw, &next)?;

        let f_prev = f_x;
        let record = TraceRecord {
            iteration,
            objective: if accepted { big_f_cand } else { f_x },
            candidate_objective: big_f_cand,
            accepted,
            gamma,
            alpha: alpha_next,
            backtracks,
            step_norm_a: (&next.a - &x.a).norm(),
            step_norm_u: (&next.u - &x.u).norm(),
            step_norm_z: (next.z.matrix() - x.z.matrix()).norm(),
        };
        prev = std::mem::replace(&mut x, next);
        if accepted {
            f_x = big_f_cand;
        }
        alpha = alpha_next;
        objective_trace.push(f_x);
        alpha_trace.push(alpha);
        gamma_trace.push(gamma);
        observer(&record);

        let rel_change = (big_f_cand - f_prev).abs() / f_prev.abs().max(1.0);
        if rel_change < config.tol {
            converged = true;
            break;
        }
    }
    Ok(FitResult {
        params: HawkesParams {
            excitation: x.a,
            base_rate: x.u,
            decay: config.beta,
        },
        cluster_state: x.z,
        objective_trace,
        alpha_trace,
        gamma_trace,
        iterations,
        converged,
        wall_time_secs: start.elapsed().as_secs_f64(),
    })
}
