//! Relaxed clustering loss on the columns of `A` and the mixture-Gamma log-prior.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};
use crate::linops::SpectralDecomposition;

/// Clamp applied to `A_ij` before evaluating Gamma densities.
pub const PRIOR_EPS: f64 = 1e-8;

/// Tolerances accepted by [`ClusterState::validate`].
pub const TRACE_TOL: f64 = 1e-8;
pub const EIGEN_TOL: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClusterPenaltyConfig {
    pub rho1: f64,
    pub rho2: f64,
    pub k: usize,
}

impl ClusterPenaltyConfig {
    pub fn validate(&self, n_students: usize) -> Result<()> {
        if !(self.rho1.is_finite() && self.rho1 > 0.0) || !(self.rho2.is_finite() && self.rho2 > 0.0) {
            return Err(Error::Config(format!(
                "rho1 and rho2 must be > 0, got {} and {}",
                self.rho1, self.rho2
            )));
        }
        if self.k == 0 || self.k > n_students {
            return Err(Error::Config(format!(
                "cluster count k = {} must lie in [1, {n_students}]",
                self.k
            )));
        }
        Ok(())
    }

    /// Leading coefficient `ρ2 (ρ2 + ρ1) / ρ1`.
    pub fn coefficient(&self) -> f64 {
        self.rho2 * (self.rho2 + self.rho1) / self.rho1
    }

    /// Diagonal shift `ρ1 / ρ2`.
    pub fn shift(&self) -> f64 {
        self.rho1 / self.rho2
    }
}

/// Relaxed cluster-similarity matrix `Z`: symmetric, `0 ⪯ Z ⪯ I`, `tr Z = k`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterState {
    z: DMatrix<f64>,
}

impl ClusterState {
    pub fn new(z: DMatrix<f64>, k: usize) -> Result<Self> {
        let s = Self { z };
        s.validate(k)?;
        Ok(s)
    }

    pub(crate) fn new_unchecked(z: DMatrix<f64>) -> Self {
        Self { z }
    }

    /// `(k/M)·I`, the center of the feasible set.
    pub fn center(m: usize, k: usize) -> Result<Self> {
        if k == 0 || k > m {
            return Err(Error::Config(format!("cluster count {k} must lie in [1, {m}]")));
        }
        Ok(Self {
            z: DMatrix::identity(m, m) * (k as f64 / m as f64),
        })
    }

    pub fn validate(&self, k: usize) -> Result<()> {
        let z = &self.z;
        if !z.is_square() {
            return Err(Error::dims((z.nrows(), z.nrows()), z.shape()));
        }
        let asym = (z - z.transpose()).abs().max();
        if asym > 1e-12 * z.abs().max().max(1.0) {
            return Err(Error::Validation(format!("Z is not symmetric (max |Z - Zᵀ| = {asym:e})")));
        }
        let trace = z.trace();
        if (trace - k as f64).abs() > TRACE_TOL {
            return Err(Error::Validation(format!("tr Z = {trace}, expected {k}")));
        }
        let spec = SpectralDecomposition::of_symmetric_part(z)?;
        if let Some(v) = spec
            .values
            .iter()
            .find(|&&v| !(-EIGEN_TOL..=1.0 + EIGEN_TOL).contains(&v))
        {
            return Err(Error::Validation(format!("Z eigenvalue {v} outside [0, 1]")));
        }
        Ok(())
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.z
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.z
    }

    pub fn dim(&self) -> usize {
        self.z.nrows()
    }
}

/// `B = (ρ1/ρ2·I + Z)⁻¹` with the leading coefficient; shared by the loss and
/// both gradients so one solve serves a whole objective/gradient evaluation.
#[derive(Debug, Clone)]
pub struct ShiftedInverse {
    coefficient: f64,
    inverse: DMatrix<f64>,
}

impl ShiftedInverse {
    pub fn new(z: &ClusterState, cfg: &ClusterPenaltyConfig) -> Result<Self> {
        let m = z.dim();
        let shifted = z.matrix() + DMatrix::<f64>::identity(m, m) * cfg.shift();
        let chol = shifted
            .cholesky()
            .ok_or_else(|| Error::numerical("shifted cluster matrix is not positive definite"))?;
        let inverse = chol.inverse();
        Ok(Self {
            coefficient: cfg.coefficient(),
            inverse: (&inverse + inverse.transpose()) * 0.5,
        })
    }

    fn check(&self, a: &DMatrix<f64>) -> Result<()> {
        if a.ncols() != self.inverse.nrows() {
            return Err(Error::dims(
                (a.nrows(), self.inverse.nrows()),
                a.shape(),
            ));
        }
        Ok(())
    }

    pub fn inverse(&self) -> &DMatrix<f64> {
        &self.inverse
    }

    /// `c · tr(A B Aᵀ)`.
    pub fn loss(&self, a: &DMatrix<f64>) -> Result<f64> {
        self.check(a)?;
        let ab = a * &self.inverse;
        Ok(self.coefficient * ab.component_mul(a).sum())
    }

    /// `2c · A B`.
    pub fn grad_a(&self, a: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        self.check(a)?;
        Ok(a * &self.inverse * (2.0 * self.coefficient))
    }

    /// `−c · B Aᵀ A B`, symmetrized.
    pub fn grad_z(&self, a: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        self.check(a)?;
        let ab = a * &self.inverse;
        let g = ab.transpose() * &ab * (-self.coefficient);
        Ok((&g + g.transpose()) * 0.5)
    }
}

pub fn cluster_loss(a: &DMatrix<f64>, z: &ClusterState, cfg: &ClusterPenaltyConfig) -> Result<f64> {
    ShiftedInverse::new(z, cfg)?.loss(a)
}

pub fn cluster_loss_grad_a(
    a: &DMatrix<f64>,
    z: &ClusterState,
    cfg: &ClusterPenaltyConfig,
) -> Result<DMatrix<f64>> {
    ShiftedInverse::new(z, cfg)?.grad_a(a)
}

pub fn cluster_loss_grad_z(
    a: &DMatrix<f64>,
    z: &ClusterState,
    cfg: &ClusterPenaltyConfig,
) -> Result<DMatrix<f64>> {
    ShiftedInverse::new(z, cfg)?.grad_z(a)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GammaComponent {
    pub shape: f64,
    pub scale: f64,
}

impl GammaComponent {
    pub fn new(shape: f64, scale: f64) -> Self {
        Self { shape, scale }
    }

    pub fn mean(&self) -> f64 {
        self.shape * self.scale
    }

    /// Log of `x^{s−1} e^{−x/θ} / (Γ(s) θ^s)`.
    pub fn ln_pdf(&self, x: f64) -> f64 {
        (self.shape - 1.0) * x.ln() - x / self.scale - ln_gamma(self.shape) - self.shape * self.scale.ln()
    }
}

/// Equal-weight mixture of Gamma densities used as a prior on observed `A_ij`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GammaMixtureSpec {
    pub components: Vec<GammaComponent>,
    /// Permit shapes below 1, whose densities are unbounded at 0.
    #[serde(default)]
    pub allow_small_shape: bool,
}

impl GammaMixtureSpec {
    pub fn new(components: Vec<GammaComponent>) -> Result<Self> {
        let spec = Self {
            components,
            allow_small_shape: false,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.components.is_empty() {
            return Err(Error::Config("Gamma mixture needs at least one component".into()));
        }
        for (m, c) in self.components.iter().enumerate() {
            if !(c.shape.is_finite() && c.shape > 0.0 && c.scale.is_finite() && c.scale > 0.0) {
                return Err(Error::Config(format!(
                    "component {m}: shape and scale must be > 0, got ({}, {})",
                    c.shape, c.scale
                )));
            }
            if c.shape < 1.0 && !self.allow_small_shape {
                return Err(Error::Config(format!(
                    "component {m}: shape {} < 1 makes the density unbounded at 0 \
                     (set allow_small_shape to override)",
                    c.shape
                )));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.components.len()
    }

    pub fn is_empty(&self) -> bool {
        self.components.is_empty()
    }

    fn ln_weighted(&self, x: f64) -> Vec<f64> {
        let ln_k = (self.components.len() as f64).ln();
        self.components.iter().map(|c| c.ln_pdf(x) - ln_k).collect()
    }

    /// `log Σ_m (1/k) Gamma(max(a, ε); s_m, θ_m)`.
    pub fn ln_density(&self, a: f64) -> f64 {
        log_sum_exp(&self.ln_weighted(a.max(PRIOR_EPS)))
    }
}

fn log_sum_exp(xs: &[f64]) -> f64 {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    max + xs.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}

/// Posterior component probabilities for a single value of `A_ij`.
pub fn responsibilities(a: f64, mixture: &GammaMixtureSpec) -> Vec<f64> {
    let logs = mixture.ln_weighted(a.max(PRIOR_EPS));
    let norm = log_sum_exp(&logs);
    logs.iter().map(|l| (l - norm).exp()).collect()
}

fn check_mask(a: &DMatrix<f64>, observed: &DMatrix<bool>) -> Result<()> {
    if a.shape() != observed.shape() {
        return Err(Error::dims(observed.shape(), a.shape()));
    }
    Ok(())
}

/// Sum of mixture log-densities over observed entries of `A`.
pub fn gamma_log_prior(
    a: &DMatrix<f64>,
    mixture: &GammaMixtureSpec,
    observed: &DMatrix<bool>,
) -> Result<f64> {
    check_mask(a, observed)?;
    mixture.validate()?;
    Ok(a.iter()
        .zip(observed.iter())
        .filter(|(_, &o)| o)
        .map(|(&v, _)| mixture.ln_density(v))
        .sum())
}

/// Gradient of [`gamma_log_prior`]; zero off the observed set.
pub fn gamma_log_prior_grad(
    a: &DMatrix<f64>,
    mixture: &GammaMixtureSpec,
    observed: &DMatrix<bool>,
) -> Result<DMatrix<f64>> {
    check_mask(a, observed)?;
    mixture.validate()?;
    let mut g = DMatrix::zeros(a.nrows(), a.ncols());
    for (idx, (&v, &o)) in a.iter().zip(observed.iter()).enumerate() {
        if !o {
            continue;
        }
        let x = v.max(PRIOR_EPS);
        g[idx] = responsibilities(x, mixture)
            .iter()
            .zip(&mixture.components)
            .map(|(r, c)| r * ((c.shape - 1.0) / x - 1.0 / c.scale))
            .sum();
    }
    Ok(g)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(rho1: f64, rho2: f64, k: usize) -> ClusterPenaltyConfig {
        ClusterPenaltyConfig { rho1, rho2, k }
    }

    fn exp_mixture(scale: f64) -> GammaMixtureSpec {
        GammaMixtureSpec::new(vec![GammaComponent::new(1.0, scale)]).unwrap()
    }

    #[test]
    fn cluster_loss_examples() {
        let a = DMatrix::from_row_slice(2, 3, &[1.0, -2.0, 0.5, 0.3, 0.0, 4.0]);
        let zero = ClusterState::new_unchecked(DMatrix::zeros(3, 3));
        let v = cluster_loss(&a, &zero, &cfg(1.0, 1.0, 1)).unwrap();
        assert!((v - 2.0 * a.norm_squared()).abs() < 1e-12);

        let one = ClusterState::new(DMatrix::from_element(1, 1, 1.0), 1).unwrap();
        let v = cluster_loss(&DMatrix::from_element(1, 1, 1.0), &one, &cfg(1.0, 1.0, 1)).unwrap();
        assert!((v - 1.0).abs() < 1e-15);

        let center = ClusterState::center(3, 1).unwrap();
        assert_eq!(cluster_loss(&DMatrix::zeros(2, 3), &center, &cfg(0.5, 2.0, 1)).unwrap(), 0.0);
        assert!(cluster_loss(&DMatrix::zeros(2, 4), &center, &cfg(0.5, 2.0, 1)).is_err());
    }

    #[test]
    fn cluster_loss_at_center_is_scaled_frobenius() {
        let a = DMatrix::from_fn(3, 5, |i, j| (i as f64 - 1.0) * 0.3 + j as f64 * 0.1);
        let c = cfg(0.7, 1.9, 2);
        let z = ClusterState::center(5, 2).unwrap();
        let v = cluster_loss(&a, &z, &c).unwrap();
        let expected = c.coefficient() * a.norm_squared() / (c.shift() + 2.0 / 5.0);
        assert!((v - expected).abs() <= 1e-12 * expected);
    }

    #[test]
    fn cluster_gradients_examples() {
        let a = DMatrix::from_fn(2, 3, |i, j| (i * 3 + j) as f64 * 0.25);
        let zero = ClusterState::new_unchecked(DMatrix::zeros(3, 3));
        let g = cluster_loss_grad_a(&a, &zero, &cfg(1.0, 1.0, 1)).unwrap();
        assert!((g - &a * 4.0).abs().max() < 1e-12);

        let z = ClusterState::center(3, 2).unwrap();
        let zero_a = DMatrix::zeros(2, 3);
        assert_eq!(cluster_loss_grad_a(&zero_a, &z, &cfg(1.0, 2.0, 2)).unwrap(), zero_a);
        assert_eq!(
            cluster_loss_grad_z(&zero_a, &z, &cfg(1.0, 2.0, 2)).unwrap(),
            DMatrix::zeros(3, 3)
        );
        let gz = cluster_loss_grad_z(&a, &z, &cfg(1.0, 2.0, 2)).unwrap();
        assert_eq!(gz, gz.transpose());
        let eig = SpectralDecomposition::of_symmetric_part(&gz).unwrap();
        assert!(eig.values.iter().all(|&v| v <= 1e-12));
    }

    #[test]
    fn config_validation() {
        assert!(cfg(0.0, 1.0, 1).validate(3).is_err());
        assert!(cfg(1.0, -1.0, 1).validate(3).is_err());
        assert!(cfg(1.0, 1.0, 4).validate(3).is_err());
        assert!(cfg(1.0, 1.0, 0).validate(3).is_err());
        assert!(cfg(1.0, 1.0, 3).validate(3).is_ok());
    }

    #[test]
    fn cluster_state_validation() {
        assert!(ClusterState::new(DMatrix::identity(3, 3), 2).is_err());
        assert!(ClusterState::new(DMatrix::identity(3, 3) * 2.0 / 3.0, 2).is_ok());
        let mut asym = DMatrix::identity(2, 2) * 0.5;
        asym[(0, 1)] = 0.1;
        assert!(ClusterState::new(asym, 1).is_err());
        // trace 1 but an eigenvalue of 1.5
        let bad = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![1.5, -0.5]));
        assert!(ClusterState::new(bad, 1).is_err());
    }

    #[test]
    fn gamma_prior_examples() {
        let mask = DMatrix::from_element(1, 1, true);
        let v = gamma_log_prior(&DMatrix::from_element(1, 1, 1.0), &exp_mixture(1.0), &mask).unwrap();
        assert!((v + 1.0).abs() < 1e-12);
        let v = gamma_log_prior(&DMatrix::zeros(1, 1), &exp_mixture(1.0), &mask).unwrap();
        assert!((v + PRIOR_EPS).abs() < 1e-15);

        let one = GammaMixtureSpec::new(vec![GammaComponent::new(2.5, 0.3)]).unwrap();
        let two = GammaMixtureSpec::new(vec![GammaComponent::new(2.5, 0.3); 2]).unwrap();
        for a in [0.01, 0.4, 2.0] {
            let x = DMatrix::from_element(1, 1, a);
            let lhs = gamma_log_prior(&x, &one, &mask).unwrap();
            let rhs = gamma_log_prior(&x, &two, &mask).unwrap();
            assert!((lhs - rhs).abs() < 1e-12);
        }
    }

    #[test]
    fn gamma_prior_only_counts_observed_entries() {
        let a = DMatrix::from_row_slice(1, 2, &[1.0, 5.0]);
        let mask = DMatrix::from_row_slice(1, 2, &[true, false]);
        let v = gamma_log_prior(&a, &exp_mixture(1.0), &mask).unwrap();
        assert!((v + 1.0).abs() < 1e-12);
        let g = gamma_log_prior_grad(&a, &exp_mixture(2.0), &mask).unwrap();
        assert_eq!(g[(0, 0)], -0.5);
        assert_eq!(g[(0, 1)], 0.0);
    }

    #[test]
    fn shape_one_gradient_is_constant() {
        let a = DMatrix::from_row_slice(2, 2, &[0.0, 0.3, 1.0, 7.0]);
        let mask = DMatrix::from_element(2, 2, true);
        let g = gamma_log_prior_grad(&a, &exp_mixture(2.0), &mask).unwrap();
        assert!(g.iter().all(|&v| (v + 0.5).abs() < 1e-15));
    }

    #[test]
    fn responsibilities_examples() {
        assert_eq!(responsibilities(0.7, &exp_mixture(1.0)), vec![1.0]);
        let twin = GammaMixtureSpec::new(vec![GammaComponent::new(3.0, 0.2); 2]).unwrap();
        let r = responsibilities(0.4, &twin);
        assert!((r[0] - 0.5).abs() < 1e-15 && (r[1] - 0.5).abs() < 1e-15);
        let split = GammaMixtureSpec::new(vec![
            GammaComponent::new(2.0, 0.1),
            GammaComponent::new(2.0, 1.0),
        ])
        .unwrap();
        let r = responsibilities(2.0, &split);
        // density ratio p1/p2 = 100 e^{-18}
        let ratio = 100.0 * (-18.0f64).exp();
        assert!((r[1] - 1.0 / (1.0 + ratio)).abs() < 1e-12);
        assert!(r[1] > 0.99);
        assert!((r.iter().sum::<f64>() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn mixture_validation() {
        assert!(GammaMixtureSpec::new(vec![]).is_err());
        assert!(GammaMixtureSpec::new(vec![GammaComponent::new(0.5, 1.0)]).is_err());
        assert!(GammaMixtureSpec::new(vec![GammaComponent::new(1.0, 0.0)]).is_err());
        let relaxed = GammaMixtureSpec {
            components: vec![GammaComponent::new(0.5, 1.0)],
            allow_small_shape: true,
        };
        assert!(relaxed.validate().is_ok());
    }
}
