//! Projection and proximal primitives used by the optimizer.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};
use crate::regularizers::ClusterState;

/// Eigenvalues this close to 0 or 1 are snapped onto the boundary.
pub const BOUNDARY_SNAP: f64 = 1e-10;

/// Entrywise `max(x, 0)`.
pub fn nonneg_project(x: &DMatrix<f64>) -> DMatrix<f64> {
    x.map(|v| v.max(0.0))
}

/// Singular value soft-thresholding: the proximal map of `threshold·‖·‖_*`.
pub fn svt(x: &DMatrix<f64>, threshold: f64) -> Result<DMatrix<f64>> {
    if !(threshold >= 0.0) {
        return Err(Error::Domain(format!(
            "singular value threshold must be >= 0, got {threshold}"
        )));
    }
    if threshold == 0.0 || x.is_empty() {
        return Ok(x.clone());
    }
    let svd = x.clone().svd(true, true);
    let (Some(u), Some(v_t)) = (svd.u, svd.v_t) else {
        return Err(Error::numerical("singular value decomposition failed"));
    };
    let shrunk = svd.singular_values.map(|s| (s - threshold).max(0.0));
    if shrunk.iter().all(|&s| s == 0.0) {
        return Ok(DMatrix::zeros(x.nrows(), x.ncols()));
    }
    Ok(u * DMatrix::from_diagonal(&shrunk) * v_t)
}

/// Nuclear norm (sum of singular values).
pub fn nuclear_norm(x: &DMatrix<f64>) -> f64 {
    if x.is_empty() {
        return 0.0;
    }
    x.singular_values().sum()
}

/// Euclidean projection onto `{σ : Σσ = k, 0 ≤ σ ≤ 1}`.
///
/// The solution has the form `σ_i = clip(v_i − μ, 0, 1)`. The sum is a
/// non-increasing piecewise-linear function of `μ` with kinks at `v_i` and
/// `v_i − 1`; a binary search over the sorted kinks brackets `k` and the
/// final `μ` is found by linear interpolation.
pub fn capped_simplex_project(v: &[f64], k: f64) -> Result<Vec<f64>> {
    let m = v.len();
    if !(k >= 0.0 && k <= m as f64) {
        return Err(Error::Domain(format!(
            "capped simplex target {k} infeasible for dimension {m}"
        )));
    }
    if let Some(bad) = v.iter().find(|x| !x.is_finite()) {
        return Err(Error::Domain(format!("non-finite entry {bad}")));
    }
    if m == 0 {
        return Ok(Vec::new());
    }
    let clipped_sum = |mu: f64| -> f64 { v.iter().map(|&x| (x - mu).clamp(0.0, 1.0)).sum() };

    let mut kinks: Vec<f64> = v.iter().flat_map(|&x| [x - 1.0, x]).collect();
    kinks.sort_by(f64::total_cmp);
    kinks.dedup();

    // clipped_sum(kinks[0]) == m and clipped_sum(kinks[last]) == 0.
    let (mut lo, mut hi) = (0usize, kinks.len() - 1);
    while hi - lo > 1 {
        let mid = (lo + hi) / 2;
        if clipped_sum(kinks[mid]) >= k {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let (g_lo, g_hi) = (clipped_sum(kinks[lo]), clipped_sum(kinks[hi]));
    let mu = if g_lo <= k {
        kinks[lo]
    } else if g_hi >= k {
        kinks[hi]
    } else {
        kinks[lo] + (g_lo - k) / (g_lo - g_hi) * (kinks[hi] - kinks[lo])
    };
    Ok(v.iter().map(|&x| (x - mu).clamp(0.0, 1.0)).collect())
}

/// Eigendecomposition of a symmetric matrix, eigenvalues in descending order.
#[derive(Debug, Clone)]
pub struct SpectralDecomposition {
    pub vectors: DMatrix<f64>,
    pub values: DVector<f64>,
}

impl SpectralDecomposition {
    /// Decomposes `(x + xᵀ)/2`.
    pub fn of_symmetric_part(x: &DMatrix<f64>) -> Result<Self> {
        if !x.is_square() {
            return Err(Error::dims((x.nrows(), x.nrows()), x.shape()));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::numerical("eigendecomposition input has non-finite entries"));
        }
        let sym = (x + x.transpose()) * 0.5;
        let eig = SymmetricEigen::try_new(sym, f64::EPSILON, 0)
            .ok_or_else(|| Error::numerical("symmetric eigendecomposition did not converge"))?;
        let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
        order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
        let values = DVector::from_iterator(order.len(), order.iter().map(|&i| eig.eigenvalues[i]));
        let vectors = DMatrix::from_columns(
            &order
                .iter()
                .map(|&i| eig.eigenvectors.column(i).into_owned())
                .collect::<Vec<_>>(),
        );
        Ok(Self { vectors, values })
    }

    pub fn reconstruct(&self) -> DMatrix<f64> {
        let q = &self.vectors;
        q * DMatrix::from_diagonal(&self.values) * q.transpose()
    }
}

/// Frobenius-nearest point of `{Z : Z = Zᵀ, 0 ⪯ Z ⪯ I, tr Z = k}`.
pub fn project_z(x: &DMatrix<f64>, k: usize) -> Result<ClusterState> {
    let m = x.nrows();
    if k == 0 || k > m {
        return Err(Error::Domain(format!(
            "cluster count {k} must lie in [1, {m}]"
        )));
    }
    let mut spec = SpectralDecomposition::of_symmetric_part(x)?;
    let projected = capped_simplex_project(spec.values.as_slice(), k as f64)?;
    spec.values = DVector::from_iterator(
        m,
        projected.into_iter().map(|s| {
            if s < BOUNDARY_SNAP {
                0.0
            } else if s > 1.0 - BOUNDARY_SNAP {
                1.0
            } else {
                s
            }
        }),
    );
    let z = spec.reconstruct();
    Ok(ClusterState::new_unchecked((&z + z.transpose()) * 0.5))
}
