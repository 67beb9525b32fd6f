//! Metrics and diagnostics: cluster recovery from `Z`, count prediction,
//! parameter recovery, and inter-arrival statistics.

use std::collections::{BTreeMap, HashMap};

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::events::{EventSequence, PairIndex};
use crate::likelihood::HawkesParams;
use crate::linops::SpectralDecomposition;
use crate::regularizers::ClusterState;

pub const KMEANS_RESTARTS: usize = 20;
pub const KMEANS_SEED: u64 = 0x5eed;
const KMEANS_MAX_ITER: usize = 300;

/// Cluster labels for the `M` students encoded in `Z`.
///
/// Each student is embedded as its row of `Q_k·diag(σ_k)`, the `k` leading
/// eigenvectors of `Z` scaled by their eigenvalues, and the rows are grouped
/// with k-means (k-means++ seeding, fixed seed, best of
/// [`KMEANS_RESTARTS`]). Labels are renumbered in order of first appearance.
pub fn extract_clusters(z: &ClusterState, k: usize) -> Result<Vec<usize>> {
    let m = z.dim();
    if k == 0 || k > m {
        return Err(Error::Domain(format!("cluster count {k} must lie in [1, {m}]")));
    }
    if k == 1 {
        return Ok(vec![0; m]);
    }
    let spec = SpectralDecomposition::of_symmetric_part(z.matrix())?;
    let points: Vec<Vec<f64>> = (0..m)
        .map(|row| (0..k).map(|c| spec.vectors[(row, c)] * spec.values[c].max(0.0)).collect())
        .collect();
    Ok(kmeans(&points, k, KMEANS_RESTARTS, KMEANS_SEED))
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Lloyd's algorithm with k-means++ seeding; returns canonical labels of the
/// lowest-inertia restart.
pub fn kmeans(points: &[Vec<f64>], k: usize, restarts: usize, seed: u64) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut best: Option<(f64, Vec<usize>)> = None;
    for _ in 0..restarts.max(1) {
        let (inertia, labels) = lloyd(points, k, &mut rng);
        if best.as_ref().is_none_or(|(b, _)| inertia < *b - 1e-12) {
            best = Some((inertia, labels));
        }
    }
    canonical_labels(&best.map(|(_, l)| l).unwrap_or_default())
}

fn plus_plus_seeds<R: Rng>(points: &[Vec<f64>], k: usize, rng: &mut R) -> Vec<Vec<f64>> {
    let mut centers = vec![points[rng.random_range(0..points.len())].clone()];
    while centers.len() < k {
        let d2: Vec<f64> = points
            .iter()
            .map(|p| centers.iter().map(|c| sq_dist(p, c)).fold(f64::INFINITY, f64::min))
            .collect();
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let mut target = rng.random::<f64>() * total;
            let mut idx = d2.len() - 1;
            for (i, d) in d2.iter().enumerate() {
                if target < *d {
                    idx = i;
                    break;
                }
                target -= d;
            }
            idx
        } else {
            rng.random_range(0..points.len())
        };
        centers.push(points[pick].clone());
    }
    centers
}

fn lloyd<R: Rng>(points: &[Vec<f64>], k: usize, rng: &mut R) -> (f64, Vec<usize>) {
    let dim = points[0].len();
    let mut centers = plus_plus_seeds(points, k, rng);
    let mut labels = vec![usize::MAX; points.len()];
    for _ in 0..KMEANS_MAX_ITER {
        let mut changed = false;
        for (p, label) in points.iter().zip(labels.iter_mut()) {
            let nearest = (0..k)
                .min_by(|&a, &b| sq_dist(p, &centers[a]).total_cmp(&sq_dist(p, &centers[b])))
                .unwrap_or(0);
            if *label != nearest {
                *label = nearest;
                changed = true;
            }
        }
        if !changed {
            break;
        }
        let mut sums = vec![vec![0.0; dim]; k];
        let mut counts = vec![0usize; k];
        for (p, &l) in points.iter().zip(&labels) {
            counts[l] += 1;
            sums[l].iter_mut().zip(p).for_each(|(s, x)| *s += x);
        }
        for c in 0..k {
            if counts[c] > 0 {
                centers[c] = sums[c].iter().map(|s| s / counts[c] as f64).collect();
            }
        }
    }
    let inertia = points.iter().zip(&labels).map(|(p, &l)| sq_dist(p, &centers[l])).sum();
    (inertia, labels)
}

fn canonical_labels(labels: &[usize]) -> Vec<usize> {
    let mut remap = HashMap::new();
    labels
        .iter()
        .map(|l| {
            let next = remap.len();
            *remap.entry(*l).or_insert(next)
        })
        .collect()
}

fn choose2(n: f64) -> f64 {
    n * (n - 1.0) / 2.0
}

/// Adjusted Rand index. Degenerate cases where the chance-corrected
/// denominator vanishes (e.g. both partitions all singletons) score 1.
pub fn adjusted_rand_index(a: &[usize], b: &[usize]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::Validation(format!(
            "label vectors differ in length: {} vs {}",
            a.len(),
            b.len()
        )));
    }
    let n = a.len() as f64;
    let mut joint: HashMap<(usize, usize), f64> = HashMap::new();
    let mut rows: HashMap<usize, f64> = HashMap::new();
    let mut cols: HashMap<usize, f64> = HashMap::new();
    for (&x, &y) in a.iter().zip(b) {
        *joint.entry((x, y)).or_default() += 1.0;
        *rows.entry(x).or_default() += 1.0;
        *cols.entry(y).or_default() += 1.0;
    }
    let index: f64 = joint.values().map(|&c| choose2(c)).sum();
    let sum_rows: f64 = rows.values().map(|&c| choose2(c)).sum();
    let sum_cols: f64 = cols.values().map(|&c| choose2(c)).sum();
    let expected = if n > 1.0 { sum_rows * sum_cols / choose2(n) } else { 0.0 };
    let max_index = 0.5 * (sum_rows + sum_cols);
    let denom = max_index - expected;
    if denom.abs() < 1e-15 {
        return Ok(1.0);
    }
    Ok((index - expected) / denom)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PredictionMode {
    /// Exogenous events plus the decaying influence of observed history.
    #[default]
    HistoryOnly,
    /// History-only count inflated by the full offspring cascade, `1/(1 − A)`.
    Branching,
}

impl std::str::FromStr for PredictionMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "history_only" => Ok(Self::HistoryOnly),
            "branching" => Ok(Self::Branching),
            other => Err(Error::Validation(format!(
                "unknown prediction mode `{other}` (expected history_only or branching)"
            ))),
        }
    }
}

/// Expected number of events of `pair` in `(t0, t1]` given its history.
pub fn expected_count(
    params: &HawkesParams,
    pair: PairIndex,
    history: &[f64],
    history_horizon: f64,
    window: (f64, f64),
    mode: PredictionMode,
) -> Result<f64> {
    let (t0, t1) = window;
    if !(t0 >= history_horizon) {
        return Err(Error::Domain(format!(
            "window start {t0} precedes the history horizon {history_horizon}"
        )));
    }
    if !(t1 > t0) {
        return Err(Error::Domain(format!("empty window ({t0}, {t1}]")));
    }
    let (n, m) = params.shape();
    if pair.assignment >= n || pair.student >= m {
        return Err(Error::dims((pair.assignment + 1, pair.student + 1), (n, m)));
    }
    let u = params.base_rate[(pair.assignment, pair.student)];
    let a = params.excitation[(pair.assignment, pair.student)];
    let beta = params.decay;
    let carry: f64 = history
        .iter()
        .map(|&x| (-beta * (t0 - x)).exp() - (-beta * (t1 - x)).exp())
        .sum();
    let base = u * (t1 - t0) + a * carry;
    match mode {
        PredictionMode::HistoryOnly => Ok(base),
        PredictionMode::Branching if a < 1.0 => Ok(base / (1.0 - a)),
        PredictionMode::Branching => Err(Error::Domain(format!(
            "branching prediction needs excitation < 1, got {a}"
        ))),
    }
}

/// [`expected_count`] with the history taken from a sequence.
pub fn expected_count_for(
    params: &HawkesParams,
    history: &EventSequence,
    window: (f64, f64),
    mode: PredictionMode,
) -> Result<f64> {
    expected_count(params, history.pair(), history.times(), history.horizon(), window, mode)
}

/// Mean absolute error over a common key set.
pub fn count_mae<K: Ord + std::fmt::Debug>(
    predicted: &BTreeMap<K, f64>,
    actual: &BTreeMap<K, f64>,
) -> Result<f64> {
    if predicted.is_empty() {
        return Err(Error::Validation("count MAE over an empty set".into()));
    }
    if predicted.len() != actual.len() || predicted.keys().zip(actual.keys()).any(|(a, b)| a != b) {
        return Err(Error::Validation(
            "predicted and actual counts cover different pairs".into(),
        ));
    }
    let total: f64 = predicted
        .values()
        .zip(actual.values())
        .map(|(p, a)| (p - a).abs())
        .sum();
    Ok(total / predicted.len() as f64)
}

/// Mean relative absolute error over masked entries, `|est − true| / max(|true|, 1e-6)`.
pub fn param_recovery_error(
    estimated: &DMatrix<f64>,
    truth: &DMatrix<f64>,
    mask: &DMatrix<bool>,
) -> Result<f64> {
    if estimated.shape() != truth.shape() {
        return Err(Error::dims(truth.shape(), estimated.shape()));
    }
    if mask.shape() != truth.shape() {
        return Err(Error::dims(truth.shape(), mask.shape()));
    }
    let errs: Vec<f64> = estimated
        .iter()
        .zip(truth.iter())
        .zip(mask.iter())
        .filter(|(_, &keep)| keep)
        .map(|((e, t), _)| (e - t).abs() / t.abs().max(1e-6))
        .collect();
    if errs.is_empty() {
        return Err(Error::Validation("parameter recovery mask selects no entries".into()));
    }
    Ok(errs.iter().sum::<f64>() / errs.len() as f64)
}

fn ranks(xs: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..xs.len()).collect();
    order.sort_by(|&a, &b| xs[a].total_cmp(&xs[b]));
    let mut out = vec![0.0; xs.len()];
    let mut start = 0;
    while start < order.len() {
        let mut end = start;
        while end + 1 < order.len() && xs[order[end + 1]] == xs[order[start]] {
            end += 1;
        }
        let avg = (start + end) as f64 / 2.0 + 1.0;
        for &i in &order[start..=end] {
            out[i] = avg;
        }
        start = end + 1;
    }
    out
}

/// Pearson correlation; `None` when either side has zero variance.
pub fn pearson(x: &[f64], y: &[f64]) -> Option<f64> {
    if x.len() != y.len() || x.len() < 2 {
        return None;
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx <= 0.0 || syy <= 0.0 {
        return None;
    }
    Some(sxy / (sxx * syy).sqrt())
}

/// Spearman rank correlation with average ranks for ties.
pub fn spearman(x: &[f64], y: &[f64]) -> Option<f64> {
    pearson(&ranks(x), &ranks(y))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistogramBin {
    pub lower: f64,
    pub upper: f64,
    pub count: usize,
    /// `count / (total · width)`.
    pub density: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InterarrivalStats {
    pub n_gaps: usize,
    pub mean: f64,
    pub coefficient_of_variation: f64,
    /// Lag-1 autocorrelation of gaps; `None` when undefined (fewer than two
    /// gap pairs or zero variance).
    pub lag1_autocorrelation: Option<f64>,
    pub histogram: Vec<HistogramBin>,
}

pub const HISTOGRAM_BINS: usize = 20;

/// Gap statistics of one sequence. Needs at least two events.
pub fn interarrival_stats(times: &[f64]) -> Result<InterarrivalStats> {
    if times.len() < 2 {
        return Err(Error::Validation(format!(
            "inter-arrival statistics need at least 2 events, got {}",
            times.len()
        )));
    }
    let gaps: Vec<f64> = times.windows(2).map(|w| w[1] - w[0]).collect();
    Ok(gap_stats(&gaps))
}

fn gap_stats(gaps: &[f64]) -> InterarrivalStats {
    let n = gaps.len() as f64;
    let mean = gaps.iter().sum::<f64>() / n;
    let var = gaps.iter().map(|g| (g - mean) * (g - mean)).sum::<f64>() / n;
    let cv = if mean > 0.0 { var.sqrt() / mean } else { 0.0 };
    let lag1 = if gaps.len() >= 3 {
        pearson(&gaps[..gaps.len() - 1], &gaps[1..])
    } else {
        None
    };
    InterarrivalStats {
        n_gaps: gaps.len(),
        mean,
        coefficient_of_variation: cv,
        lag1_autocorrelation: lag1,
        histogram: log_histogram(gaps, HISTOGRAM_BINS),
    }
}

/// Log-spaced histogram of positive values.
pub fn log_histogram(values: &[f64], bins: usize) -> Vec<HistogramBin> {
    let positive: Vec<f64> = values.iter().copied().filter(|v| *v > 0.0).collect();
    if positive.is_empty() || bins == 0 {
        return Vec::new();
    }
    let lo = positive.iter().copied().fold(f64::INFINITY, f64::min).ln();
    let hi = positive.iter().copied().fold(f64::NEG_INFINITY, f64::max).ln();
    if hi - lo < 1e-12 {
        return vec![HistogramBin {
            lower: lo.exp(),
            upper: hi.exp(),
            count: positive.len(),
            density: f64::INFINITY,
        }];
    }
    let step = (hi - lo) / bins as f64;
    let mut counts = vec![0usize; bins];
    for v in &positive {
        let idx = (((v.ln() - lo) / step) as usize).min(bins - 1);
        counts[idx] += 1;
    }
    let total = positive.len() as f64;
    counts
        .into_iter()
        .enumerate()
        .map(|(b, count)| {
            let lower = (lo + step * b as f64).exp();
            let upper = (lo + step * (b + 1) as f64).exp();
            HistogramBin {
                lower,
                upper,
                count,
                density: count as f64 / (total * (upper - lower)),
            }
        })
        .collect()
}

/// Statistics of a Poisson sequence with the same number of gaps and the
/// same mean gap as `times`, drawn from a seeded stream.
pub fn matched_poisson_stats(times: &[f64], seed: u64) -> Result<InterarrivalStats> {
    let observed = interarrival_stats(times)?;
    if !(observed.mean > 0.0) {
        return Err(Error::Validation("matched Poisson needs a positive mean gap".into()));
    }
    let exp = Exp::new(1.0 / observed.mean)
        .map_err(|e| Error::numerical(format!("invalid matched rate: {e}")))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let gaps: Vec<f64> = (0..observed.n_gaps).map(|_| exp.sample(&mut rng)).collect();
    Ok(gap_stats(&gaps))
}

/// Per-sequence inter-arrival summary in an evaluation report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SequenceDiagnostics {
    pub assignment_id: String,
    pub student_id: String,
    pub n_events: usize,
    pub mean_gap: f64,
    pub coefficient_of_variation: f64,
    pub lag1_autocorrelation: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct EvaluationReport {
    pub ari: Option<f64>,
    pub count_mae_seen: Option<f64>,
    pub count_mae_unseen: Option<f64>,
    pub param_error_a: Option<f64>,
    pub param_error_u: Option<f64>,
    /// Relative error of `A` restricted to unseen pairs.
    pub param_error_a_unseen: Option<f64>,
    /// Rank correlation of fitted and true `A` over unseen pairs.
    pub spearman_a_unseen: Option<f64>,
    pub diagnostics: Vec<SequenceDiagnostics>,
}
