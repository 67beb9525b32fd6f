//! Synthetic ground truth: Ogata thinning for single sequences, a
//! cluster-structured grid generator, and the seen/unseen hold-out split.

use std::collections::BTreeMap;

use nalgebra::DMatrix;
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, Gamma, Uniform};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::events::{EventDataset, EventSequence, IdMap, PairIndex};
use crate::matrix_io::serde_rows;
use crate::regularizers::GammaComponent;

/// Hard cap on events per simulated sequence.
pub const MAX_EVENTS: usize = 1_000_000;

/// Stream reserved for the hold-out split of a spec's dataset.
pub const SPLIT_STREAM: u64 = u64::MAX;

/// Seeded stream for one grid cell; stream 0 is reserved for the grid-level draws.
pub fn pair_rng(seed: u64, pair: PairIndex, n_students: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(1 + (pair.assignment * n_students + pair.student) as u64);
    rng
}

/// Generator used by [`split_dataset`] for a spec seeded with `seed`.
pub fn split_rng(seed: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(SPLIT_STREAM);
    rng
}

/// Draws one sequence on `[0, horizon]` from the exponential-kernel intensity
/// `u + a β Σ exp(−β (t − x))`.
///
/// The intensity is non-increasing between events, so its value right after
/// the latest accepted event (or the latest rejected candidate) bounds it
/// until the next event.
pub fn thinning_sample<R: Rng + ?Sized>(
    pair: PairIndex,
    u: f64,
    a: f64,
    beta: f64,
    horizon: f64,
    rng: &mut R,
) -> Result<EventSequence> {
    if !(u >= 0.0 && u.is_finite() && a >= 0.0 && a.is_finite()) {
        return Err(Error::Validation(format!(
            "base rate and excitation must be finite and >= 0, got u = {u}, a = {a}"
        )));
    }
    if !(beta > 0.0 && beta.is_finite() && horizon > 0.0 && horizon.is_finite()) {
        return Err(Error::Validation(format!(
            "decay and horizon must be finite and > 0, got beta = {beta}, horizon = {horizon}"
        )));
    }
    if a >= 1.0 {
        log::warn!("pair {pair:?}: excitation {a} >= 1 is supercritical; event count may explode");
    }

    let mut times: Vec<f64> = Vec::new();
    let mut t = 0.0;
    // Σ exp(−β (t − x)) over accepted events, kept current at time `t`.
    let mut kernel_sum = 0.0;
    loop {
        let bound = u + a * beta * kernel_sum;
        if bound <= 0.0 {
            break;
        }
        let wait = Exp::new(bound)
            .map_err(|e| Error::numerical(format!("invalid thinning rate {bound}: {e}")))?
            .sample(rng);
        let next = t + wait;
        if next > horizon {
            break;
        }
        kernel_sum *= (-beta * wait).exp();
        t = next;
        let lambda = u + a * beta * kernel_sum;
        if rng.random::<f64>() * bound <= lambda && times.last().is_none_or(|&last| t > last) {
            times.push(t);
            kernel_sum += 1.0;
            if times.len() > MAX_EVENTS {
                return Err(Error::numerical(format!(
                    "pair {pair:?}: more than {MAX_EVENTS} events simulated (excitation {a})"
                )));
            }
        }
    }
    EventSequence::with_horizon(pair, times, horizon)
}

fn default_cluster_gammas() -> Vec<GammaComponent> {
    vec![
        GammaComponent::new(4.0, 0.025),
        GammaComponent::new(4.0, 0.1),
        GammaComponent::new(4.0, 0.2),
    ]
}

/// Generator parameters. Defaults: a 10 × 60 grid, three student clusters with
/// excitation means 0.1 / 0.4 / 0.8, base rates uniform on [0.5, 2] events/h,
/// β = 1/h and a 200 h window.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SyntheticSpec {
    pub n_assignments: usize,
    pub n_students: usize,
    pub k: usize,
    /// One Gamma per cluster for drawing excitation entries.
    pub cluster_gammas: Vec<GammaComponent>,
    pub base_rate_range: (f64, f64),
    pub beta: f64,
    pub horizon: f64,
    /// Excitation draws at or above this value are redrawn.
    pub max_excitation: f64,
    pub unseen_ratio: f64,
    pub train_fraction: f64,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            n_assignments: 10,
            n_students: 60,
            k: 3,
            cluster_gammas: default_cluster_gammas(),
            base_rate_range: (0.5, 2.0),
            beta: 1.0,
            horizon: 200.0,
            max_excitation: 0.95,
            unseen_ratio: 0.1,
            train_fraction: 0.7,
            seed: 0,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        let field = |name: &str, msg: String| Err(Error::Validation(format!("{name}: {msg}")));
        if self.n_assignments == 0 || self.n_students == 0 {
            return field(
                "n_assignments/n_students",
                format!("must be positive, got {}x{}", self.n_assignments, self.n_students),
            );
        }
        if self.k == 0 || self.k > self.n_students {
            return field("k", format!("must lie in [1, {}], got {}", self.n_students, self.k));
        }
        if self.cluster_gammas.len() != self.k {
            return field(
                "cluster_gammas",
                format!("expected {} components, got {}", self.k, self.cluster_gammas.len()),
            );
        }
        for (c, g) in self.cluster_gammas.iter().enumerate() {
            if !(g.shape > 0.0 && g.scale > 0.0 && g.shape.is_finite() && g.scale.is_finite()) {
                return field("cluster_gammas", format!("component {c} needs shape, scale > 0"));
            }
            if g.mean() >= 1.0 {
                return field(
                    "cluster_gammas",
                    format!("component {c} has mean {} >= 1 (supercritical)", g.mean()),
                );
            }
        }
        let (lo, hi) = self.base_rate_range;
        if !(lo >= 0.0 && hi >= lo && hi.is_finite()) {
            return field("base_rate_range", format!("need 0 <= lo <= hi, got ({lo}, {hi})"));
        }
        if !(self.beta > 0.0 && self.beta.is_finite()) {
            return field("beta", format!("must be > 0, got {}", self.beta));
        }
        if !(self.horizon > 0.0 && self.horizon.is_finite()) {
            return field("horizon", format!("must be > 0, got {}", self.horizon));
        }
        if !(self.max_excitation > 0.0 && self.max_excitation <= 1.0) {
            return field(
                "max_excitation",
                format!("must lie in (0, 1], got {}", self.max_excitation),
            );
        }
        if !(0.0..1.0).contains(&self.unseen_ratio) {
            return field("unseen_ratio", format!("must lie in [0, 1), got {}", self.unseen_ratio));
        }
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return field(
                "train_fraction",
                format!("must lie in (0, 1), got {}", self.train_fraction),
            );
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    #[serde(with = "serde_rows")]
    pub excitation: DMatrix<f64>,
    #[serde(with = "serde_rows")]
    pub base_rate: DMatrix<f64>,
    /// Cluster label of every student.
    pub cluster_labels: Vec<usize>,
    pub beta: f64,
    #[serde(default)]
    pub ids: Option<IdMap>,
}

/// Draws ground truth and simulates every pair over `[0, horizon]`.
pub fn generate_dataset(spec: &SyntheticSpec) -> Result<(EventDataset, GroundTruth)> {
    spec.validate()?;
    let (n, m) = (spec.n_assignments, spec.n_students);
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);

    let labels: Vec<usize> = (0..m).map(|_| rng.random_range(0..spec.k)).collect();
    let gammas = spec
        .cluster_gammas
        .iter()
        .map(|g| Gamma::new(g.shape, g.scale))
        .collect::<Result<Vec<_>, _>>()
        .map_err(|e| Error::Validation(format!("cluster_gammas: {e}")))?;
    let mut excitation = DMatrix::zeros(n, m);
    for j in 0..m {
        let dist = &gammas[labels[j]];
        for i in 0..n {
            let mut draw = dist.sample(&mut rng);
            let mut tries = 0;
            while draw >= spec.max_excitation {
                tries += 1;
                if tries > 10_000 {
                    return Err(Error::Validation(format!(
                        "cluster {} rarely draws below max_excitation {}",
                        labels[j], spec.max_excitation
                    )));
                }
                draw = dist.sample(&mut rng);
            }
            excitation[(i, j)] = draw;
        }
    }
    let (lo, hi) = spec.base_rate_range;
    let base_rate = if hi > lo {
        let dist = Uniform::new(lo, hi).map_err(|e| Error::Validation(format!("base_rate_range: {e}")))?;
        DMatrix::from_fn(n, m, |_, _| dist.sample(&mut rng))
    } else {
        DMatrix::from_element(n, m, lo)
    };

    let pairs: Vec<PairIndex> = (0..n)
        .flat_map(|i| (0..m).map(move |j| PairIndex::new(i, j)))
        .collect();
    let seqs = pairs
        .par_iter()
        .map(|&p| {
            let mut prng = pair_rng(spec.seed, p, m);
            thinning_sample(
                p,
                base_rate[(p.assignment, p.student)],
                excitation[(p.assignment, p.student)],
                spec.beta,
                spec.horizon,
                &mut prng,
            )
        })
        .collect::<Result<Vec<_>>>()?;
    let dataset = EventDataset::new(n, m, seqs)?;
    Ok((
        dataset,
        GroundTruth {
            excitation,
            base_rate,
            cluster_labels: labels,
            beta: spec.beta,
            ids: Some(IdMap::synthetic(n, m)),
        },
    ))
}

/// Outcome of the hold-out protocol.
#[derive(Debug, Clone, PartialEq)]
pub struct Split {
    /// Early events of every remaining observed pair; horizon = last train event.
    pub train: EventDataset,
    /// Later events of the same pairs.
    pub seen_test: BTreeMap<PairIndex, Vec<f64>>,
    /// Pairs removed entirely from training.
    pub unseen_pairs: Vec<PairIndex>,
    /// Students whose last two assignments were removed.
    pub unseen_students: Vec<usize>,
}

fn train_count(n: usize, fraction: f64) -> usize {
    // guard against 0.7 * 10 landing a hair above 7
    (((fraction * n as f64) - 1e-9).ceil().max(0.0) as usize).min(n)
}

/// Hides the last two assignments of a random `⌈r·M⌉` students and splits the
/// remaining observed pairs into the first `⌈f·n⌉` events (train) and the rest.
pub fn split_dataset<R: Rng + ?Sized>(
    dataset: &EventDataset,
    unseen_ratio: f64,
    train_fraction: f64,
    rng: &mut R,
) -> Result<Split> {
    if !(0.0..1.0).contains(&unseen_ratio) {
        return Err(Error::Validation(format!(
            "unseen ratio must lie in [0, 1), got {unseen_ratio}"
        )));
    }
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(Error::Validation(format!(
            "train fraction must lie in (0, 1), got {train_fraction}"
        )));
    }
    let (n, m) = dataset.shape();
    let n_hidden = ((unseen_ratio * m as f64) - 1e-9).ceil().max(0.0) as usize;
    let mut unseen_students = sample(rng, m, n_hidden.min(m)).into_vec();
    unseen_students.sort_unstable();
    let hidden_assignments: Vec<usize> = (n.saturating_sub(2)..n).collect();

    let mut unseen_pairs = Vec::new();
    let mut train = Vec::new();
    let mut seen_test = BTreeMap::new();
    for seq in dataset.sequences() {
        let p = seq.pair();
        if unseen_students.binary_search(&p.student).is_ok()
            && hidden_assignments.contains(&p.assignment)
        {
            unseen_pairs.push(p);
            continue;
        }
        let cut = train_count(seq.len(), train_fraction);
        let (head, tail) = seq.times().split_at(cut);
        train.push(EventSequence::new(p, head.to_vec())?);
        seen_test.insert(p, tail.to_vec());
    }
    if train.is_empty() {
        return Err(Error::Validation(
            "split leaves no observed pairs for training".into(),
        ));
    }
    Ok(Split {
        train: EventDataset::new(n, m, train)?,
        seen_test,
        unseen_pairs,
        unseen_students,
    })
}

/// One held-out pair in the split manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeldOutPair {
    pub assignment_id: String,
    pub student_id: String,
    pub train_events: usize,
    /// Prediction window `(window_start, window_end]`.
    pub window_start: f64,
    pub window_end: f64,
    pub held_out_events: usize,
}

/// JSON description of a split: enough to rebuild prediction windows and
/// score them without the raw held-out events.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitManifest {
    pub unseen_ratio: f64,
    pub train_fraction: f64,
    pub seen_pairs: Vec<HeldOutPair>,
    pub unseen_pairs: Vec<HeldOutPair>,
}

impl Split {
    /// Seen windows run from the train horizon to the last true event; unseen
    /// windows cover the pair's whole original observation window.
    pub fn manifest(
        &self,
        original: &EventDataset,
        ids: &IdMap,
        unseen_ratio: f64,
        train_fraction: f64,
    ) -> Result<SplitManifest> {
        let lookup = |p: PairIndex| {
            original
                .get(p)
                .ok_or_else(|| Error::Validation(format!("pair {p:?} missing from original dataset")))
        };
        let mut seen_pairs = Vec::new();
        for seq in self.train.sequences() {
            let p = seq.pair();
            let full = lookup(p)?;
            let held = self.seen_test.get(&p).map_or(0, Vec::len);
            seen_pairs.push(HeldOutPair {
                assignment_id: ids.assignments[p.assignment].clone(),
                student_id: ids.students[p.student].clone(),
                train_events: seq.len(),
                window_start: seq.horizon(),
                window_end: full.times().last().copied().unwrap_or(0.0).max(seq.horizon()),
                held_out_events: held,
            });
        }
        let mut unseen_pairs = Vec::new();
        for &p in &self.unseen_pairs {
            let full = lookup(p)?;
            unseen_pairs.push(HeldOutPair {
                assignment_id: ids.assignments[p.assignment].clone(),
                student_id: ids.students[p.student].clone(),
                train_events: 0,
                window_start: 0.0,
                window_end: full.horizon(),
                held_out_events: full.len(),
            });
        }
        Ok(SplitManifest {
            unseen_ratio,
            train_fraction,
            seen_pairs,
            unseen_pairs,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_base_rate_gives_empty_sequence() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let s = thinning_sample(PairIndex::new(0, 0), 0.0, 0.7, 1.0, 100.0, &mut rng).unwrap();
        assert!(s.is_empty());
        assert_eq!(s.horizon(), 100.0);
    }

    #[test]
    fn thinning_is_deterministic_and_increasing() {
        let p = PairIndex::new(0, 0);
        let a = thinning_sample(p, 1.0, 0.6, 2.0, 50.0, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        let b = thinning_sample(p, 1.0, 0.6, 2.0, 50.0, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        assert_eq!(a, b);
        assert!(a.times().windows(2).all(|w| w[1] > w[0]));
        assert!(a.times().iter().all(|&t| (0.0..=50.0).contains(&t)));
    }

    #[test]
    fn thinning_rejects_bad_parameters() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let p = PairIndex::new(0, 0);
        assert!(thinning_sample(p, -1.0, 0.1, 1.0, 1.0, &mut rng).is_err());
        assert!(thinning_sample(p, 1.0, 0.1, 0.0, 1.0, &mut rng).is_err());
        assert!(thinning_sample(p, 1.0, 0.1, 1.0, 0.0, &mut rng).is_err());
    }

    #[test]
    fn supercritical_runs_hit_the_event_cap() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let err = thinning_sample(PairIndex::new(0, 0), 5.0, 1.5, 5.0, 1e6, &mut rng).unwrap_err();
        assert!(matches!(err, Error::Numerical { .. }));
    }

    #[test]
    fn spec_validation() {
        assert!(SyntheticSpec::default().validate().is_ok());
        let bad = SyntheticSpec {
            n_students: 0,
            ..SyntheticSpec::default()
        };
        assert!(generate_dataset(&bad).is_err());
        let bad = SyntheticSpec {
            cluster_gammas: vec![GammaComponent::new(4.0, 0.3); 3],
            ..SyntheticSpec::default()
        };
        assert!(bad.validate().is_err());
        let bad = SyntheticSpec {
            unseen_ratio: 1.0,
            ..SyntheticSpec::default()
        };
        assert!(bad.validate().is_err());
        assert!(serde_json::from_str::<SyntheticSpec>(r#"{"bogus": 1}"#).is_err());
        let partial: SyntheticSpec = serde_json::from_str(r#"{"seed": 5}"#).unwrap();
        assert_eq!(partial.seed, 5);
        assert_eq!(partial.n_students, 60);
    }

    #[test]
    fn train_count_uses_ceiling() {
        assert_eq!(train_count(10, 0.7), 7);
        assert_eq!(train_count(11, 0.7), 8);
        assert_eq!(train_count(1, 0.7), 1);
        assert_eq!(train_count(0, 0.7), 0);
    }

    fn small_spec(seed: u64) -> SyntheticSpec {
        SyntheticSpec {
            n_assignments: 4,
            n_students: 6,
            k: 2,
            cluster_gammas: vec![GammaComponent::new(4.0, 0.025), GammaComponent::new(4.0, 0.1)],
            horizon: 30.0,
            seed,
            ..SyntheticSpec::default()
        }
    }

    #[test]
    fn split_partitions_events_exactly() {
        let (ds, _) = generate_dataset(&small_spec(4)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let split = split_dataset(&ds, 0.34, 0.7, &mut rng).unwrap();
        assert_eq!(split.unseen_students.len(), 3);
        assert_eq!(split.unseen_pairs.len(), 6);
        assert!(split.unseen_pairs.iter().all(|p| p.assignment >= 2));
        for seq in ds.sequences() {
            let p = seq.pair();
            if split.unseen_pairs.contains(&p) {
                assert!(!split.train.is_observed(p));
                continue;
            }
            let train = split.train.get(p).unwrap();
            let mut joined = train.times().to_vec();
            joined.extend(&split.seen_test[&p]);
            assert_eq!(joined, seq.times());
            assert_eq!(train.len(), train_count(seq.len(), 0.7));
        }

        let none = split_dataset(&ds, 0.0, 0.5, &mut rng).unwrap();
        assert!(none.unseen_pairs.is_empty());
    }

    #[test]
    fn split_rejects_bad_ratios_and_empty_results() {
        let seq = EventSequence::new(PairIndex::new(0, 0), vec![1.0, 2.0]).unwrap();
        let ds = EventDataset::new(1, 1, [seq]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(split_dataset(&ds, 0.5, 0.7, &mut rng).is_err());
        assert!(split_dataset(&ds, 0.0, 1.0, &mut rng).is_err());
        assert!(split_dataset(&ds, -0.1, 0.5, &mut rng).is_err());
    }

    #[test]
    fn manifest_windows() {
        let (ds, truth) = generate_dataset(&small_spec(8)).unwrap();
        let ids = truth.ids.clone().unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let split = split_dataset(&ds, 0.2, 0.7, &mut rng).unwrap();
        let manifest = split.manifest(&ds, &ids, 0.2, 0.7).unwrap();
        assert_eq!(manifest.unseen_pairs.len(), split.unseen_pairs.len());
        assert_eq!(manifest.seen_pairs.len(), split.train.n_observed());
        for h in &manifest.unseen_pairs {
            assert_eq!((h.window_start, h.window_end), (0.0, 30.0));
        }
        for h in &manifest.seen_pairs {
            assert!(h.window_end >= h.window_start);
        }
        let json = serde_json::to_string(&truth).unwrap();
        let back: GroundTruth = serde_json::from_str(&json).unwrap();
        assert_eq!(back, truth);
    }
}
