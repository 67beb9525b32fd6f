//! Event data model: per-pair timestamp sequences arranged on an
//! assignment × student grid, plus CSV ingestion.
//!
//! Timestamps are hours stored as `f64`. A pair is *observed* when it has a
//! sequence in the dataset, even if that sequence holds zero events.

use std::collections::{BTreeMap, HashMap};
use std::io::{Read, Write};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Offset added to a timestamp that ties with its predecessor when jittering.
pub const TIE_JITTER_HOURS: f64 = 1e-6;

/// `(assignment, student)` cell of the grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct PairIndex {
    pub assignment: usize,
    pub student: usize,
}

impl PairIndex {
    pub fn new(assignment: usize, student: usize) -> Self {
        Self { assignment, student }
    }
}

/// How equal consecutive timestamps are handled at ingest.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TiePolicy {
    #[default]
    Reject,
    /// Push each tied timestamp forward by [`TIE_JITTER_HOURS`] past its predecessor.
    Jitter,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventSequence {
    pair: PairIndex,
    times: Vec<f64>,
    horizon: f64,
}

impl EventSequence {
    /// Builds a sequence whose observation window ends at the last event
    /// (or at 0 when there are no events).
    pub fn new(pair: PairIndex, times: Vec<f64>) -> Result<Self> {
        let horizon = times.last().copied().unwrap_or(0.0);
        Self::with_horizon(pair, times, horizon)
    }

    pub fn with_horizon(pair: PairIndex, times: Vec<f64>, horizon: f64) -> Result<Self> {
        validate_times(&times)?;
        if !horizon.is_finite() || horizon < 0.0 {
            return Err(Error::Validation(format!(
                "pair {pair:?}: horizon must be finite and >= 0, got {horizon}"
            )));
        }
        if let Some(&last) = times.last() {
            if horizon < last {
                return Err(Error::Validation(format!(
                    "pair {pair:?}: horizon {horizon} precedes last event {last}"
                )));
            }
        }
        Ok(Self {
            pair,
            times,
            horizon,
        })
    }

    /// Sorts raw timestamps and resolves ties according to `policy` before validating.
    pub fn from_unsorted(
        pair: PairIndex,
        mut times: Vec<f64>,
        horizon: Option<f64>,
        policy: TiePolicy,
    ) -> Result<Self> {
        if let Some(bad) = times.iter().find(|t| !t.is_finite()) {
            return Err(Error::Validation(format!(
                "pair {pair:?}: non-finite timestamp {bad}"
            )));
        }
        times.sort_by(f64::total_cmp);
        if policy == TiePolicy::Jitter {
            for idx in 1..times.len() {
                if times[idx] <= times[idx - 1] {
                    times[idx] = times[idx - 1] + TIE_JITTER_HOURS;
                }
            }
        }
        match horizon {
            Some(h) => Self::with_horizon(pair, times, h),
            None => Self::new(pair, times),
        }
    }

    pub fn pair(&self) -> PairIndex {
        self.pair
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    /// Same events, new pair label.
    pub fn relabel(mut self, pair: PairIndex) -> Self {
        self.pair = pair;
        self
    }
}

fn validate_times(times: &[f64]) -> Result<()> {
    for (idx, &t) in times.iter().enumerate() {
        if !t.is_finite() || t < 0.0 {
            return Err(Error::Validation(format!(
                "timestamp #{idx} must be finite and >= 0, got {t}"
            )));
        }
        if idx > 0 && t <= times[idx - 1] {
            return Err(Error::Validation(format!(
                "timestamps must be strictly increasing: #{} = {} then #{idx} = {t}",
                idx - 1,
                times[idx - 1]
            )));
        }
    }
    Ok(())
}

/// Sparse N×M grid of event sequences. Pairs with a sequence form the observed set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventDataset {
    n_assignments: usize,
    n_students: usize,
    sequences: BTreeMap<PairIndex, EventSequence>,
}

impl EventDataset {
    pub fn new(
        n_assignments: usize,
        n_students: usize,
        sequences: impl IntoIterator<Item = EventSequence>,
    ) -> Result<Self> {
        if n_assignments == 0 || n_students == 0 {
            return Err(Error::Validation(format!(
                "grid dimensions must be positive, got {n_assignments}x{n_students}"
            )));
        }
        let mut map = BTreeMap::new();
        for seq in sequences {
            let p = seq.pair();
            if p.assignment >= n_assignments || p.student >= n_students {
                return Err(Error::Validation(format!(
                    "pair {p:?} outside grid {n_assignments}x{n_students}"
                )));
            }
            if map.insert(p, seq).is_some() {
                return Err(Error::Validation(format!("duplicate sequence for pair {p:?}")));
            }
        }
        Ok(Self {
            n_assignments,
            n_students,
            sequences: map,
        })
    }

    pub fn n_assignments(&self) -> usize {
        self.n_assignments
    }

    pub fn n_students(&self) -> usize {
        self.n_students
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.n_assignments, self.n_students)
    }

    pub fn get(&self, pair: PairIndex) -> Option<&EventSequence> {
        self.sequences.get(&pair)
    }

    pub fn is_observed(&self, pair: PairIndex) -> bool {
        self.sequences.contains_key(&pair)
    }

    /// Observed sequences in `(assignment, student)` order.
    pub fn sequences(&self) -> impl ExactSizeIterator<Item = &EventSequence> {
        self.sequences.values()
    }

    pub fn n_observed(&self) -> usize {
        self.sequences.len()
    }

    pub fn n_events(&self) -> usize {
        self.sequences.values().map(EventSequence::len).sum()
    }

    pub fn observed_mask(&self) -> DMatrix<bool> {
        let mut mask = DMatrix::from_element(self.n_assignments, self.n_students, false);
        for p in self.sequences.keys() {
            mask[(p.assignment, p.student)] = true;
        }
        mask
    }

    /// Copy of the dataset with every horizon replaced by `horizon`.
    pub fn with_global_horizon(&self, horizon: f64) -> Result<Self> {
        let seqs = self
            .sequences
            .values()
            .map(|s| EventSequence::with_horizon(s.pair, s.times.clone(), horizon))
            .collect::<Result<Vec<_>>>()?;
        Self::new(self.n_assignments, self.n_students, seqs)
    }
}

/// Dense index ↔ external string id mapping, in first-seen order.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct IdMap {
    pub assignments: Vec<String>,
    pub students: Vec<String>,
}

impl IdMap {
    /// Ids `a0..a{n-1}` and `s0..s{m-1}`.
    pub fn synthetic(n_assignments: usize, n_students: usize) -> Self {
        Self {
            assignments: (0..n_assignments).map(|i| format!("a{i}")).collect(),
            students: (0..n_students).map(|j| format!("s{j}")).collect(),
        }
    }

    pub fn assignment_index(&self, id: &str) -> Option<usize> {
        self.assignments.iter().position(|a| a == id)
    }

    pub fn student_index(&self, id: &str) -> Option<usize> {
        self.students.iter().position(|s| s == id)
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct LoadOptions {
    /// Overrides every pair's horizon; by default each pair ends at its last event.
    pub horizon: Option<f64>,
    pub ties: TiePolicy,
}

#[derive(Debug, Deserialize)]
struct EventRow {
    assignment_id: String,
    student_id: String,
    timestamp_hours: f64,
}

/// Reads the `assignment_id,student_id,timestamp_hours` events format.
pub fn read_events_csv<R: Read>(reader: R, opts: LoadOptions) -> Result<(EventDataset, IdMap)> {
    read_events(reader, opts, None)
}

/// Like [`read_events_csv`] but indexes rows by a fixed id universe, so pairs
/// and whole rows or columns without events keep their place in the grid.
/// Ids absent from `ids` are an error.
pub fn read_events_csv_with_ids<R: Read>(reader: R, opts: LoadOptions, ids: &IdMap) -> Result<EventDataset> {
    read_events(reader, opts, Some(ids)).map(|(d, _)| d)
}

fn read_events<R: Read>(reader: R, opts: LoadOptions, known: Option<&IdMap>) -> Result<(EventDataset, IdMap)> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers()?.clone();
    let expected = ["assignment_id", "student_id", "timestamp_hours"];
    if headers.len() != 3 || headers.iter().zip(expected).any(|(h, e)| h != e) {
        return Err(Error::Validation(format!(
            "events header must be `{}`, got `{}`",
            expected.join(","),
            headers.iter().collect::<Vec<_>>().join(",")
        )));
    }

    let mut ids = known.cloned().unwrap_or_default();
    let index = |names: &[String]| -> HashMap<String, usize> {
        names.iter().enumerate().map(|(i, n)| (n.clone(), i)).collect()
    };
    let mut a_lookup = index(&ids.assignments);
    let mut s_lookup = index(&ids.students);
    let mut raw: BTreeMap<PairIndex, Vec<f64>> = BTreeMap::new();
    for row in rdr.deserialize() {
        let row: EventRow = row?;
        if known.is_some() {
            let (Some(&i), Some(&j)) = (a_lookup.get(&row.assignment_id), s_lookup.get(&row.student_id)) else {
                return Err(Error::Validation(format!(
                    "event for ({}, {}) uses an id missing from the id map",
                    row.assignment_id, row.student_id
                )));
            };
            raw.entry(PairIndex::new(i, j)).or_default().push(row.timestamp_hours);
            continue;
        }
        let i = *a_lookup.entry(row.assignment_id.clone()).or_insert_with(|| {
            ids.assignments.push(row.assignment_id.clone());
            ids.assignments.len() - 1
        });
        let j = *s_lookup.entry(row.student_id.clone()).or_insert_with(|| {
            ids.students.push(row.student_id.clone());
            ids.students.len() - 1
        });
        raw.entry(PairIndex::new(i, j))
            .or_default()
            .push(row.timestamp_hours);
    }
    if raw.is_empty() {
        return Err(Error::Validation("events file contains no events".into()));
    }

    let seqs = raw
        .into_iter()
        .map(|(p, times)| EventSequence::from_unsorted(p, times, opts.horizon, opts.ties))
        .collect::<Result<Vec<_>>>()?;
    let dataset = EventDataset::new(ids.assignments.len(), ids.students.len(), seqs)?;
    Ok((dataset, ids))
}

/// Writes events sorted by pair then time. Zero-event pairs produce no rows.
pub fn write_events_csv<W: Write>(writer: W, dataset: &EventDataset, ids: &IdMap) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(writer);
    wtr.write_record(["assignment_id", "student_id", "timestamp_hours"])?;
    for seq in dataset.sequences() {
        let p = seq.pair();
        for t in seq.times() {
            wtr.write_record([
                ids.assignments[p.assignment].as_str(),
                ids.students[p.student].as_str(),
                &t.to_string(),
            ])?;
        }
    }
    wtr.flush()?;
    Ok(())
}
