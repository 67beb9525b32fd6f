use std::path::Path;

use burstlab::evaluate::{interarrival_stats, matched_poisson_stats, InterarrivalStats};
use burstlab::events::LoadOptions;
use serde::Serialize;

use super::Context;
use crate::error::CliResult;
use crate::files::{read_events, write_with};
use crate::manifest::{sidecar_path, RunManifest};

pub const MIN_EVENTS: usize = 3;

#[derive(Debug, Serialize)]
struct DiagnosticRow<'a> {
    assignment_id: &'a str,
    student_id: &'a str,
    n_events: usize,
    /// `ok`, or `too_few_events` when fewer than three events were observed.
    status: &'static str,
    mean_gap: Option<f64>,
    cv: Option<f64>,
    lag1: Option<f64>,
    poisson_mean_gap: Option<f64>,
    poisson_cv: Option<f64>,
    poisson_lag1: Option<f64>,
}

#[derive(Debug, Serialize)]
struct TidyRow<'a> {
    assignment_id: &'a str,
    student_id: &'a str,
    source: &'static str,
    metric: &'static str,
    bin: Option<usize>,
    value: f64,
}

fn tidy_rows<'a>(a: &'a str, s: &'a str, source: &'static str, st: &InterarrivalStats, out: &mut Vec<TidyRow<'a>>) {
    let mut push = |metric, bin, value| out.push(TidyRow { assignment_id: a, student_id: s, source, metric, bin, value });
    push("mean_gap", None, st.mean);
    push("cv", None, st.coefficient_of_variation);
    if let Some(l) = st.lag1_autocorrelation {
        push("lag1", None, l);
    }
    for (b, bin) in st.histogram.iter().enumerate() {
        push("hist_lower", Some(b), bin.lower);
        push("hist_upper", Some(b), bin.upper);
        push("hist_density", Some(b), bin.density);
    }
}

/// Seed of the matched Poisson draw for pair `(i, j)` on an `N × M` grid.
pub fn pair_seed(seed: u64, i: usize, j: usize, m: usize) -> u64 {
    seed ^ (1 + (i * m + j) as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

pub fn run(ctx: &Context, events: &Path, out: &Path, tidy: Option<&Path>) -> CliResult<RunManifest> {
    let mut manifest = RunManifest::new("diagnose");
    let seed = ctx.seed.unwrap_or(0);
    manifest.seed = Some(seed);
    manifest.threads = ctx.threads;
    manifest.input("events", events);
    manifest.config(&serde_json::json!({ "min_events": MIN_EVENTS }))?;
    let (dataset, ids) = read_events(events, LoadOptions::default(), None)?;
    let m = dataset.n_students();

    let mut rows = Vec::new();
    let mut tidy_out = Vec::new();
    for seq in dataset.sequences() {
        let p = seq.pair();
        let (a, s) = (ids.assignments[p.assignment].as_str(), ids.students[p.student].as_str());
        let stats = if seq.len() >= MIN_EVENTS {
            let real = interarrival_stats(seq.times())?;
            let sim = matched_poisson_stats(seq.times(), pair_seed(seed, p.assignment, p.student, m))?;
            Some((real, sim))
        } else {
            None
        };
        if let Some((real, sim)) = &stats {
            tidy_rows(a, s, "observed", real, &mut tidy_out);
            tidy_rows(a, s, "matched_poisson", sim, &mut tidy_out);
        }
        rows.push(DiagnosticRow {
            assignment_id: a,
            student_id: s,
            n_events: seq.len(),
            status: if stats.is_some() { "ok" } else { "too_few_events" },
            mean_gap: stats.as_ref().map(|(r, _)| r.mean),
            cv: stats.as_ref().map(|(r, _)| r.coefficient_of_variation),
            lag1: stats.as_ref().and_then(|(r, _)| r.lag1_autocorrelation),
            poisson_mean_gap: stats.as_ref().map(|(_, p)| p.mean),
            poisson_cv: stats.as_ref().map(|(_, p)| p.coefficient_of_variation),
            poisson_lag1: stats.as_ref().and_then(|(_, p)| p.lag1_autocorrelation),
        });
    }
    manifest.output("diagnostics", write_csv_rows(out, &rows)?);
    if let Some(t) = tidy {
        manifest.output("tidy", write_csv_rows(t, &tidy_out)?);
    }
    manifest.finish(&sidecar_path(out))
}

fn write_csv_rows<T: Serialize>(path: &Path, items: &[T]) -> CliResult<std::path::PathBuf> {
    write_with(path, |w| -> csv::Result<()> {
        let mut wtr = csv::Writer::from_writer(w);
        for r in items {
            wtr.serialize(r)?;
        }
        wtr.flush()?;
        Ok(())
    })
}
