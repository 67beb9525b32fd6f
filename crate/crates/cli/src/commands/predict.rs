use std::path::{Path, PathBuf};

use burstlab::evaluate::{expected_count, PredictionMode};
use burstlab::events::LoadOptions;
use burstlab::simulate::SplitManifest;
use burstlab::EventDataset;
use serde::{Deserialize, Serialize};

use super::Context;
use crate::error::{CliError, CliResult};
use crate::files::{open, read_events, read_json, write_with};
use crate::manifest::{sidecar_path, RunManifest};
use crate::model::FittedModel;

pub enum WindowSource {
    Csv(PathBuf),
    Split(PathBuf),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowRow {
    pub assignment_id: String,
    pub student_id: String,
    pub window_start: f64,
    pub window_end: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRow {
    pub assignment_id: String,
    pub student_id: String,
    pub window_start: f64,
    pub window_end: f64,
    pub mode: PredictionMode,
    /// Empty when `error` is set.
    pub predicted: Option<f64>,
    pub error: Option<String>,
}

fn read_windows(path: &Path) -> CliResult<Vec<WindowRow>> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(open(path)?);
    rdr.deserialize()
        .collect::<Result<Vec<WindowRow>, _>>()
        .map_err(|e| CliError::input(path.display(), e))
}

/// Windows named by a split manifest, seen pairs first.
pub fn split_windows(split: &SplitManifest) -> Vec<WindowRow> {
    split
        .seen_pairs
        .iter()
        .chain(&split.unseen_pairs)
        .map(|p| WindowRow {
            assignment_id: p.assignment_id.clone(),
            student_id: p.student_id.clone(),
            window_start: p.window_start,
            window_end: p.window_end,
        })
        .collect()
}

/// Expected count for one window, or a row-level error message.
pub fn predict_row(model: &FittedModel, history: &EventDataset, w: &WindowRow, mode: PredictionMode) -> Result<f64, String> {
    let pair = model
        .pair(&w.assignment_id, &w.student_id)
        .ok_or_else(|| format!("pair ({}, {}) not in fitted parameters", w.assignment_id, w.student_id))?;
    let (times, horizon) = history
        .get(pair)
        .map_or((&[][..], 0.0), |s| (s.times(), s.horizon()));
    expected_count(&model.params, pair, times, horizon, (w.window_start, w.window_end), mode).map_err(|e| e.to_string())
}

pub fn run(ctx: &Context, params: &Path, events: &Path, source: &WindowSource, out: &Path) -> CliResult<RunManifest> {
    let mut manifest = RunManifest::new("predict");
    manifest.threads = ctx.threads;
    manifest.input("params", params);
    manifest.input("events", events);
    manifest.config(&serde_json::json!({ "mode": ctx.mode }))?;
    let model = FittedModel::load(params)?;
    let (history, _) = read_events(events, LoadOptions::default(), Some(&model.ids))?;
    let windows = match source {
        WindowSource::Csv(p) => {
            manifest.input("windows", p);
            read_windows(p)?
        }
        WindowSource::Split(p) => {
            manifest.input("split", p);
            split_windows(&read_json(p)?)
        }
    };
    if windows.is_empty() {
        return Err(CliError::Input("no prediction windows given".into()));
    }
    let rows: Vec<PredictionRow> = manifest.timed("predict", || {
        Ok(windows
            .iter()
            .map(|w| {
                let result = predict_row(&model, &history, w, ctx.mode);
                PredictionRow {
                    assignment_id: w.assignment_id.clone(),
                    student_id: w.student_id.clone(),
                    window_start: w.window_start,
                    window_end: w.window_end,
                    mode: ctx.mode,
                    predicted: result.as_ref().ok().copied(),
                    error: result.err(),
                }
            })
            .collect())
    })?;
    let failed = rows.iter().filter(|r| r.error.is_some()).count();
    let path = write_with(out, |w| -> csv::Result<()> {
        let mut wtr = csv::Writer::from_writer(w);
        for r in &rows {
            wtr.serialize(r)?;
        }
        wtr.flush()?;
        Ok(())
    })?;
    manifest.output("predictions", path);
    if failed == rows.len() {
        return Err(CliError::Input(format!(
            "all {failed} prediction rows failed; first error: {}",
            rows[0].error.as_deref().unwrap_or_default()
        )));
    }
    if failed > 0 {
        log::warn!("{failed} of {} prediction rows failed; see the error column", rows.len());
    }
    manifest.finish(&sidecar_path(out))
}
