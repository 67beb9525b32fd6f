use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use burstlab::evaluate::{
    adjusted_rand_index, count_mae, extract_clusters, interarrival_stats, param_recovery_error, spearman,
    EvaluationReport, SequenceDiagnostics,
};
use burstlab::events::LoadOptions;
use burstlab::simulate::{GroundTruth, HeldOutPair, SplitManifest};
use burstlab::{EventDataset, PairIndex};
use nalgebra::DMatrix;

use super::predict::{predict_row, WindowRow};
use super::Context;
use crate::error::{CliError, CliResult};
use crate::files::{read_events, read_json, write_json};
use crate::manifest::{sidecar_path, RunManifest};
use crate::model::FittedModel;

fn resolve<'h>(model: &FittedModel, held: &'h [HeldOutPair]) -> CliResult<Vec<(PairIndex, &'h HeldOutPair)>> {
    held.iter()
        .map(|h| {
            model.pair(&h.assignment_id, &h.student_id).map(|p| (p, h)).ok_or_else(|| {
                CliError::Input(format!(
                    "split pair ({}, {}) is not in the fitted parameters",
                    h.assignment_id, h.student_id
                ))
            })
        })
        .collect()
}

fn mae(model: &FittedModel, history: &EventDataset, pairs: &[(PairIndex, &HeldOutPair)], ctx: &Context) -> CliResult<Option<f64>> {
    if pairs.is_empty() {
        return Ok(None);
    }
    let mut predicted = BTreeMap::new();
    let mut actual = BTreeMap::new();
    for (p, h) in pairs {
        let w = WindowRow {
            assignment_id: h.assignment_id.clone(),
            student_id: h.student_id.clone(),
            window_start: h.window_start,
            window_end: h.window_end,
        };
        // An empty window (no held-out events after the last train event) predicts 0.
        let value = if h.window_end > h.window_start {
            predict_row(model, history, &w, ctx.mode).map_err(CliError::Input)?
        } else {
            0.0
        };
        predicted.insert(*p, value);
        actual.insert(*p, h.held_out_events as f64);
    }
    Ok(Some(count_mae(&predicted, &actual)?))
}

pub fn run(
    ctx: &Context,
    params: &Path,
    truth_path: Option<&Path>,
    split_path: &Path,
    events: Option<&Path>,
    out: &Path,
) -> CliResult<RunManifest> {
    let mut manifest = RunManifest::new("evaluate");
    manifest.threads = ctx.threads;
    manifest.input("params", params);
    manifest.input("split", split_path);
    manifest.config(&serde_json::json!({ "mode": ctx.mode }))?;
    let model = FittedModel::load(params)?;
    let split: SplitManifest = read_json(split_path)?;
    let seen = resolve(&model, &split.seen_pairs)?;
    let unseen = resolve(&model, &split.unseen_pairs)?;

    let events_path: Option<PathBuf> = events
        .map(Path::to_path_buf)
        .or_else(|| model.manifest.as_ref().and_then(|m| m.inputs.get("events").cloned()))
        .filter(|p| p.exists());
    let history = match &events_path {
        Some(p) => {
            manifest.input("events", p);
            Some(read_events(p, LoadOptions::default(), Some(&model.ids))?.0)
        }
        None => {
            log::warn!("training events not found; count errors are left empty");
            None
        }
    };

    let mut report = EvaluationReport::default();
    if let Some(h) = &history {
        report.count_mae_seen = mae(&model, h, &seen, ctx)?;
        report.count_mae_unseen = mae(&model, h, &unseen, ctx)?;
        for seq in h.sequences() {
            let p = seq.pair();
            if let Ok(s) = interarrival_stats(seq.times()) {
                report.diagnostics.push(SequenceDiagnostics {
                    assignment_id: model.ids.assignments[p.assignment].clone(),
                    student_id: model.ids.students[p.student].clone(),
                    n_events: seq.len(),
                    mean_gap: s.mean,
                    coefficient_of_variation: s.coefficient_of_variation,
                    lag1_autocorrelation: s.lag1_autocorrelation,
                });
            }
        }
    }

    if let Some(tp) = truth_path {
        manifest.input("truth", tp);
        let truth: GroundTruth = read_json(tp)?;
        if truth.excitation.shape() != model.params.shape() || truth.base_rate.shape() != model.params.shape() {
            return Err(CliError::Input(format!(
                "ground truth is {:?} but fitted parameters are {:?}",
                truth.excitation.shape(),
                model.params.shape()
            )));
        }
        if let Some(ids) = &truth.ids {
            if *ids != model.ids {
                return Err(CliError::Input("ground-truth ids differ from the fitted ids".into()));
            }
        }
        let all = DMatrix::from_element(truth.excitation.nrows(), truth.excitation.ncols(), true);
        report.param_error_a = Some(param_recovery_error(&model.params.excitation, &truth.excitation, &all)?);
        report.param_error_u = Some(param_recovery_error(&model.params.base_rate, &truth.base_rate, &all)?);
        if !unseen.is_empty() {
            let mut mask = DMatrix::from_element(all.nrows(), all.ncols(), false);
            for (p, _) in &unseen {
                mask[(p.assignment, p.student)] = true;
            }
            report.param_error_a_unseen = Some(param_recovery_error(&model.params.excitation, &truth.excitation, &mask)?);
            let (est, tru): (Vec<f64>, Vec<f64>) = unseen
                .iter()
                .map(|(p, _)| (model.params.excitation[(p.assignment, p.student)], truth.excitation[(p.assignment, p.student)]))
                .unzip();
            report.spearman_a_unseen = spearman(&est, &tru);
        }
        if let Some(z) = &model.cluster_state {
            let labels = extract_clusters(z, model.report.k)?;
            report.ari = Some(adjusted_rand_index(&labels, &truth.cluster_labels)?);
        }
    }
    manifest.output("report", write_json(out, &report)?);
    manifest.finish(&sidecar_path(out))
}
