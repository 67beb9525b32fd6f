use std::io::Write;
use std::path::Path;

use burstlab::events::LoadOptions;
use burstlab::optimizer::fit_with_observer;
use burstlab::{FitConfig, IdMap};

use super::Context;
use crate::error::{CliError, CliResult};
use crate::files::{ensure_dir, read_events, read_json, write_json, write_matrix};
use crate::manifest::RunManifest;
use crate::model::FitReport;

pub fn run(
    ctx: &Context,
    events: &Path,
    config_path: Option<&Path>,
    ids_path: Option<&Path>,
    horizon: Option<f64>,
    out: &Path,
) -> CliResult<RunManifest> {
    let mut manifest = RunManifest::new("fit");
    manifest.seed = ctx.seed;
    manifest.threads = ctx.threads;
    manifest.input("events", events);
    let config: FitConfig = match config_path {
        Some(p) => {
            manifest.input("config", p);
            read_json(p)?
        }
        None => FitConfig::default(),
    };
    let known: Option<IdMap> = match ids_path {
        Some(p) => {
            manifest.input("ids", p);
            Some(read_json(p)?)
        }
        None => None,
    };
    if let Some(h) = horizon {
        if !(h.is_finite() && h >= 0.0) {
            return Err(CliError::Input(format!("--horizon must be finite and >= 0, got {h}")));
        }
    }
    let opts = LoadOptions { horizon, ..LoadOptions::default() };
    let (dataset, ids) = manifest.timed("load", || read_events(events, opts, known.as_ref()))?;
    config
        .validate(dataset.n_students())
        .map_err(|e| CliError::Input(format!("invalid fit config: {e}")))?;
    manifest.config(&serde_json::json!({ "fit": config, "horizon": horizon }))?;
    ensure_dir(out)?;

    let mut trace_writer = match &ctx.trace {
        Some(p) => Some((p.clone(), std::io::BufWriter::new(
            std::fs::File::create(p).map_err(|e| CliError::Io(format!("cannot write {}: {e}", p.display())))?,
        ))),
        None => None,
    };
    let mut trace_err = None;
    let result = manifest.timed("fit", || {
        fit_with_observer(&dataset, &config, |rec| {
            if let Some((_, w)) = trace_writer.as_mut() {
                let line = serde_json::to_string(rec).map_err(std::io::Error::from);
                if let Err(e) = line.and_then(|l| writeln!(w, "{l}")) {
                    trace_err.get_or_insert(e);
                }
            }
        })
        .map_err(|e| match e {
            burstlab::Error::Numerical { message, state_dump } => {
                let dump = state_dump.and_then(|d| {
                    let path = out.join("state_dump.json");
                    std::fs::write(&path, d).ok().map(|_| path)
                });
                CliError::Numerical { message, dump }
            }
            other => other.into(),
        })
    })?;
    if let Some((path, mut w)) = trace_writer {
        if let Some(e) = trace_err.or_else(|| w.flush().err()) {
            return Err(CliError::Io(format!("cannot write {}: {e}", path.display())));
        }
        manifest.output("trace", path);
    }

    let report = FitReport {
        beta: config.beta,
        k: config.k,
        converged: result.converged,
        iterations: result.iterations,
        final_objective: result.objective_trace.last().copied().unwrap_or(f64::NAN),
        objective_trace: result.objective_trace.clone(),
        alpha_trace: result.alpha_trace.clone(),
        gamma_trace: result.gamma_trace.clone(),
        wall_time_secs: result.wall_time_secs,
        config: config.clone(),
    };
    let written = manifest.timed("write", || {
        Ok(vec![
            ("A", write_matrix(&out.join("A.csv"), &result.params.excitation, &ids.assignments, &ids.students)?),
            ("U", write_matrix(&out.join("U.csv"), &result.params.base_rate, &ids.assignments, &ids.students)?),
            ("Z", write_matrix(&out.join("Z.csv"), result.cluster_state.matrix(), &ids.students, &ids.students)?),
            ("ids", write_json(&out.join("ids.json"), &ids)?),
            ("fit_report", write_json(&out.join("fit_report.json"), &report)?),
        ])
    })?;
    for (name, path) in written {
        manifest.output(name, path);
    }
    if !result.converged {
        log::warn!("fit stopped at max_iter = {} before reaching tol = {}", config.max_iter, config.tol);
    }
    manifest.finish(&out.join("manifest.json"))
}
