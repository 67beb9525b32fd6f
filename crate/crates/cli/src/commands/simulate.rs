use std::path::Path;

use burstlab::events::write_events_csv;
use burstlab::simulate::{generate_dataset, split_dataset, split_rng, SyntheticSpec};
use burstlab::IdMap;

use super::Context;
use crate::error::{CliError, CliResult};
use crate::files::{ensure_dir, read_json, write_json, write_with};
use crate::manifest::RunManifest;

pub fn run(ctx: &Context, spec_path: Option<&Path>, out: &Path) -> CliResult<RunManifest> {
    let mut manifest = RunManifest::new("simulate");
    let mut spec: SyntheticSpec = match spec_path {
        Some(p) => {
            manifest.input("spec", p);
            read_json(p)?
        }
        None => SyntheticSpec::default(),
    };
    if let Some(seed) = ctx.seed {
        spec.seed = seed;
    }
    spec.validate().map_err(|e| CliError::Input(format!("invalid spec: {e}")))?;
    manifest.seed = Some(spec.seed);
    manifest.threads = ctx.threads;
    manifest.config(&spec)?;
    ensure_dir(out)?;

    let (dataset, truth) = manifest.timed("generate", || Ok(generate_dataset(&spec)?))?;
    let ids = truth.ids.clone().unwrap_or_else(|| IdMap::synthetic(spec.n_assignments, spec.n_students));
    let split = manifest.timed("split", || {
        Ok(split_dataset(&dataset, spec.unseen_ratio, spec.train_fraction, &mut split_rng(spec.seed))?)
    })?;
    let split_manifest = split.manifest(&dataset, &ids, spec.unseen_ratio, spec.train_fraction)?;

    let written = manifest.timed("write", || {
        let mut files = vec![
            ("events", write_with(&out.join("events.csv"), |w| write_events_csv(w, &dataset, &ids))?),
            ("train", write_with(&out.join("train.csv"), |w| write_events_csv(w, &split.train, &ids))?),
        ];
        files.push((
            "test",
            write_with(&out.join("test.csv"), |w| -> csv::Result<()> {
                let mut wtr = csv::Writer::from_writer(w);
                wtr.write_record(["assignment_id", "student_id", "timestamp_hours"])?;
                for (p, times) in &split.seen_test {
                    for t in times {
                        wtr.write_record([&ids.assignments[p.assignment], &ids.students[p.student], &t.to_string()])?;
                    }
                }
                wtr.flush()?;
                Ok(())
            })?,
        ));
        files.push(("split", write_json(&out.join("split.json"), &split_manifest)?));
        files.push(("ground_truth", write_json(&out.join("ground_truth.json"), &truth)?));
        files.push(("ids", write_json(&out.join("ids.json"), &ids)?));
        Ok(files)
    })?;
    for (name, path) in written {
        manifest.output(name, path);
    }
    log::info!(
        "simulated {} pairs, {} events; {} unseen pairs",
        dataset.n_observed(),
        dataset.n_events(),
        split.unseen_pairs.len()
    );
    manifest.finish(&out.join("manifest.json"))
}
