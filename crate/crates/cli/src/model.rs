//! Reading and writing the parameter directory produced by `fit`.

use std::path::Path;

use burstlab::{ClusterState, FitConfig, HawkesParams, IdMap};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};
use crate::files::{read_json, read_matrix};
use crate::manifest::RunManifest;

/// Summary written as `fit_report.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub beta: f64,
    pub k: usize,
    pub converged: bool,
    pub iterations: usize,
    pub final_objective: f64,
    pub objective_trace: Vec<f64>,
    pub alpha_trace: Vec<f64>,
    pub gamma_trace: Vec<f64>,
    pub wall_time_secs: f64,
    pub config: FitConfig,
}

/// A fitted model loaded back from disk.
#[derive(Debug, Clone)]
pub struct FittedModel {
    pub params: HawkesParams,
    pub cluster_state: Option<ClusterState>,
    pub ids: IdMap,
    pub report: FitReport,
    /// Manifest of the fit run, when present.
    pub manifest: Option<RunManifest>,
}

impl FittedModel {
    pub fn load(dir: &Path) -> CliResult<Self> {
        let ids: IdMap = read_json(&dir.join("ids.json"))?;
        let report: FitReport = read_json(&dir.join("fit_report.json"))?;
        let a = read_matrix(&dir.join("A.csv"))?;
        let u = read_matrix(&dir.join("U.csv"))?;
        for (name, m) in [("A.csv", &a), ("U.csv", &u)] {
            if m.row_ids != ids.assignments || m.col_ids != ids.students {
                return Err(CliError::Input(format!(
                    "{}: row/column ids do not match ids.json",
                    dir.join(name).display()
                )));
            }
        }
        let params = HawkesParams::new(a.values, u.values, report.beta)
            .map_err(|e| CliError::input(dir.display(), e))?;
        let z_path = dir.join("Z.csv");
        let cluster_state = if z_path.exists() {
            let z = read_matrix(&z_path)?;
            if z.row_ids != ids.students || z.col_ids != ids.students {
                return Err(CliError::Input(format!("{}: ids do not match ids.json", z_path.display())));
            }
            Some(ClusterState::new(z.values, report.k).map_err(|e| CliError::input(z_path.display(), e))?)
        } else {
            None
        };
        let manifest_path = dir.join("manifest.json");
        let manifest = if manifest_path.exists() { Some(read_json(&manifest_path)?) } else { None };
        Ok(Self { params, cluster_state, ids, report, manifest })
    }

    /// Dense index of a pair given its external ids.
    pub fn pair(&self, assignment_id: &str, student_id: &str) -> Option<burstlab::PairIndex> {
        Some(burstlab::PairIndex::new(
            self.ids.assignment_index(assignment_id)?,
            self.ids.student_index(student_id)?,
        ))
    }
}
