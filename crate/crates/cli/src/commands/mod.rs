pub mod diagnose;
pub mod evaluate;
pub mod fit;
pub mod predict;
pub mod simulate;

use std::path::PathBuf;

use burstlab::evaluate::PredictionMode;

/// Options shared by every subcommand.
#[derive(Debug, Clone, Default)]
pub struct Context {
    pub seed: Option<u64>,
    pub trace: Option<PathBuf>,
    pub threads: Option<usize>,
    pub mode: PredictionMode,
}
