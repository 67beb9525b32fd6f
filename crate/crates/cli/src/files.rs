//! File helpers that attach paths to errors and pick the right exit class:
//! reading problems are input errors, writing problems are I/O errors.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use burstlab::events::{read_events_csv, read_events_csv_with_ids, LoadOptions};
use burstlab::matrix_io::{read_matrix_csv, write_matrix_csv, LabeledMatrix};
use burstlab::{EventDataset, IdMap};
use nalgebra::DMatrix;
use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::{CliError, CliResult};

pub fn open(path: &Path) -> CliResult<BufReader<File>> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|e| CliError::input(format!("cannot open {}", path.display()), e))
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> CliResult<T> {
    serde_json::from_reader(open(path)?).map_err(|e| CliError::input(path.display(), e))
}

pub fn read_events(path: &Path, opts: LoadOptions, ids: Option<&IdMap>) -> CliResult<(EventDataset, IdMap)> {
    let reader = open(path)?;
    let loaded = match ids {
        Some(ids) => read_events_csv_with_ids(reader, opts, ids).map(|d| (d, ids.clone())),
        None => read_events_csv(reader, opts),
    };
    loaded.map_err(|e| CliError::input(path.display(), e))
}

pub fn read_matrix(path: &Path) -> CliResult<LabeledMatrix> {
    read_matrix_csv(open(path)?).map_err(|e| CliError::input(path.display(), e))
}

pub fn ensure_dir(dir: &Path) -> CliResult<()> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::Io(format!("cannot create {}: {e}", dir.display())))
}

/// Creates `path` and hands a buffered writer to `body`; any failure is an I/O error.
pub fn write_with<E: std::fmt::Display>(
    path: &Path,
    body: impl FnOnce(&mut BufWriter<File>) -> Result<(), E>,
) -> CliResult<PathBuf> {
    let io_err = |e: &dyn std::fmt::Display| CliError::Io(format!("cannot write {}: {e}", path.display()));
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        ensure_dir(parent)?;
    }
    let file = File::create(path).map_err(|e| io_err(&e))?;
    let mut w = BufWriter::new(file);
    body(&mut w).map_err(|e| io_err(&e))?;
    w.flush().map_err(|e| io_err(&e))?;
    Ok(path.to_path_buf())
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> CliResult<PathBuf> {
    write_with(path, |w| {
        serde_json::to_writer_pretty(&mut *w, value)?;
        w.write_all(b"\n").map_err(serde_json::Error::io)
    })
}

pub fn write_matrix(path: &Path, values: &DMatrix<f64>, rows: &[String], cols: &[String]) -> CliResult<PathBuf> {
    write_with(path, |w| write_matrix_csv(w, values, rows, cols))
}
