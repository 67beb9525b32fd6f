//! Python bindings. Matrices cross the boundary as lists of rows; configs and
//! specs are keyword arguments that go through the same serde definitions the
//! CLI reads from JSON.

use std::fs::File;
use std::io::BufReader;

use burstlab::evaluate::{self, PredictionMode};
use burstlab::events::{self, LoadOptions};
use burstlab::simulate::{self, SyntheticSpec};
use burstlab::{linops, likelihood, optimizer, ClusterState, Error, FitConfig, HawkesParams, IdMap, PairIndex};
use nalgebra::DMatrix;
use pyo3::exceptions::{PyArithmeticError, PyIOError, PyKeyError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;
use serde::de::DeserializeOwned;

fn to_py(e: Error) -> PyErr {
    match e {
        Error::Io(_) => PyIOError::new_err(e.to_string()),
        Error::Numerical { .. } => PyArithmeticError::new_err(e.to_string()),
        other => PyValueError::new_err(other.to_string()),
    }
}

type Rows = Vec<Vec<f64>>;

fn to_matrix(rows: &Rows) -> PyResult<DMatrix<f64>> {
    let n = rows.len();
    let m = rows.first().map_or(0, Vec::len);
    if n == 0 || m == 0 {
        return Err(PyValueError::new_err("matrix must be non-empty"));
    }
    if rows.iter().any(|r| r.len() != m) {
        return Err(PyValueError::new_err("ragged matrix rows"));
    }
    Ok(DMatrix::from_fn(n, m, |i, j| rows[i][j]))
}

fn to_rows(m: &DMatrix<f64>) -> Rows {
    (0..m.nrows()).map(|i| m.row(i).iter().copied().collect()).collect()
}

fn from_kwargs<T: DeserializeOwned + Default>(py: Python<'_>, kwargs: Option<&Bound<'_, PyDict>>) -> PyResult<T> {
    let Some(kwargs) = kwargs else {
        return Ok(T::default());
    };
    let text: String = py.import("json")?.call_method1("dumps", (kwargs,))?.extract()?;
    serde_json::from_str(&text).map_err(|e| PyValueError::new_err(e.to_string()))
}

/// Event sequences on an assignment × student grid, with their string ids.
#[pyclass(name = "EventDataset", module = "burstlab_py")]
struct PyEventDataset {
    inner: events::EventDataset,
    ids: IdMap,
}

#[pymethods]
impl PyEventDataset {
    /// Reads `assignment_id,student_id,timestamp_hours` rows.
    #[staticmethod]
    #[pyo3(signature = (path, horizon = None))]
    fn from_csv(path: &str, horizon: Option<f64>) -> PyResult<Self> {
        let file = File::open(path).map_err(|e| PyIOError::new_err(format!("{path}: {e}")))?;
        let opts = LoadOptions { horizon, ..Default::default() };
        let (inner, ids) = events::read_events_csv(BufReader::new(file), opts).map_err(to_py)?;
        Ok(Self { inner, ids })
    }

    /// Builds a dataset from `{(assignment_id, student_id): [times]}`.
    #[staticmethod]
    #[pyo3(signature = (sequences, horizon = None))]
    fn from_dict(sequences: std::collections::BTreeMap<(String, String), Vec<f64>>, horizon: Option<f64>) -> PyResult<Self> {
        let mut assignments: Vec<String> = sequences.keys().map(|(a, _)| a.clone()).collect();
        let mut students: Vec<String> = sequences.keys().map(|(_, s)| s.clone()).collect();
        assignments.sort();
        assignments.dedup();
        students.sort();
        students.dedup();
        let ids = IdMap { assignments, students };
        let mut seqs = Vec::with_capacity(sequences.len());
        for ((a, s), times) in sequences {
            let pair = PairIndex::new(ids.assignment_index(&a).unwrap(), ids.student_index(&s).unwrap());
            let seq = match horizon {
                Some(h) => events::EventSequence::with_horizon(pair, times, h),
                None => events::EventSequence::new(pair, times),
            };
            seqs.push(seq.map_err(to_py)?);
        }
        let inner = events::EventDataset::new(ids.assignments.len(), ids.students.len(), seqs).map_err(to_py)?;
        Ok(Self { inner, ids })
    }

    #[getter]
    fn shape(&self) -> (usize, usize) {
        self.inner.shape()
    }

    #[getter]
    fn assignment_ids(&self) -> Vec<String> {
        self.ids.assignments.clone()
    }

    #[getter]
    fn student_ids(&self) -> Vec<String> {
        self.ids.students.clone()
    }

    fn n_events(&self) -> usize {
        self.inner.n_events()
    }

    fn n_observed(&self) -> usize {
        self.inner.n_observed()
    }

    /// Event times of one pair, or None if it is unobserved.
    fn times(&self, assignment_id: &str, student_id: &str) -> PyResult<Option<Vec<f64>>> {
        let pair = self.pair(assignment_id, student_id)?;
        Ok(self.inner.get(pair).map(|s| s.times().to_vec()))
    }

    fn horizon(&self, assignment_id: &str, student_id: &str) -> PyResult<Option<f64>> {
        let pair = self.pair(assignment_id, student_id)?;
        Ok(self.inner.get(pair).map(|s| s.horizon()))
    }

    fn to_csv(&self, path: &str) -> PyResult<()> {
        let file = File::create(path).map_err(|e| PyIOError::new_err(format!("{path}: {e}")))?;
        events::write_events_csv(file, &self.inner, &self.ids).map_err(to_py)
    }

    fn __repr__(&self) -> String {
        let (n, m) = self.inner.shape();
        format!("EventDataset({n}x{m}, {} pairs, {} events)", self.inner.n_observed(), self.inner.n_events())
    }
}

impl PyEventDataset {
    fn pair(&self, a: &str, s: &str) -> PyResult<PairIndex> {
        let i = self.ids.assignment_index(a).ok_or_else(|| PyKeyError::new_err(format!("unknown assignment {a}")))?;
        let j = self.ids.student_index(s).ok_or_else(|| PyKeyError::new_err(format!("unknown student {s}")))?;
        Ok(PairIndex::new(i, j))
    }
}

/// Fitting options; keyword names match the JSON config fields.
#[pyclass(name = "FitConfig", module = "burstlab_py")]
struct PyFitConfig {
    inner: FitConfig,
}

#[pymethods]
impl PyFitConfig {
    #[new]
    #[pyo3(signature = (**kwargs))]
    fn new(py: Python<'_>, kwargs: Option<&Bound<'_, PyDict>>) -> PyResult<Self> {
        Ok(Self { inner: from_kwargs(py, kwargs)? })
    }

    fn to_json(&self) -> String {
        serde_json::to_string(&self.inner).expect("config serializes")
    }

    fn __repr__(&self) -> String {
        format!("FitConfig({})", self.to_json())
    }
}

#[pyclass(name = "FitResult", module = "burstlab_py", get_all)]
struct PyFitResult {
    excitation: Rows,
    base_rate: Rows,
    cluster_state: Rows,
    beta: f64,
    objective_trace: Vec<f64>,
    alpha_trace: Vec<f64>,
    gamma_trace: Vec<f64>,
    iterations: usize,
    converged: bool,
    wall_time_secs: f64,
}

#[pymethods]
impl PyFitResult {
    fn __repr__(&self) -> String {
        format!(
            "FitResult(iterations={}, converged={}, objective={:.6e})",
            self.iterations,
            self.converged,
            self.objective_trace.last().copied().unwrap_or(f64::NAN)
        )
    }
}

#[pyfunction]
#[pyo3(signature = (dataset, config = None))]
fn fit(py: Python<'_>, dataset: &PyEventDataset, config: Option<&PyFitConfig>) -> PyResult<PyFitResult> {
    let cfg = config.map(|c| c.inner.clone()).unwrap_or_default();
    cfg.validate(dataset.inner.n_students()).map_err(to_py)?;
    let r = py.detach(|| optimizer::fit(&dataset.inner, &cfg)).map_err(to_py)?;
    Ok(PyFitResult {
        excitation: to_rows(&r.params.excitation),
        base_rate: to_rows(&r.params.base_rate),
        cluster_state: to_rows(r.cluster_state.matrix()),
        beta: r.params.decay,
        objective_trace: r.objective_trace,
        alpha_trace: r.alpha_trace,
        gamma_trace: r.gamma_trace,
        iterations: r.iterations,
        converged: r.converged,
        wall_time_secs: r.wall_time_secs,
    })
}

/// Smooth negative log-likelihood of `(A, U)` at decay `beta`.
#[pyfunction]
fn smooth_nll(dataset: &PyEventDataset, excitation: Rows, base_rate: Rows, beta: f64) -> PyResult<f64> {
    let params = HawkesParams::new(to_matrix(&excitation)?, to_matrix(&base_rate)?, beta).map_err(to_py)?;
    let cache = likelihood::LikelihoodCache::build(&dataset.inner, beta).map_err(to_py)?;
    likelihood::smooth_nll(&params, &dataset.inner, &cache).map_err(to_py)
}

/// Generates a synthetic dataset. Returns `(dataset, truth)` where truth is a
/// dict with `excitation`, `base_rate` and `cluster_labels`.
#[pyfunction]
#[pyo3(signature = (**kwargs))]
fn simulate_dataset<'py>(
    py: Python<'py>,
    kwargs: Option<&Bound<'py, PyDict>>,
) -> PyResult<(PyEventDataset, Bound<'py, PyDict>)> {
    let spec: SyntheticSpec = from_kwargs(py, kwargs)?;
    let (inner, truth) = py.detach(|| simulate::generate_dataset(&spec)).map_err(to_py)?;
    let ids = truth.ids.clone().unwrap_or_else(|| IdMap::synthetic(spec.n_assignments, spec.n_students));
    let out = PyDict::new(py);
    out.set_item("excitation", to_rows(&truth.excitation))?;
    out.set_item("base_rate", to_rows(&truth.base_rate))?;
    out.set_item("cluster_labels", truth.cluster_labels.clone())?;
    Ok((PyEventDataset { inner, ids }, out))
}

/// Expected event count in `(t0, t1]` for one pair given its history.
#[pyfunction]
#[pyo3(signature = (excitation, base_rate, beta, history, history_horizon, t0, t1, mode = "history_only"))]
#[allow(clippy::too_many_arguments)]
fn expected_count(
    excitation: f64,
    base_rate: f64,
    beta: f64,
    history: Vec<f64>,
    history_horizon: f64,
    t0: f64,
    t1: f64,
    mode: &str,
) -> PyResult<f64> {
    let mode: PredictionMode = mode.parse().map_err(to_py)?;
    let params = HawkesParams::new(
        DMatrix::from_element(1, 1, excitation),
        DMatrix::from_element(1, 1, base_rate),
        beta,
    )
    .map_err(to_py)?;
    evaluate::expected_count(&params, PairIndex::new(0, 0), &history, history_horizon, (t0, t1), mode).map_err(to_py)
}

/// Cluster labels read off a relaxed cluster matrix.
#[pyfunction]
fn extract_clusters(z: Rows, k: usize) -> PyResult<Vec<usize>> {
    let state = ClusterState::new(to_matrix(&z)?, k).map_err(to_py)?;
    evaluate::extract_clusters(&state, k).map_err(to_py)
}

#[pyfunction]
fn adjusted_rand_index(a: Vec<usize>, b: Vec<usize>) -> PyResult<f64> {
    evaluate::adjusted_rand_index(&a, &b).map_err(to_py)
}

#[pyfunction]
fn spearman(x: Vec<f64>, y: Vec<f64>) -> Option<f64> {
    evaluate::spearman(&x, &y)
}

/// `(n_gaps, mean, cv, lag1)` of the gaps between sorted event times.
#[pyfunction]
fn interarrival_stats(times: Vec<f64>) -> PyResult<(usize, f64, f64, Option<f64>)> {
    let s = evaluate::interarrival_stats(&times).map_err(to_py)?;
    Ok((s.n_gaps, s.mean, s.coefficient_of_variation, s.lag1_autocorrelation))
}

#[pyfunction]
fn svt(x: Rows, threshold: f64) -> PyResult<Rows> {
    Ok(to_rows(&linops::svt(&to_matrix(&x)?, threshold).map_err(to_py)?))
}

#[pyfunction]
fn capped_simplex_project(v: Vec<f64>, k: f64) -> PyResult<Vec<f64>> {
    linops::capped_simplex_project(&v, k).map_err(to_py)
}

#[pyfunction]
fn project_z(x: Rows, k: usize) -> PyResult<Rows> {
    Ok(to_rows(linops::project_z(&to_matrix(&x)?, k).map_err(to_py)?.matrix()))
}

#[pymodule]
fn burstlab_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyEventDataset>()?;
    m.add_class::<PyFitConfig>()?;
    m.add_class::<PyFitResult>()?;
    m.add_function(wrap_pyfunction!(fit, m)?)?;
    m.add_function(wrap_pyfunction!(smooth_nll, m)?)?;
    m.add_function(wrap_pyfunction!(simulate_dataset, m)?)?;
    m.add_function(wrap_pyfunction!(expected_count, m)?)?;
    m.add_function(wrap_pyfunction!(extract_clusters, m)?)?;
    m.add_function(wrap_pyfunction!(adjusted_rand_index, m)?)?;
    m.add_function(wrap_pyfunction!(spearman, m)?)?;
    m.add_function(wrap_pyfunction!(interarrival_stats, m)?)?;
    m.add_function(wrap_pyfunction!(svt, m)?)?;
    m.add_function(wrap_pyfunction!(capped_simplex_project, m)?)?;
    m.add_function(wrap_pyfunction!(project_z, m)?)?;
    Ok(())
}
