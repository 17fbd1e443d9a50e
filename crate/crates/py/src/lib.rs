//! Python access to scenario runs, log replay, the consistency update and
//! exported distance fields.

use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::PathBuf;

use htmpc_core::mapping::{self, ConsistencyParams, MeasurementPair};
use htmpc_core::scenario::{self, RunLog, ScenarioConfig};
use htmpc_core::Error;
use pyo3::exceptions::{PyIOError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

fn py_err(e: Error) -> PyErr {
    match e {
        Error::Config(m) => PyValueError::new_err(m),
        Error::Io(e) => PyIOError::new_err(e.to_string()),
        other => PyRuntimeError::new_err(other.to_string()),
    }
}

/// Result of one closed-loop run.
#[pyclass(module = "htmpc", frozen)]
struct Run {
    outcome: scenario::RunOutcome,
}

#[pymethods]
impl Run {
    /// `completed`, `collision`, `duration_cap` or `aborted`.
    #[getter]
    fn end_reason(&self) -> String {
        format!("{:?}", self.outcome.end).to_lowercase()
    }

    /// The metrics row as a dict keyed like `metrics.csv`.
    fn metrics<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyDict>> {
        let d = PyDict::new(py);
        for (k, v) in scenario::METRICS_COLUMNS.iter().zip(self.outcome.metrics.csv_fields()) {
            d.set_item(*k, v)?;
        }
        Ok(d)
    }

    #[getter]
    fn min_clearance(&self) -> f64 {
        self.outcome.metrics.min_clearance
    }

    #[getter]
    fn collision_free(&self) -> bool {
        self.outcome.metrics.collision_free
    }

    /// Wall-clock seconds of every controller solve.
    #[getter]
    fn solve_times(&self) -> Vec<f64> {
        self.outcome.solve_times.clone()
    }

    /// Run log records as a list of dicts.
    fn records<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        let text = serde_json::to_string(&self.outcome.log.records).map_err(|e| PyRuntimeError::new_err(e.to_string()))?;
        py.import("json")?.call_method1("loads", (text,))
    }

    /// Write the JSONL run log.
    fn write_log(&self, path: PathBuf) -> PyResult<()> {
        let mut w = BufWriter::new(File::create(path)?);
        self.outcome.log.write_jsonl(&mut w).map_err(py_err)
    }

    fn __repr__(&self) -> String {
        let m = &self.outcome.metrics;
        format!("Run({}, end={:?}, min_clearance={:.3})", m.trial_id, self.outcome.end, m.min_clearance)
    }
}

/// Run a scenario given as TOML text.
#[pyfunction]
#[pyo3(signature = (toml, seed = None))]
fn run_toml(py: Python<'_>, toml: &str, seed: Option<u64>) -> PyResult<Run> {
    let cfg = ScenarioConfig::from_toml(toml).map_err(py_err)?;
    let seed = seed.unwrap_or(cfg.seed);
    let outcome = py.detach(|| scenario::run_scenario(&cfg, seed)).map_err(py_err)?;
    Ok(Run { outcome })
}

/// Run a scenario file.
#[pyfunction]
#[pyo3(signature = (path, seed = None))]
fn run_file(py: Python<'_>, path: PathBuf, seed: Option<u64>) -> PyResult<Run> {
    let cfg = ScenarioConfig::load(&path).map_err(py_err)?;
    let seed = seed.unwrap_or(cfg.seed);
    let outcome = py.detach(|| scenario::run_scenario(&cfg, seed)).map_err(py_err)?;
    Ok(Run { outcome })
}

/// Recompute the metrics row of a JSONL run log.
#[pyfunction]
fn replay_metrics<'py>(py: Python<'py>, path: PathBuf) -> PyResult<Bound<'py, PyDict>> {
    let log = RunLog::read_jsonl(BufReader::new(File::open(path)?)).map_err(py_err)?;
    let row = scenario::compute_metrics(&log).map_err(py_err)?;
    let d = PyDict::new(py);
    for (k, v) in scenario::METRICS_COLUMNS.iter().zip(row.csv_fields()) {
        d.set_item(*k, v)?;
    }
    Ok(d)
}

/// One consistency update. Returns the projected `(mu, sigma, alpha, beta)`.
#[pyfunction]
#[pyo3(signature = (params, delta, semantic, tau = 0.05, delta_max = 1.0))]
fn bayes_update(params: (f64, f64, f64, f64), delta: f64, semantic: bool, tau: f64, delta_max: f64) -> (f64, f64, f64, f64) {
    let (mu, sigma, alpha, beta) = params;
    let p = ConsistencyParams { mu, sigma, alpha, beta };
    let (q, _) = mapping::bayes_update(&p, &MeasurementPair { delta, s: semantic }, tau, delta_max);
    (q.mu, q.sigma, q.alpha, q.beta)
}

/// Expected consistency `alpha / (alpha + beta)`.
#[pyfunction]
fn expected_consistency(params: (f64, f64, f64, f64)) -> f64 {
    let (mu, sigma, alpha, beta) = params;
    mapping::expected_consistency(&ConsistencyParams { mu, sigma, alpha, beta })
}

/// Read a `map.edf` export. Returns a dict with `dims`, `origin`,
/// `voxel_size`, `snapshot_version`, `time` and the flat `values` (x fastest).
#[pyfunction]
fn read_field<'py>(py: Python<'py>, path: PathBuf) -> PyResult<Bound<'py, PyDict>> {
    let f = mapping::read_field(&mut BufReader::new(File::open(path)?)).map_err(py_err)?;
    let d = PyDict::new(py);
    d.set_item("snapshot_version", f.snapshot_version)?;
    d.set_item("time", f.time)?;
    d.set_item("dims", f.grid.dims.to_vec())?;
    d.set_item("origin", f.grid.origin.as_slice().to_vec())?;
    d.set_item("voxel_size", f.grid.voxel_size)?;
    d.set_item("values", f.grid.values.clone())?;
    Ok(d)
}

#[pymodule]
fn htmpc(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Run>()?;
    m.add_function(wrap_pyfunction!(run_toml, m)?)?;
    m.add_function(wrap_pyfunction!(run_file, m)?)?;
    m.add_function(wrap_pyfunction!(replay_metrics, m)?)?;
    m.add_function(wrap_pyfunction!(bayes_update, m)?)?;
    m.add_function(wrap_pyfunction!(expected_consistency, m)?)?;
    m.add_function(wrap_pyfunction!(read_field, m)?)?;
    m.add("METRICS_COLUMNS", scenario::METRICS_COLUMNS.to_vec())?;
    Ok(())
}
