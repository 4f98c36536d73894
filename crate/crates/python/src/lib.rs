//! Python bindings: configs, the staged pipeline, in-memory experiments,
//! saved rankers and the NDCG and coherency primitives.

use std::path::PathBuf;

use pyo3::exceptions::{PyIOError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use shoprank::eval::{self, Gain};
use shoprank::pipeline::{self, Experiment, ExperimentConfig, Outcome, Stage};
use shoprank::rank::RankModel;
use shoprank::segment;
use shoprank::Error;

fn to_py(e: Error) -> PyErr {
    let msg = e.to_string();
    let mut root = &e;
    while let Error::Stage { source, .. } = root {
        root = source;
    }
    match root {
        Error::Io { .. } | Error::MissingArtifact { .. } => PyIOError::new_err(msg),
        Error::InvalidConfig(_)
        | Error::InvalidInput(_)
        | Error::Parse { .. }
        | Error::DimensionMismatch { .. }
        | Error::MaskMismatch { .. } => PyValueError::new_err(msg),
        _ => PyRuntimeError::new_err(msg),
    }
}

fn parse_gain(gain: &str) -> PyResult<Gain> {
    match gain {
        "exponential" => Ok(Gain::Exponential),
        "literal" => Ok(Gain::Literal),
        g => Err(PyValueError::new_err(format!("unknown gain `{g}`"))),
    }
}

/// Experiment configuration; round-trips through TOML.
#[pyclass(name = "Config", module = "shoprank_py")]
#[derive(Clone)]
struct PyConfig {
    inner: ExperimentConfig,
}

#[pymethods]
impl PyConfig {
    #[new]
    #[pyo3(signature = (toml=None))]
    fn new(toml: Option<&str>) -> PyResult<Self> {
        let inner = match toml {
            Some(text) => ExperimentConfig::from_toml(text).map_err(to_py)?,
            None => ExperimentConfig::default(),
        };
        Ok(Self { inner })
    }

    /// The small config used by smoke tests.
    #[staticmethod]
    fn smoke() -> Self {
        Self {
            inner: ExperimentConfig::smoke(),
        }
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(Self {
            inner: ExperimentConfig::load(path).map_err(to_py)?,
        })
    }

    fn to_toml(&self) -> PyResult<String> {
        self.inner.to_toml().map_err(to_py)
    }

    #[getter]
    fn seed(&self) -> u64 {
        self.inner.seed
    }

    #[setter]
    fn set_seed(&mut self, seed: u64) {
        self.inner.seed = seed;
    }

    /// Model ids in training order.
    fn model_ids(&self) -> Vec<String> {
        self.inner.rank.models.iter().map(|m| m.id()).collect()
    }

    fn __repr__(&self) -> String {
        format!("Config(seed={}, models={})", self.inner.seed, self.inner.rank.models.len())
    }
}

/// Runs every stage into `out` and returns the manifest's artifact hashes.
#[pyfunction]
fn run_pipeline(py: Python<'_>, config: &PyConfig, out: PathBuf) -> PyResult<Py<PyDict>> {
    let cfg = config.inner.clone();
    let manifest = py
        .allow_threads(|| pipeline::run_pipeline(&cfg, &out))
        .map_err(to_py)?;
    let d = PyDict::new_bound(py);
    for (k, v) in &manifest.artifacts {
        d.set_item(k, v)?;
    }
    Ok(d.unbind())
}

/// Runs one stage (e.g. `"embed"`, `"segment-train"`); returns `"ran"` or `"cached"`.
#[pyfunction]
fn run_stage(py: Python<'_>, config: &PyConfig, out: PathBuf, stage: &str) -> PyResult<&'static str> {
    let stage: Stage = stage.parse().map_err(to_py)?;
    let cfg = config.inner.clone();
    let outcome = py
        .allow_threads(|| pipeline::run_stage(&cfg, &out, stage))
        .map_err(to_py)?;
    Ok(match outcome {
        Outcome::Ran => "ran",
        Outcome::Cached => "cached",
    })
}

/// A completed in-memory run.
#[pyclass(name = "Experiment", module = "shoprank_py", unsendable)]
struct PyExperiment {
    inner: Experiment,
}

#[pymethods]
impl PyExperiment {
    #[new]
    fn new(py: Python<'_>, config: &PyConfig) -> PyResult<Self> {
        let cfg = config.inner.clone();
        let inner = py.allow_threads(|| Experiment::run(cfg)).map_err(to_py)?;
        Ok(Self { inner })
    }

    /// One dict per (model, mask, segment, target) evaluation.
    fn summary(&self, py: Python<'_>) -> PyResult<Vec<Py<PyDict>>> {
        self.inner
            .summary
            .entries
            .iter()
            .map(|e| {
                let d = PyDict::new_bound(py);
                d.set_item("model", &e.model)?;
                d.set_item("mask", &e.mask)?;
                d.set_item("segment", &e.segment)?;
                d.set_item("target", &e.target)?;
                d.set_item("mean_ndcg", e.mean_ndcg)?;
                d.set_item("queries", e.queries)?;
                d.set_item("ci", (e.ci_low, e.ci_high))?;
                Ok(d.unbind())
            })
            .collect()
    }

    /// Mean NDCG for one summary entry, or `None`.
    fn ndcg(&self, model: &str, mask: &str, segment: &str, target: &str) -> Option<f64> {
        self.inner.summary.get(model, mask, segment, target).map(|e| e.mean_ndcg)
    }

    /// Query segments as predicted downstream.
    fn segments(&self) -> Vec<(String, String)> {
        self.inner
            .segmentation
            .segments
            .iter()
            .map(|(q, s)| (q.clone(), s.to_string()))
            .collect()
    }

    fn reports_text(&self) -> String {
        self.inner.reports.to_text()
    }

    fn reports_json(&self) -> PyResult<String> {
        serde_json::to_string(&self.inner.reports).map_err(|e| PyRuntimeError::new_err(e.to_string()))
    }
}

/// A saved ranker (`models/<id>.model`).
#[pyclass(name = "Model", module = "shoprank_py")]
struct PyModel {
    inner: RankModel,
}

#[pymethods]
impl PyModel {
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(Self {
            inner: RankModel::load(path).map_err(to_py)?,
        })
    }

    #[getter]
    fn kind(&self) -> &'static str {
        self.inner.kind.as_str()
    }

    #[getter]
    fn mask(&self) -> String {
        self.inner.mask.code()
    }

    #[getter]
    fn target(&self) -> String {
        self.inner.target.clone()
    }

    #[getter]
    fn n_features(&self) -> usize {
        self.inner.n_features
    }

    /// Scores rows already assembled under the model's mask.
    fn predict(&self, rows: Vec<Vec<f64>>) -> PyResult<Vec<f64>> {
        rows.iter()
            .map(|r| {
                if r.len() != self.inner.n_features {
                    return Err(PyValueError::new_err(format!(
                        "row has {} features, model expects {}",
                        r.len(),
                        self.inner.n_features
                    )));
                }
                Ok(self.inner.predict_row(r))
            })
            .collect()
    }
}

/// NDCG@k of grades listed in ranked order; `None` when the ideal DCG is zero.
#[pyfunction]
#[pyo3(signature = (ranked_grades, k=48, gain="exponential"))]
fn ndcg(ranked_grades: Vec<u8>, k: usize, gain: &str) -> PyResult<Option<f64>> {
    Ok(eval::ndcg(&ranked_grades, k, parse_gain(gain)?))
}

#[pyfunction]
#[pyo3(signature = (ranked_grades, k=48, gain="exponential"))]
fn dcg(ranked_grades: Vec<u8>, k: usize, gain: &str) -> PyResult<f64> {
    Ok(eval::dcg(&ranked_grades, k, parse_gain(gain)?))
}

/// Per-query grades `ceil(bins * m / max m)`; zero metrics get 0.
#[pyfunction]
#[pyo3(signature = (metrics, bins=5))]
fn bin_grades(metrics: Vec<f64>, bins: u8) -> PyResult<Option<Vec<u8>>> {
    eval::bin_grades(&metrics, bins).map_err(to_py)
}

/// Median dot product of unit vectors with their mean.
#[pyfunction]
fn coherency_score(vectors: Vec<Vec<f64>>) -> PyResult<f64> {
    Ok(segment::coherency_score(&vectors).map_err(to_py)?.score)
}

#[pymodule]
fn shoprank_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyConfig>()?;
    m.add_class::<PyExperiment>()?;
    m.add_class::<PyModel>()?;
    m.add_function(wrap_pyfunction!(run_pipeline, m)?)?;
    m.add_function(wrap_pyfunction!(run_stage, m)?)?;
    m.add_function(wrap_pyfunction!(ndcg, m)?)?;
    m.add_function(wrap_pyfunction!(dcg, m)?)?;
    m.add_function(wrap_pyfunction!(bin_grades, m)?)?;
    m.add_function(wrap_pyfunction!(coherency_score, m)?)?;
    Ok(())
}
