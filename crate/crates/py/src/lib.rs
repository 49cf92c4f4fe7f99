//! Python bindings: losses, metrics, preprocessing helpers and the
//! end-to-end pipeline.

use std::path::PathBuf;

use pyo3::exceptions::{PyArithmeticError, PyIOError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use wssl_core::eval::{self, ScoreSet};
use wssl_core::grid::{Dims, Grid};
use wssl_core::io::Audit;
use wssl_core::losses;
use wssl_core::phantom::{self, PhantomConfig, Split};
use wssl_core::pipeline::{self, run, ExperimentConfig, Mode};
use wssl_core::Error;

fn py_err(e: Error) -> PyErr {
    let msg = e.to_string();
    match e.root() {
        Error::Io { .. } | Error::Schema(_) => PyIOError::new_err(msg),
        Error::Numerical(_) => PyArithmeticError::new_err(msg),
        _ => PyValueError::new_err(msg),
    }
}

fn ok<T>(r: wssl_core::Result<T>) -> PyResult<T> {
    r.map_err(py_err)
}

fn json_err(e: serde_json::Error) -> PyErr {
    PyValueError::new_err(e.to_string())
}

/// Experiment configuration. Round-trips through JSON; the most common
/// fields are exposed as properties.
#[pyclass(name = "ExperimentConfig", module = "wssl", from_py_object)]
#[derive(Clone)]
pub struct PyConfig {
    pub inner: ExperimentConfig,
}

#[pymethods]
impl PyConfig {
    #[new]
    #[pyo3(signature = (json=None))]
    fn new(json: Option<&str>) -> PyResult<Self> {
        let inner = match json {
            Some(t) => ok(ExperimentConfig::from_json(t))?,
            None => ExperimentConfig::default(),
        };
        Ok(PyConfig { inner })
    }

    fn to_json(&self) -> PyResult<String> {
        ok(self.inner.to_json())
    }

    fn validate(&self) -> PyResult<()> {
        ok(self.inner.validate())
    }

    /// sha256 of the canonical JSON form.
    fn hash(&self) -> String {
        self.inner.hash()
    }

    #[getter]
    fn seed(&self) -> u64 {
        self.inner.seed
    }
    #[setter]
    fn set_seed(&mut self, v: u64) {
        self.inner.seed = v;
    }
    #[getter]
    fn full_fraction(&self) -> f64 {
        self.inner.full_fraction
    }
    #[setter]
    fn set_full_fraction(&mut self, v: f64) {
        self.inner.full_fraction = v;
    }
    #[getter]
    fn alpha(&self) -> f64 {
        self.inner.loss.alpha
    }
    #[setter]
    fn set_alpha(&mut self, v: f64) {
        self.inner.loss.alpha = v;
    }
    #[getter]
    fn beta(&self) -> f64 {
        self.inner.loss.beta
    }
    #[setter]
    fn set_beta(&mut self, v: f64) {
        self.inner.loss.beta = v;
    }
    #[getter]
    fn lambda_(&self) -> f64 {
        self.inner.loss.lambda
    }
    #[setter]
    fn set_lambda_(&mut self, v: f64) {
        self.inner.loss.lambda = v;
    }

    fn __repr__(&self) -> String {
        format!("ExperimentConfig(hash={})", &self.inner.hash()[..12])
    }
}

/// Per-record cancer scores with binary labels.
#[pyclass(name = "ScoreSet", module = "wssl", from_py_object)]
#[derive(Clone)]
pub struct PyScoreSet {
    pub inner: ScoreSet,
}

#[pymethods]
impl PyScoreSet {
    #[new]
    #[pyo3(signature = (scores, labels, ids=None))]
    fn new(scores: Vec<f64>, labels: Vec<u8>, ids: Option<Vec<String>>) -> PyResult<Self> {
        let inner = match ids {
            Some(ids) => ok(ScoreSet::new(ids, scores, labels))?,
            None => ok(ScoreSet::anonymous(scores, labels))?,
        };
        Ok(PyScoreSet { inner })
    }

    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        let inner: ScoreSet = serde_json::from_str(text).map_err(json_err)?;
        ok(inner.validate())?;
        Ok(PyScoreSet { inner })
    }

    fn to_json(&self) -> PyResult<String> {
        ok(self.inner.to_json())
    }

    fn auc(&self) -> PyResult<f64> {
        ok(eval::auc(&self.inner))
    }

    #[pyo3(signature = (cutoff=0.5))]
    fn sens_spec(&self, cutoff: f64) -> PyResult<(f64, f64)> {
        ok(eval::sens_spec(&self.inner, cutoff))
    }

    /// `(threshold, fpr, tpr)` triples from (0,0) to (1,1).
    fn roc(&self) -> PyResult<Vec<(f64, f64, f64)>> {
        Ok(ok(eval::roc_curve(&self.inner))?
            .into_iter()
            .map(|p| (p.threshold, p.fpr, p.tpr))
            .collect())
    }

    #[getter]
    fn scores(&self) -> Vec<f64> {
        self.inner.scores.clone()
    }
    #[getter]
    fn labels(&self) -> Vec<u8> {
        self.inner.labels.clone()
    }
    #[getter]
    fn ids(&self) -> Vec<String> {
        self.inner.ids.clone()
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }
}

#[pyfunction]
fn lr_schedule(step: usize, total: usize, warmup: usize, lr0: f64) -> f64 {
    pipeline::lr_schedule(step, total, warmup, lr0)
}

#[pyfunction]
#[pyo3(signature = (probs, mask, smooth=1e-5))]
fn dice_loss(probs: Vec<f64>, mask: Vec<u8>, smooth: f64) -> PyResult<f64> {
    ok(losses::dice_loss(&probs, &mask, smooth))
}

/// Returns `(value, d value / d logits)` for interleaved two-class logits.
#[pyfunction]
#[pyo3(signature = (logits, mask, smooth=1e-5))]
fn seg_loss(logits: Vec<f64>, mask: Vec<u8>, smooth: f64) -> PyResult<(f64, Vec<f64>)> {
    let o = ok(losses::seg_loss(&logits, &mask, smooth))?;
    Ok((o.value, o.grad))
}

#[pyfunction]
fn det_loss(logits: [f64; 2], diagnosis: u8) -> PyResult<(f64, Vec<f64>)> {
    let o = ok(losses::det_loss(&logits, diagnosis))?;
    Ok((o.value, o.grad))
}

#[pyfunction]
fn similarity(image: Vec<f64>, embeddings: Vec<f64>) -> PyResult<Vec<f64>> {
    ok(losses::similarity(&image, &embeddings))
}

#[pyfunction]
fn temperature_softmax(sims: Vec<f64>, t: f64) -> PyResult<Vec<f64>> {
    ok(losses::temperature_softmax(&sims, t))
}

/// Cross-entropy of temperature-scaled similarities against `label`.
#[pyfunction]
fn text_branch_loss(image: Vec<f64>, embeddings: Vec<f64>, label: usize, log_t: f64) -> PyResult<f64> {
    Ok(ok(losses::text_branch_loss(&image, &embeddings, label, log_t))?.value)
}

#[pyfunction]
fn dice_score(pred: Vec<u8>, truth: Vec<u8>) -> PyResult<f64> {
    ok(eval::dice_slices(&pred, &truth))
}

#[pyfunction]
fn auc(scores: Vec<f64>, labels: Vec<u8>) -> PyResult<f64> {
    ok(eval::auc(&ok(ScoreSet::anonymous(scores, labels))?))
}

/// Paired DeLong test; returns a dict with `auc_a`, `auc_b`, `z`, `p`, `var`.
#[pyfunction]
fn delong_test<'py>(py: Python<'py>, a: &PyScoreSet, b: &PyScoreSet) -> PyResult<Bound<'py, PyDict>> {
    let r = ok(eval::delong_test(&a.inner, &b.inner))?;
    let d = PyDict::new(py);
    d.set_item("auc_a", r.auc_a)?;
    d.set_item("auc_b", r.auc_b)?;
    d.set_item("z", r.z)?;
    d.set_item("p", r.p)?;
    d.set_item("var", r.var)?;
    Ok(d)
}

/// `mask` and `organ` are flat z-major arrays of `shape = (z, y, x)`.
#[pyfunction]
fn filter_pseudo_by_location(
    mask: Vec<u8>,
    organ: Vec<u8>,
    shape: (usize, usize, usize),
    location: u8,
) -> PyResult<Vec<u32>> {
    let d = Dims::new(shape.0, shape.1, shape.2);
    let m = ok(Grid::from_vec(d, mask))?;
    let o = ok(Grid::from_vec(d, organ))?;
    Ok(ok(pipeline::pseudo::filter_pseudo_by_location(&m, location, &o))?
        .data()
        .iter()
        .map(|&v| u32::from(v))
        .collect())
}

/// Write a phantom dataset; returns the number of records.
#[pyfunction]
#[pyo3(signature = (out_dir, n=200, seed=0, split=(0.6, 0.2, 0.2), phantom_json=None))]
fn generate_dataset(
    out_dir: PathBuf,
    n: usize,
    seed: u64,
    split: (f64, f64, f64),
    phantom_json: Option<&str>,
) -> PyResult<usize> {
    let cfg: PhantomConfig = match phantom_json {
        Some(t) => serde_json::from_str(t).map_err(json_err)?,
        None => PhantomConfig::default(),
    };
    let m = ok(phantom::generate_dataset(&cfg, n, [split.0, split.1, split.2], seed, &out_dir))?;
    Ok(m.records.len())
}

/// Names accepted by `run_baseline`.
#[pyfunction]
fn baseline_names() -> Vec<&'static str> {
    run::BASELINE_NAMES.to_vec()
}

/// Names of every training mode.
#[pyfunction]
fn modes() -> Vec<&'static str> {
    Mode::ALL.iter().map(|m| m.as_str()).collect()
}

fn config_or_default(cfg: Option<&PyConfig>) -> ExperimentConfig {
    cfg.map(|c| c.inner.clone()).unwrap_or_default()
}

/// Teacher, pseudo labels and text-guided student; returns `report.json`.
#[pyfunction]
#[pyo3(signature = (data_dir, run_dir, config=None))]
fn run_wssl(py: Python<'_>, data_dir: PathBuf, run_dir: PathBuf, config: Option<&PyConfig>) -> PyResult<String> {
    let cfg = config_or_default(config);
    let r = py.detach(|| run::run_wssl(&data_dir, &run_dir, cfg));
    ok(ok(r)?.to_json())
}

#[pyfunction]
#[pyo3(signature = (name, data_dir, run_dir, config=None))]
fn run_baseline(
    py: Python<'_>,
    name: &str,
    data_dir: PathBuf,
    run_dir: PathBuf,
    config: Option<&PyConfig>,
) -> PyResult<String> {
    let (mode, cfg) = ok(run::resolve_baseline(name, config_or_default(config)))?;
    let r = py.detach(|| run::run_mode(&data_dir, &run_dir, cfg, mode, None));
    ok(ok(r)?.to_json())
}

/// Evaluate a checkpoint on one split; returns `(report_json, scores)`.
#[pyfunction]
#[pyo3(signature = (checkpoint, data_dir, split="test"))]
fn evaluate_checkpoint(
    py: Python<'_>,
    checkpoint: PathBuf,
    data_dir: PathBuf,
    split: &str,
) -> PyResult<(String, PyScoreSet)> {
    let split: Split = ok(split.parse())?;
    let (report, preds) = py.detach(|| run::evaluate_checkpoint(&data_dir, &checkpoint, split, &Audit::disabled()))
        .map_err(py_err)?;
    let scores = preds
        .score_set()
        .ok_or_else(|| PyValueError::new_err("checkpoint has no detection output"))?;
    let scores = ok(scores)?;
    Ok((ok(report.to_json())?, PyScoreSet { inner: scores }))
}

#[pymodule]
pub fn wssl(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyConfig>()?;
    m.add_class::<PyScoreSet>()?;
    m.add_function(wrap_pyfunction!(lr_schedule, m)?)?;
    m.add_function(wrap_pyfunction!(dice_loss, m)?)?;
    m.add_function(wrap_pyfunction!(seg_loss, m)?)?;
    m.add_function(wrap_pyfunction!(det_loss, m)?)?;
    m.add_function(wrap_pyfunction!(similarity, m)?)?;
    m.add_function(wrap_pyfunction!(temperature_softmax, m)?)?;
    m.add_function(wrap_pyfunction!(text_branch_loss, m)?)?;
    m.add_function(wrap_pyfunction!(dice_score, m)?)?;
    m.add_function(wrap_pyfunction!(auc, m)?)?;
    m.add_function(wrap_pyfunction!(delong_test, m)?)?;
    m.add_function(wrap_pyfunction!(filter_pseudo_by_location, m)?)?;
    m.add_function(wrap_pyfunction!(generate_dataset, m)?)?;
    m.add_function(wrap_pyfunction!(baseline_names, m)?)?;
    m.add_function(wrap_pyfunction!(modes, m)?)?;
    m.add_function(wrap_pyfunction!(run_wssl, m)?)?;
    m.add_function(wrap_pyfunction!(run_baseline, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate_checkpoint, m)?)?;
    Ok(())
}
