//! Python bindings for the `watt` commands and the pseudo-label algebra.
//!
//! Commands take a TOML config string (defaults when omitted) and return
//! plain dicts and lists; the files they write are the same as the CLI's.

use std::path::PathBuf;

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use serde::Serialize;

use watt_core::adapt::{bundle_from_embeddings, tta_loss as tta_loss_of};
use watt_core::autodiff::Tensor;
use watt_core::commands::{cmd_adapt, cmd_landscape, cmd_pretrain, cmd_sweep, cmd_verify};
use watt_core::config::RunConfig;
use watt_core::WattError;

fn err(e: WattError) -> PyErr {
    match e {
        WattError::Config { .. } | WattError::InvalidArgument(_) | WattError::Shape { .. } => {
            PyValueError::new_err(e.to_string())
        }
        _ => PyRuntimeError::new_err(e.to_string()),
    }
}

fn to_py<'py>(py: Python<'py>, v: &impl Serialize) -> PyResult<Bound<'py, PyAny>> {
    let text = serde_json::to_string(v).map_err(|e| PyRuntimeError::new_err(e.to_string()))?;
    py.import("json")?.call_method1("loads", (text,))
}

fn load(config: Option<&str>, output_dir: Option<PathBuf>) -> PyResult<RunConfig> {
    let mut c = match config {
        Some(text) => RunConfig::from_toml_str(text).map_err(err)?,
        None => RunConfig::default(),
    };
    if let Some(dir) = output_dir {
        c.output_dir = dir;
    }
    c.validate().map_err(err)?;
    Ok(c)
}

fn matrix(rows: Vec<Vec<f64>>, what: &str) -> PyResult<Tensor> {
    if rows.is_empty() || rows[0].is_empty() || rows.iter().any(|r| r.len() != rows[0].len()) {
        return Err(PyValueError::new_err(format!(
            "{what} must be a non-empty rectangular list of rows"
        )));
    }
    Tensor::from_rows(&rows).map_err(err)
}

fn nested(t: &Tensor) -> Vec<Vec<f64>> {
    (0..t.rows()).map(|i| t.row(i).to_vec()).collect()
}

#[pyfunction]
fn version() -> &'static str {
    watt_core::VERSION
}

/// The default run config as TOML.
#[pyfunction]
fn default_config() -> PyResult<String> {
    RunConfig::default().to_toml_string().map_err(err)
}

/// Pretrains and writes the checkpoint; returns its path.
#[pyfunction]
#[pyo3(signature = (config=None, output_dir=None))]
fn pretrain(py: Python<'_>, config: Option<&str>, output_dir: Option<PathBuf>) -> PyResult<String> {
    let c = load(config, output_dir)?;
    let path = py.detach(|| cmd_pretrain(&c)).map_err(err)?;
    Ok(path.display().to_string())
}

/// Zero-shot and adapted rows per seed, plus the template table if configured.
#[pyfunction]
#[pyo3(signature = (config=None, output_dir=None))]
fn adapt<'py>(py: Python<'py>, config: Option<&str>, output_dir: Option<PathBuf>) -> PyResult<Bound<'py, PyAny>> {
    let c = load(config, output_dir)?;
    let out = py.detach(|| cmd_adapt(&c)).map_err(err)?;
    let rows = to_py(py, &out.rows)?;
    let table = to_py(py, &out.table)?;
    let d = pyo3::types::PyDict::new(py);
    d.set_item("rows", rows)?;
    d.set_item("table", table)?;
    Ok(d.into_any())
}

/// One row per grid point, shift and seed.
#[pyfunction]
#[pyo3(signature = (config=None, output_dir=None))]
fn sweep<'py>(py: Python<'py>, config: Option<&str>, output_dir: Option<PathBuf>) -> PyResult<Bound<'py, PyAny>> {
    let c = load(config, output_dir)?;
    let out = py.detach(|| cmd_sweep(&c)).map_err(err)?;
    to_py(py, &out.rows)
}

#[pyfunction]
#[pyo3(signature = (config=None, output_dir=None))]
fn landscape<'py>(py: Python<'py>, config: Option<&str>, output_dir: Option<PathBuf>) -> PyResult<Bound<'py, PyAny>> {
    let c = load(config, output_dir)?;
    let grid = py.detach(|| cmd_landscape(&c)).map_err(err)?;
    to_py(py, &grid)
}

/// Runs the self-checks; the report says which passed.
#[pyfunction]
#[pyo3(signature = (config=None, output_dir=None))]
fn verify<'py>(py: Python<'py>, config: Option<&str>, output_dir: Option<PathBuf>) -> PyResult<Bound<'py, PyAny>> {
    let c = load(config, output_dir)?;
    let report = py.detach(|| cmd_verify(&c)).map_err(err)?;
    to_py(py, &report)
}

#[derive(Serialize)]
struct PseudoLabels {
    sv: Vec<Vec<f64>>,
    st: Vec<Vec<f64>>,
    q: Vec<Vec<f64>>,
    p: Vec<Vec<f64>>,
    pseudo_classes: Vec<usize>,
    loss: f64,
}

/// Similarity matrices, pseudo-label targets Q, predictions P and the
/// transductive loss for image embeddings against class embeddings.
#[pyfunction]
#[pyo3(signature = (image_emb, class_emb, tau=0.01))]
fn pseudo_labels<'py>(
    py: Python<'py>,
    image_emb: Vec<Vec<f64>>,
    class_emb: Vec<Vec<f64>>,
    tau: f64,
) -> PyResult<Bound<'py, PyAny>> {
    let b =
        bundle_from_embeddings(&matrix(image_emb, "image_emb")?, &matrix(class_emb, "class_emb")?, tau).map_err(err)?;
    let out = PseudoLabels {
        sv: nested(&b.sv),
        st: nested(&b.st),
        q: nested(&b.q),
        p: nested(&b.p),
        pseudo_classes: b.pseudo_classes.clone(),
        loss: tta_loss_of(&b),
    };
    to_py(py, &out)
}

#[pyfunction]
#[pyo3(signature = (image_emb, class_emb, tau=0.01))]
fn tta_loss(image_emb: Vec<Vec<f64>>, class_emb: Vec<Vec<f64>>, tau: f64) -> PyResult<f64> {
    let b =
        bundle_from_embeddings(&matrix(image_emb, "image_emb")?, &matrix(class_emb, "class_emb")?, tau).map_err(err)?;
    Ok(tta_loss_of(&b))
}

#[pymodule]
fn watt(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("__version__", watt_core::VERSION)?;
    m.add_function(wrap_pyfunction!(version, m)?)?;
    m.add_function(wrap_pyfunction!(default_config, m)?)?;
    m.add_function(wrap_pyfunction!(pretrain, m)?)?;
    m.add_function(wrap_pyfunction!(adapt, m)?)?;
    m.add_function(wrap_pyfunction!(sweep, m)?)?;
    m.add_function(wrap_pyfunction!(landscape, m)?)?;
    m.add_function(wrap_pyfunction!(verify, m)?)?;
    m.add_function(wrap_pyfunction!(pseudo_labels, m)?)?;
    m.add_function(wrap_pyfunction!(tta_loss, m)?)?;
    Ok(())
}
