//! Python bindings for `ufs_lab`.
//!
//! Matrices cross the boundary as lists of rows; images as `n×h×w` nested
//! lists (single channel).

use std::path::PathBuf;

use pyo3::exceptions::{PyIOError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use ufs_lab::attribution::{compute_cam, CamVariant};
use ufs_lab::eval;
use ufs_lab::harness::{self, load_checkpoint};
use ufs_lab::selection::{self, CovarianceMode, InstanceSelectionConfig, SelectionMode};
use ufs_lab::ufs::{self, Regime};
use ufs_lab::{Error, SeededRng, Tensor};

fn py_err(e: Error) -> PyErr {
    match e {
        Error::Io { .. } => PyIOError::new_err(e.to_string()),
        Error::Numeric(_) | Error::State(_) => PyRuntimeError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

fn matrix(rows: Vec<Vec<f64>>) -> PyResult<Tensor> {
    Tensor::from_rows(&rows).map_err(py_err)
}

fn images(data: Vec<Vec<Vec<f64>>>) -> PyResult<Tensor> {
    let n = data.len();
    let h = data.first().map_or(0, |i| i.len());
    let w = data.first().and_then(|i| i.first()).map_or(0, |r| r.len());
    let mut flat = Vec::with_capacity(n * h * w);
    for img in &data {
        if img.len() != h || img.iter().any(|r| r.len() != w) {
            return Err(PyValueError::new_err("images must all be h×w"));
        }
        flat.extend(img.iter().flatten());
    }
    Tensor::new(vec![n, 1, h, w], flat).map_err(py_err)
}

/// UFS hyperparameters.
#[pyclass(name = "UfsConfig", from_py_object)]
#[derive(Clone)]
struct PyUfsConfig {
    inner: ufs::UfsConfig,
}

#[pymethods]
impl PyUfsConfig {
    #[new]
    #[pyo3(signature = (alpha, beta, epsilon, gamma=1e-4))]
    fn new(alpha: f64, beta: f64, epsilon: f64, gamma: f64) -> PyResult<Self> {
        let inner = ufs::UfsConfig {
            gamma,
            ..ufs::UfsConfig::new(alpha, beta, epsilon)
        };
        inner.validate().map_err(py_err)?;
        Ok(Self { inner })
    }

    #[getter]
    fn alpha(&self) -> f64 {
        self.inner.alpha
    }
    #[getter]
    fn beta(&self) -> f64 {
        self.inner.beta
    }
    #[getter]
    fn epsilon(&self) -> f64 {
        self.inner.epsilon
    }
    #[getter]
    fn gamma(&self) -> f64 {
        self.inner.gamma
    }

    /// "suppression" or "dismission".
    fn regime(&self) -> PyResult<&'static str> {
        Ok(match ufs::classify_mode(&self.inner).map_err(py_err)? {
            Regime::Suppression => "suppression",
            Regime::Dismission => "dismission",
        })
    }

    /// Suppression value for a single ratio.
    fn suppress(&self, r: f64) -> f64 {
        ufs::suppression_value(r, self.inner.alpha, self.inner.beta, self.inner.epsilon)
    }

    /// Elementwise suppression matrix for a matrix of ratios.
    fn suppression_matrix(&self, ratios: Vec<Vec<f64>>) -> PyResult<Vec<Vec<f64>>> {
        let s = ufs::compute_suppression(&matrix(ratios)?, &self.inner).map_err(py_err)?;
        Ok(s.values().to_rows())
    }

    fn __repr__(&self) -> String {
        format!(
            "UfsConfig(alpha={}, beta={}, epsilon={}, gamma={})",
            self.inner.alpha, self.inner.beta, self.inner.epsilon, self.inner.gamma
        )
    }
}

/// Fréchet distance between Gaussian fits of two sample matrices.
#[pyfunction]
fn frechet_distance(a: Vec<Vec<f64>>, b: Vec<Vec<f64>>) -> PyResult<f64> {
    let fa = eval::fit_gaussian(&matrix(a)?).map_err(py_err)?;
    let fb = eval::fit_gaussian(&matrix(b)?).map_err(py_err)?;
    eval::frechet_distance(&fa, &fb).map_err(py_err)
}

/// Precision, recall, density and coverage as a dict.
#[pyfunction]
#[pyo3(signature = (real, fake, k=3))]
fn manifold_metrics<'py>(
    py: Python<'py>,
    real: Vec<Vec<f64>>,
    fake: Vec<Vec<f64>>,
    k: usize,
) -> PyResult<Bound<'py, PyDict>> {
    let m = eval::manifold_metrics(&matrix(real)?, &matrix(fake)?, k).map_err(py_err)?;
    let d = PyDict::new(py);
    d.set_item("precision", m.precision)?;
    d.set_item("recall", m.recall)?;
    d.set_item("density", m.density)?;
    d.set_item("coverage", m.coverage)?;
    Ok(d)
}

/// `(covered_modes, high_quality_fraction)`.
#[pyfunction]
#[pyo3(signature = (samples, centers, sigma, thresh=3.0))]
fn mode_coverage(
    samples: Vec<Vec<f64>>,
    centers: Vec<Vec<f64>>,
    sigma: f64,
    thresh: f64,
) -> PyResult<(usize, f64)> {
    eval::mode_coverage(&matrix(samples)?, &matrix(centers)?, sigma, thresh).map_err(py_err)
}

/// Indices (ascending) of the k samples kept by `mode`: top, bottom, random or none.
#[pyfunction]
#[pyo3(signature = (scores, k, mode="top", seed=0))]
fn select_indices(scores: Vec<f64>, k: usize, mode: &str, seed: u64) -> PyResult<Vec<usize>> {
    let mode = match mode {
        "top" => SelectionMode::Top,
        "bottom" => SelectionMode::Bottom,
        "random" => SelectionMode::Random,
        "none" => SelectionMode::None,
        other => {
            return Err(PyValueError::new_err(format!(
                "unknown selection mode {other:?}"
            )))
        }
    };
    let t = Tensor::vector(scores).map_err(py_err)?;
    selection::select_indices(&t, k, mode, &mut SeededRng::new(seed)).map_err(py_err)
}

/// Indices kept by Gaussian-density instance selection on a point set.
#[pyfunction]
#[pyo3(signature = (points, retention=0.5, diagonal=false))]
fn instance_select(points: Vec<Vec<f64>>, retention: f64, diagonal: bool) -> PyResult<Vec<usize>> {
    let cfg = InstanceSelectionConfig {
        covariance: if diagonal {
            CovarianceMode::Diagonal
        } else {
            CovarianceMode::FullShrinkage
        },
        ..InstanceSelectionConfig::new(retention)
    };
    selection::instance_select(&matrix(points)?, &cfg).map_err(py_err)
}

#[pyfunction]
#[pyo3(signature = (radius=2.0))]
fn ring8_centers(radius: f64) -> Vec<Vec<f64>> {
    harness::ring8_centers(radius).to_rows()
}

/// JSON text of a built-in preset: baseline, ufs, topk or topk_ufs.
#[pyfunction]
fn preset_config(name: &str) -> PyResult<String> {
    Ok(harness::preset(name).map_err(py_err)?.to_json())
}

/// Runs an experiment from JSON config text and returns the summary as JSON text.
#[pyfunction]
#[pyo3(signature = (config_json, overrides=Vec::new()))]
fn run_experiment(py: Python<'_>, config_json: &str, overrides: Vec<String>) -> PyResult<String> {
    let mut doc: serde_json::Value =
        serde_json::from_str(config_json).map_err(|e| PyValueError::new_err(e.to_string()))?;
    for o in &overrides {
        harness::apply_override(&mut doc, o).map_err(py_err)?;
    }
    let cfg: harness::ExperimentConfig =
        serde_json::from_value(doc).map_err(|e| PyValueError::new_err(e.to_string()))?;
    let summary = py
        .detach(|| harness::run_experiment(&cfg))
        .map_err(py_err)?;
    Ok(serde_json::to_string(&summary).expect("summary serialises"))
}

/// Selected fields of a checkpoint as a dict.
#[pyfunction]
fn checkpoint_info<'py>(py: Python<'py>, path: PathBuf) -> PyResult<Bound<'py, PyDict>> {
    let ck = load_checkpoint(&path).map_err(py_err)?;
    let st = &ck.state;
    let d = PyDict::new(py);
    d.set_item("iteration", st.iteration)?;
    d.set_item("d_steps", st.d_steps)?;
    d.set_item("channels", st.discriminator.channels())?;
    d.set_item("head_weight", st.discriminator.head.weight.data().to_vec())?;
    d.set_item("head_bias", st.discriminator.head.b())?;
    d.set_item("mu_real", st.stats.mu_real.data().to_vec())?;
    d.set_item("mu_fake", st.stats.mu_fake.data().to_vec())?;
    d.set_item("stats_initialized", st.stats.initialized)?;
    Ok(d)
}

/// Class activation maps (`cam`, `cam_ufs` or `cam_sup`) of a checkpoint's
/// discriminator for single-channel images.
#[pyfunction]
#[pyo3(signature = (path, imgs, variant="cam"))]
fn checkpoint_cam(
    path: PathBuf,
    imgs: Vec<Vec<Vec<f64>>>,
    variant: &str,
) -> PyResult<Vec<Vec<Vec<f64>>>> {
    let variant = match variant {
        "cam" => CamVariant::Cam,
        "cam_ufs" => CamVariant::CamUfs,
        "cam_sup" => CamVariant::CamSup,
        other => {
            return Err(PyValueError::new_err(format!(
                "unknown CAM variant {other:?}"
            )))
        }
    };
    let ck = load_checkpoint(&path).map_err(py_err)?;
    let d = &ck.state.discriminator;
    let x = images(imgs)?;
    let s = if variant == CamVariant::Cam {
        None
    } else {
        let (feats, _) = d.forward_split(&x).map_err(py_err)?;
        let cfg = ck.ufs.unwrap_or_else(ufs::UfsConfig::dismission);
        Some(ufs::suppression_for(&ck.state.stats, &d.head.weight, &feats, &cfg).map_err(py_err)?)
    };
    let maps = compute_cam(d, &x, s.as_ref(), variant).map_err(py_err)?;
    Ok(maps.into_iter().map(|m| m.values.to_rows()).collect())
}

#[pymodule]
fn ufs_lab_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyUfsConfig>()?;
    m.add_function(wrap_pyfunction!(frechet_distance, m)?)?;
    m.add_function(wrap_pyfunction!(manifold_metrics, m)?)?;
    m.add_function(wrap_pyfunction!(mode_coverage, m)?)?;
    m.add_function(wrap_pyfunction!(select_indices, m)?)?;
    m.add_function(wrap_pyfunction!(instance_select, m)?)?;
    m.add_function(wrap_pyfunction!(ring8_centers, m)?)?;
    m.add_function(wrap_pyfunction!(preset_config, m)?)?;
    m.add_function(wrap_pyfunction!(run_experiment, m)?)?;
    m.add_function(wrap_pyfunction!(checkpoint_info, m)?)?;
    m.add_function(wrap_pyfunction!(checkpoint_cam, m)?)?;
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    Ok(())
}
