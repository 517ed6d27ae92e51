//! Python bindings: the estimators, the binned baselines, the synthetic
//! benchmark and report evaluation, on plain lists of floats.

use std::path::PathBuf;

use detcal_core::binned::{self, BinningConfig, TemperatureSearch};
use detcal_core::io::DatasetBundle;
use detcal_core::kde::{self, CalibrationSample, Execution};
use detcal_core::report::{self, BandwidthPolicy, ReportConfig};
use detcal_core::{geometry, synth, Error};
use pyo3::exceptions::{PyIOError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

fn to_py(e: Error) -> PyErr {
    if e.is_io() {
        PyIOError::new_err(e.to_string())
    } else {
        PyValueError::new_err(e.to_string())
    }
}

fn samples(scores: &[f64], correctness: &[f64]) -> PyResult<Vec<CalibrationSample>> {
    if scores.len() != correctness.len() {
        return Err(PyValueError::new_err(format!(
            "scores and correctness differ in length ({} vs {})",
            scores.len(),
            correctness.len()
        )));
    }
    Ok(scores
        .iter()
        .zip(correctness)
        .map(|(&s, &z)| CalibrationSample::new(s, z))
        .collect())
}

#[pyclass(name = "BoundingBox", module = "detcal", frozen, from_py_object)]
#[derive(Clone)]
struct PyBoundingBox(geometry::BoundingBox);

#[pymethods]
impl PyBoundingBox {
    #[new]
    fn new(x_min: f64, y_min: f64, x_max: f64, y_max: f64) -> PyResult<Self> {
        geometry::BoundingBox::new(x_min, y_min, x_max, y_max)
            .map(Self)
            .map_err(to_py)
    }

    /// Box from COCO `[x, y, width, height]`.
    #[staticmethod]
    fn from_xywh(x: f64, y: f64, width: f64, height: f64) -> PyResult<Self> {
        geometry::BoundingBox::from_xywh(x, y, width, height)
            .map(Self)
            .map_err(to_py)
    }

    #[getter]
    fn area(&self) -> f64 {
        self.0.area()
    }

    fn corners(&self) -> (f64, f64, f64, f64) {
        (self.0.x_min(), self.0.y_min(), self.0.x_max(), self.0.y_max())
    }

    fn __repr__(&self) -> String {
        let (a, b, c, d) = self.corners();
        format!("BoundingBox({a}, {b}, {c}, {d})")
    }
}

#[pyfunction]
fn iou(a: &PyBoundingBox, b: &PyBoundingBox) -> f64 {
    geometry::iou(&a.0, &b.0)
}

#[pyfunction]
fn dice(a: &PyBoundingBox, b: &PyBoundingBox) -> f64 {
    geometry::dice(&a.0, &b.0)
}

/// Correctness link: `identity`, `hinge`, `threshold:<b>` or `ramp:<a>:<b>`.
#[pyclass(name = "LinkSpec", module = "detcal", frozen)]
struct PyLinkSpec(detcal_core::LinkSpec);

#[pymethods]
impl PyLinkSpec {
    #[new]
    fn new(spec: &str) -> PyResult<Self> {
        spec.parse().map(Self).map_err(to_py)
    }

    fn __call__(&self, similarity: f64) -> f64 {
        self.0.apply(similarity)
    }

    #[getter]
    fn is_binary(&self) -> bool {
        self.0.is_binary()
    }

    fn __str__(&self) -> String {
        self.0.to_string()
    }

    fn __repr__(&self) -> String {
        format!("LinkSpec('{}')", self.0)
    }
}

/// Estimator settings shared by the KDE functions.
#[pyclass(name = "KdeConfig", module = "detcal", from_py_object)]
#[derive(Clone)]
struct PyKdeConfig {
    #[pyo3(get, set)]
    bandwidth: f64,
    #[pyo3(get, set)]
    clamp: f64,
    #[pyo3(get, set)]
    max_samples: Option<usize>,
    #[pyo3(get, set)]
    seed: u64,
    #[pyo3(get, set)]
    parallel: bool,
}

#[pymethods]
impl PyKdeConfig {
    #[new]
    #[pyo3(signature = (bandwidth, clamp = kde::DEFAULT_CLAMP, max_samples = None, seed = 0, parallel = false))]
    fn new(bandwidth: f64, clamp: f64, max_samples: Option<usize>, seed: u64, parallel: bool) -> PyResult<Self> {
        let cfg = Self {
            bandwidth,
            clamp,
            max_samples,
            seed,
            parallel,
        };
        cfg.to_core().validate().map_err(to_py)?;
        Ok(cfg)
    }

    fn __repr__(&self) -> String {
        format!(
            "KdeConfig(bandwidth={}, clamp={}, max_samples={:?}, seed={}, parallel={})",
            self.bandwidth, self.clamp, self.max_samples, self.seed, self.parallel
        )
    }
}

impl PyKdeConfig {
    fn to_core(&self) -> kde::KdeConfig {
        kde::KdeConfig {
            bandwidth: self.bandwidth,
            clamp: self.clamp,
            max_samples: self.max_samples,
            seed: self.seed,
            execution: if self.parallel {
                Execution::Parallel
            } else {
                Execution::Sequential
            },
        }
    }
}

#[pyfunction]
fn estimate_ce(py: Python<'_>, scores: Vec<f64>, correctness: Vec<f64>, config: PyKdeConfig) -> PyResult<f64> {
    let s = samples(&scores, &correctness)?;
    let cfg = config.to_core();
    py.detach(|| kde::estimate_ce(&s, &cfg))
        .map(|e| e.value)
        .map_err(to_py)
}

/// `(value, gradient)` with the gradient in input order.
#[pyfunction]
fn estimate_ce_gradient(
    py: Python<'_>,
    scores: Vec<f64>,
    correctness: Vec<f64>,
    config: PyKdeConfig,
) -> PyResult<(f64, Vec<f64>)> {
    let s = samples(&scores, &correctness)?;
    let cfg = config.to_core();
    py.detach(|| kde::estimate_ce_gradient(&s, &cfg))
        .map(|g| (g.value, g.gradient))
        .map_err(to_py)
}

#[pyfunction]
fn conditional_expectation(scores: Vec<f64>, correctness: Vec<f64>, query: f64, config: PyKdeConfig) -> PyResult<f64> {
    let s = samples(&scores, &correctness)?;
    kde::conditional_expectation(&s, query, &config.to_core()).map_err(to_py)
}

#[pyfunction]
fn beta_kernel(s_eval: f64, s_center: f64, bandwidth: f64) -> PyResult<f64> {
    kde::beta_kernel(s_eval, s_center, bandwidth).map_err(to_py)
}

/// Leave-one-out maximum-likelihood bandwidth; the default grid when `grid` is omitted.
#[pyfunction]
#[pyo3(signature = (scores, grid = None, clamp = kde::DEFAULT_CLAMP))]
fn select_bandwidth(py: Python<'_>, scores: Vec<f64>, grid: Option<Vec<f64>>, clamp: f64) -> PyResult<f64> {
    let zeros = vec![0.0; scores.len()];
    let s = samples(&scores, &zeros)?;
    py.detach(|| match grid {
        None => {
            let mut cfg = kde::KdeConfig::new(1.0);
            cfg.clamp = clamp;
            kde::select_bandwidth(&s, &cfg)
        }
        Some(grid) => {
            let clamped: Vec<f64> = scores.iter().map(|v| v.clamp(clamp, 1.0 - clamp)).collect();
            kde::loo_mle_bandwidth(&clamped, &grid, Execution::Sequential)
        }
    })
    .map_err(to_py)
}

#[pyfunction]
#[pyo3(signature = (scores, correctness, bins = binned::DECE_BINS))]
fn d_ece(scores: Vec<f64>, correctness: Vec<f64>, bins: usize) -> PyResult<f64> {
    let s = samples(&scores, &correctness)?;
    let cfg = BinningConfig::new(bins).map_err(to_py)?;
    binned::d_ece(&s, &cfg).map_err(to_py)
}

#[pyfunction]
fn d_cls(scores: Vec<f64>, labels: Vec<f64>) -> PyResult<f64> {
    binned::d_cls(&samples(&scores, &labels)?).map_err(to_py)
}

/// NLL-optimal temperature `T` for `σ(logit(s) / T)`.
#[pyfunction]
fn fit_temperature(scores: Vec<f64>, labels: Vec<f64>) -> PyResult<f64> {
    binned::fit_temperature(&samples(&scores, &labels)?, &TemperatureSearch::default()).map_err(to_py)
}

#[pyfunction]
fn temperature_scale(score: f64, temperature: f64) -> PyResult<f64> {
    synth::temperature_scale(score, temperature).map_err(to_py)
}

#[pyfunction]
fn ground_truth_ce(t1: f64, t2: f64) -> PyResult<f64> {
    synth::ground_truth_ce(t1, t2).map_err(to_py)
}

/// Synthetic miscalibrated scores as a dict of equal-length lists:
/// `score`, `label`, `true_probability`, `iou`.
#[pyfunction]
#[pyo3(signature = (n, t1, t2, seed = 0, iou_concentration = None))]
fn generate<'py>(
    py: Python<'py>,
    n: usize,
    t1: f64,
    t2: f64,
    seed: u64,
    iou_concentration: Option<f64>,
) -> PyResult<Bound<'py, PyDict>> {
    let mut cfg = synth::SynthConfig::new(n, t1, t2, seed);
    cfg.iou_concentration = iou_concentration;
    let data = synth::generate(&cfg).map_err(to_py)?;
    let out = PyDict::new(py);
    out.set_item("score", data.iter().map(|d| d.score).collect::<Vec<_>>())?;
    out.set_item("label", data.iter().map(|d| d.label).collect::<Vec<_>>())?;
    out.set_item("true_probability", data.iter().map(|d| d.true_probability).collect::<Vec<_>>())?;
    out.set_item("iou", data.iter().map(|d| d.iou).collect::<Vec<_>>())?;
    Ok(out)
}

/// Calibration report for COCO-format files, as canonical JSON text.
#[pyfunction]
#[pyo3(signature = (
    detections,
    ground_truth,
    link = "threshold:0.5",
    score_threshold = 0.5,
    bandwidth = None,
    bins = binned::DECE_BINS,
    seed = 0,
    sequential = true,
))]
#[allow(clippy::too_many_arguments)]
fn evaluate(
    py: Python<'_>,
    detections: PathBuf,
    ground_truth: PathBuf,
    link: &str,
    score_threshold: f64,
    bandwidth: Option<f64>,
    bins: usize,
    seed: u64,
    sequential: bool,
) -> PyResult<String> {
    let bundle = DatasetBundle::load(&detections, &ground_truth).map_err(to_py)?;
    let cfg = ReportConfig {
        link: link.parse().map_err(to_py)?,
        score_threshold,
        bandwidth: bandwidth.map_or(BandwidthPolicy::PerClass, BandwidthPolicy::Fixed),
        dece_bins: bins,
        categories: Some(bundle.category_ids()),
        seed,
        execution: if sequential {
            Execution::Sequential
        } else {
            Execution::Parallel
        },
        ..ReportConfig::default()
    };
    py.detach(|| report::evaluate_report(&bundle.detections, &bundle.ground_truth, &cfg))
        .and_then(|r| r.to_json())
        .map_err(to_py)
}

#[pymodule]
fn detcal(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyBoundingBox>()?;
    m.add_class::<PyLinkSpec>()?;
    m.add_class::<PyKdeConfig>()?;
    m.add_function(wrap_pyfunction!(iou, m)?)?;
    m.add_function(wrap_pyfunction!(dice, m)?)?;
    m.add_function(wrap_pyfunction!(beta_kernel, m)?)?;
    m.add_function(wrap_pyfunction!(estimate_ce, m)?)?;
    m.add_function(wrap_pyfunction!(estimate_ce_gradient, m)?)?;
    m.add_function(wrap_pyfunction!(conditional_expectation, m)?)?;
    m.add_function(wrap_pyfunction!(select_bandwidth, m)?)?;
    m.add_function(wrap_pyfunction!(d_ece, m)?)?;
    m.add_function(wrap_pyfunction!(d_cls, m)?)?;
    m.add_function(wrap_pyfunction!(fit_temperature, m)?)?;
    m.add_function(wrap_pyfunction!(temperature_scale, m)?)?;
    m.add_function(wrap_pyfunction!(ground_truth_ce, m)?)?;
    m.add_function(wrap_pyfunction!(generate, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate, m)?)?;
    m.add("DEFAULT_CLAMP", kde::DEFAULT_CLAMP)?;
    Ok(())
}
