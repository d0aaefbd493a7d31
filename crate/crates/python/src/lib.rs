//! Python bindings for the landval pipeline.

use std::path::PathBuf;

use pyo3::create_exception;
use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;

use landval::config::RunConfig;
use landval::eval::{format_records_csv, format_summary_csv};
use landval::loss::{Aggregation, InnerDistance, LossConfig, OuterNorm};
use landval::net::{load_checkpoint, save_checkpoint, ModelState};
use landval::pose::{self, CameraModel, Mat3, Template3D};
use landval::{cli, LandmarkSet, Triplet, TripletVector};

create_exception!(landval_py, LandvalError, PyValueError);

fn to_py(e: landval::Error) -> PyErr {
    LandvalError::new_err(cli::error_line(&e))
}

fn run_config(config_json: Option<&str>) -> PyResult<RunConfig> {
    match config_json {
        Some(text) => RunConfig::from_json(text).map_err(to_py),
        None => Ok(RunConfig::default()),
    }
}

fn triplets(pred: &[(f64, f64, f64)]) -> TripletVector {
    TripletVector::new(pred.iter().map(|&(x, y, validity)| Triplet { x, y, validity }).collect())
}

fn loss_config(outer: &str, inner: &str, detach: bool, aggregation: &str) -> PyResult<LossConfig> {
    let outer = match outer {
        "l1" => OuterNorm::L1,
        "l2" => OuterNorm::L2,
        o => return Err(PyValueError::new_err(format!("outer must be l1 or l2, got {o}"))),
    };
    let inner_distance = match inner {
        "manhattan" => InnerDistance::Manhattan,
        "euclidean" => InnerDistance::Euclidean,
        o => return Err(PyValueError::new_err(format!("inner must be manhattan or euclidean, got {o}"))),
    };
    let aggregation = match aggregation {
        "mean" => Aggregation::Mean,
        "sum" => Aggregation::Sum,
        o => return Err(PyValueError::new_err(format!("aggregation must be mean or sum, got {o}"))),
    };
    Ok(LossConfig { outer, inner_distance, detach_distance_target: detach, aggregation })
}

fn mat3(rows: [[f64; 3]; 3]) -> Mat3 {
    Mat3(rows)
}

/// A loaded dataset directory (`manifest.csv` plus images and `.pts` files).
#[pyclass(name = "Dataset", module = "landval_py")]
pub struct PyDataset {
    inner: landval::Dataset,
}

#[pymethods]
impl PyDataset {
    #[staticmethod]
    fn load(dir: PathBuf) -> PyResult<Self> {
        Ok(Self { inner: landval::io::load_dataset(dir).map_err(to_py)? })
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    fn ids(&self) -> Vec<String> {
        self.inner.samples.iter().map(|s| s.id.clone()).collect()
    }

    fn subsets(&self) -> Vec<&'static str> {
        self.inner.samples.iter().map(|s| s.subset.as_str()).collect()
    }

    fn annotation(&self, index: usize) -> PyResult<Vec<(f64, f64)>> {
        let s = self.inner.samples.get(index).ok_or_else(|| PyValueError::new_err("index out of range"))?;
        Ok(s.annotation.points.iter().map(|p| (p.x, p.y)).collect())
    }

    /// `(width, height, bytes)` of the grayscale image, row-major.
    fn image(&self, index: usize) -> PyResult<(usize, usize, Vec<u8>)> {
        let s = self.inner.samples.get(index).ok_or_else(|| PyValueError::new_err("index out of range"))?;
        Ok((s.image.width(), s.image.height(), s.image.data().to_vec()))
    }

    fn last_losses(&self) -> Vec<f64> {
        self.inner.samples.iter().map(|s| s.last_loss).collect()
    }
}

/// Trained network weights.
#[pyclass(name = "Model", module = "landval_py")]
pub struct PyModel {
    inner: ModelState,
}

#[pymethods]
impl PyModel {
    #[staticmethod]
    #[pyo3(signature = (config_json=None, seed=42))]
    fn init(config_json: Option<&str>, seed: u64) -> PyResult<Self> {
        let cfg = run_config(config_json)?;
        Ok(Self { inner: ModelState::init(&cfg.net, seed).map_err(to_py)? })
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(Self { inner: load_checkpoint(path).map_err(to_py)? })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        save_checkpoint(&self.inner, path).map_err(to_py)
    }

    fn parameter_count(&self) -> usize {
        self.inner.parameter_count()
    }

    fn landmark_count(&self) -> usize {
        self.inner.config().landmark_count
    }

    /// One list of `(x, y, validity)` per sample.
    fn predict(&self, dataset: &PyDataset) -> PyResult<Vec<Vec<(f64, f64, f64)>>> {
        let preds = landval::eval::predict(&self.inner, &dataset.inner).map_err(to_py)?;
        Ok(preds
            .iter()
            .map(|p| p.triplets.iter().map(|t| (t.x, t.y, t.validity)).collect())
            .collect())
    }
}

#[pyfunction]
fn default_config() -> String {
    RunConfig::default().to_json()
}

/// Writes `out_dir/train` and `out_dir/test`; returns their sample counts.
#[pyfunction]
#[pyo3(signature = (out_dir, seed=42, config_json=None))]
fn generate(py: Python<'_>, out_dir: PathBuf, seed: u64, config_json: Option<&str>) -> PyResult<(usize, usize)> {
    let cfg = run_config(config_json)?.synth_config(seed);
    py.detach(|| {
        let out = landval::synth::generate(&cfg)?;
        out.save(&out_dir)?;
        Ok((out.train.dataset.len(), out.test.dataset.len()))
    })
    .map_err(to_py)
}

/// Returns the model and the per-epoch history as CSV text.
#[pyfunction]
#[pyo3(signature = (train_set, val_set=None, seed=42, config_json=None))]
fn train(
    py: Python<'_>,
    train_set: &mut PyDataset,
    val_set: Option<&PyDataset>,
    seed: u64,
    config_json: Option<&str>,
) -> PyResult<(PyModel, String)> {
    let cfg = run_config(config_json)?.train_config(seed);
    let data = &mut train_set.inner;
    let val = val_set.map(|v| &v.inner);
    let outcome = py.detach(|| landval::train::train(data, val, &cfg)).map_err(to_py)?;
    Ok((PyModel { inner: outcome.model }, outcome.history.to_csv()))
}

/// Returns the summary CSV and the per-sample records CSV.
#[pyfunction]
#[pyo3(signature = (model, dataset, config_json=None))]
fn evaluate(py: Python<'_>, model: &PyModel, dataset: &PyDataset, config_json: Option<&str>) -> PyResult<(String, String)> {
    let cfg = run_config(config_json)?.eval;
    let ev = py.detach(|| landval::eval::evaluate(&model.inner, &dataset.inner, &cfg)).map_err(to_py)?;
    Ok((format_summary_csv(&ev.summaries), format_records_csv(&ev.records)))
}

#[pyfunction]
#[pyo3(signature = (pred, gt, outer="l1", inner="manhattan", detach=true, aggregation="mean"))]
fn total_loss(
    pred: Vec<(f64, f64, f64)>,
    gt: Vec<(f64, f64)>,
    outer: &str,
    inner: &str,
    detach: bool,
    aggregation: &str,
) -> PyResult<f64> {
    let cfg = loss_config(outer, inner, detach, aggregation)?;
    let gt = LandmarkSet::from_xy(&gt).map_err(to_py)?;
    landval::loss::total_loss(&triplets(&pred), &gt, &cfg).map_err(to_py)
}

/// Gradient with respect to the flat `[x, y, v, x, y, v, ...]` prediction.
#[pyfunction]
#[pyo3(signature = (pred, gt, outer="l1", inner="manhattan", detach=true, aggregation="mean"))]
fn loss_gradient(
    pred: Vec<(f64, f64, f64)>,
    gt: Vec<(f64, f64)>,
    outer: &str,
    inner: &str,
    detach: bool,
    aggregation: &str,
) -> PyResult<Vec<f64>> {
    let cfg = loss_config(outer, inner, detach, aggregation)?;
    let gt = LandmarkSet::from_xy(&gt).map_err(to_py)?;
    landval::loss::loss_gradient(&triplets(&pred), &gt, &cfg).map_err(to_py)
}

/// Half-open `(start, end)` ticket ranges, one per loss.
#[pyfunction]
#[pyo3(signature = (losses, range_total=10000))]
fn assign_ranges(losses: Vec<f64>, range_total: u64) -> PyResult<Vec<(u64, u64)>> {
    let named: Vec<(String, f64)> = losses.iter().enumerate().map(|(i, &l)| (i.to_string(), l)).collect();
    let table = landval::balance::assign_ranges(&named, range_total).map_err(to_py)?;
    Ok(table.entries().iter().map(|e| (e.range_start, e.range_end)).collect())
}

/// Best rigid map of `p` onto `q`; returns `(rotation rows, translation)`.
#[pyfunction]
#[pyo3(signature = (p, q, weights=None))]
fn kabsch(p: Vec<[f64; 3]>, q: Vec<[f64; 3]>, weights: Option<Vec<f64>>) -> PyResult<([[f64; 3]; 3], [f64; 3])> {
    let t = pose::kabsch(&p, &q, weights.as_deref()).map_err(to_py)?;
    Ok((t.rotation.0, t.translation))
}

/// Fits the built-in template; returns `(rotation rows, translation, scale, rms)`.
#[pyfunction]
#[pyo3(signature = (landmarks, focal_px=Some(600.0), weights=None))]
fn fit_head_pose(
    landmarks: Vec<(f64, f64)>,
    focal_px: Option<f64>,
    weights: Option<Vec<f64>>,
) -> PyResult<([[f64; 3]; 3], [f64; 3], f64, f64)> {
    let lm = LandmarkSet::from_xy(&landmarks).map_err(to_py)?;
    let template = Template3D::for_count(lm.len()).map_err(to_py)?;
    let camera = CameraModel { focal_px, ..CameraModel::default() };
    let fit = pose::fit_head_pose(&lm, &template, &camera, weights.as_deref(), &Default::default()).map_err(to_py)?;
    Ok((fit.transform.rotation.0, fit.transform.translation, fit.scale, fit.residual_rms))
}

/// Geodesic angle between two rotations, in radians.
#[pyfunction]
fn rotation_distance(r1: [[f64; 3]; 3], r2: [[f64; 3]; 3]) -> f64 {
    pose::rotation_distance(&mat3(r1), &mat3(r2))
}

#[pymodule]
fn landval_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("LandvalError", m.py().get_type::<LandvalError>())?;
    m.add_class::<PyDataset>()?;
    m.add_class::<PyModel>()?;
    m.add_function(wrap_pyfunction!(default_config, m)?)?;
    m.add_function(wrap_pyfunction!(generate, m)?)?;
    m.add_function(wrap_pyfunction!(train, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate, m)?)?;
    m.add_function(wrap_pyfunction!(total_loss, m)?)?;
    m.add_function(wrap_pyfunction!(loss_gradient, m)?)?;
    m.add_function(wrap_pyfunction!(assign_ranges, m)?)?;
    m.add_function(wrap_pyfunction!(kabsch, m)?)?;
    m.add_function(wrap_pyfunction!(fit_head_pose, m)?)?;
    m.add_function(wrap_pyfunction!(rotation_distance, m)?)?;
    Ok(())
}
