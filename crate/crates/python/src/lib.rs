//! Python bindings. Matrices cross the boundary as lists of rows.

use std::path::PathBuf;

use ccl::data::l2_normalize;
use ccl::io;
use ccl::pipeline::{self, EvalLevel};
use ccl::siamese::{self, DistanceMode};
use ccl::synth::{synth_generate, SynthConfig};
use ccl::CclError;
use ndarray::Array2;
use pyo3::exceptions::{PyIOError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

fn err(e: CclError) -> PyErr {
    match e {
        CclError::Io(e) => PyIOError::new_err(e.to_string()),
        other => PyValueError::new_err(other.to_string()),
    }
}

fn to_array(rows: Vec<Vec<f32>>) -> PyResult<Array2<f32>> {
    let n = rows.len();
    let d = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != d) {
        return Err(PyValueError::new_err("rows have different lengths"));
    }
    Array2::from_shape_vec((n, d), rows.into_iter().flatten().collect()).map_err(|e| PyValueError::new_err(e.to_string()))
}

fn to_rows(m: &Array2<f32>) -> Vec<Vec<f32>> {
    m.outer_iter().map(|r| r.to_vec()).collect()
}

fn parse_level(level: &str) -> PyResult<EvalLevel> {
    level.parse().map_err(err)
}

fn json_to_py<'py>(py: Python<'py>, text: &str) -> PyResult<Bound<'py, PyAny>> {
    py.import("json")?.call_method1("loads", (text,))
}

/// Embedding matrix with optional frame, track and label ids.
#[pyclass(name = "FeatureSet", module = "ccl_py", skip_from_py_object)]
#[derive(Clone)]
struct PyFeatureSet {
    inner: ccl::FeatureSet,
}

#[pymethods]
impl PyFeatureSet {
    #[new]
    #[pyo3(signature = (features, frame_id=None, track_id=None, label=None))]
    fn new(
        features: Vec<Vec<f32>>,
        frame_id: Option<Vec<i64>>,
        track_id: Option<Vec<i64>>,
        label: Option<Vec<i64>>,
    ) -> PyResult<Self> {
        let mut fs = ccl::FeatureSet::new(to_array(features)?).map_err(err)?;
        if let Some(v) = frame_id {
            fs = fs.with_frames(v).map_err(err)?;
        }
        if let Some(v) = track_id {
            fs = fs.with_tracks(v).map_err(err)?;
        }
        if let Some(v) = label {
            fs = fs.with_labels(v).map_err(err)?;
        }
        Ok(PyFeatureSet { inner: fs })
    }

    /// Binary feature file, or the CSV import format for `.csv` paths.
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(PyFeatureSet {
            inner: io::load_any_features(path).map_err(err)?,
        })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        io::write_features(path, &self.inner).map_err(err)
    }

    fn normalized(&self) -> PyResult<Self> {
        Ok(PyFeatureSet {
            inner: l2_normalize(&self.inner).map_err(err)?,
        })
    }

    #[getter]
    fn features(&self) -> Vec<Vec<f32>> {
        to_rows(&self.inner.features)
    }

    #[getter]
    fn frame_id(&self) -> Option<Vec<i64>> {
        self.inner.frame_id.clone()
    }

    #[getter]
    fn track_id(&self) -> Option<Vec<i64>> {
        self.inner.track_id.clone()
    }

    #[getter]
    fn label(&self) -> Option<Vec<i64>> {
        self.inner.label.clone()
    }

    #[getter]
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    fn __repr__(&self) -> String {
        format!("FeatureSet(n={}, dim={})", self.inner.len(), self.inner.dim())
    }
}

/// Flat key-value configuration; keys as in the config file format.
#[pyclass(name = "PipelineConfig", module = "ccl_py", skip_from_py_object)]
#[derive(Clone)]
struct PyPipelineConfig {
    inner: ccl::PipelineConfig,
}

#[pymethods]
impl PyPipelineConfig {
    #[new]
    #[pyo3(signature = (text=None))]
    fn new(text: Option<&str>) -> PyResult<Self> {
        let inner = match text {
            Some(t) => ccl::PipelineConfig::parse_text(t).map_err(err)?,
            None => ccl::PipelineConfig::default(),
        };
        Ok(PyPipelineConfig { inner })
    }

    #[staticmethod]
    fn from_file(path: PathBuf) -> PyResult<Self> {
        Ok(PyPipelineConfig {
            inner: ccl::PipelineConfig::from_file(path).map_err(err)?,
        })
    }

    /// Set one key; the value is converted with `str()`.
    fn set(&mut self, key: &str, value: &Bound<'_, PyAny>) -> PyResult<()> {
        let text = match value.extract::<bool>() {
            Ok(b) => b.to_string(),
            Err(_) => value.str()?.to_string(),
        };
        self.inner.set(key, &text).map_err(err)
    }

    fn to_text(&self) -> String {
        self.inner.to_text()
    }

    fn __repr__(&self) -> String {
        format!("PipelineConfig(seed={}, partition_index={})", self.inner.seed, self.inner.partition_index)
    }
}

/// Trained Siamese encoder.
#[pyclass(name = "SiameseModel", module = "ccl_py", skip_from_py_object)]
#[derive(Clone)]
struct PySiameseModel {
    inner: ccl::SiameseModel<f32>,
}

#[pymethods]
impl PySiameseModel {
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(PySiameseModel {
            inner: siamese::load_model(path).map_err(err)?,
        })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        siamese::save_model(path, &self.inner).map_err(err)
    }

    /// Normalized hidden-layer embedding of the (normalized) input rows.
    fn embed(&self, fs: &PyFeatureSet) -> PyResult<PyFeatureSet> {
        let fs = l2_normalize(&fs.inner).map_err(err)?;
        Ok(PyFeatureSet {
            inner: self.inner.embed(&fs).map_err(err)?,
        })
    }

    #[getter]
    fn input_dim(&self) -> usize {
        self.inner.input_dim()
    }

    #[getter]
    fn hidden_dim(&self) -> usize {
        self.inner.hidden_dim()
    }
}

/// Labeled synthetic dataset with tracks and co-occurring frames.
#[pyfunction]
#[pyo3(signature = (num_classes=3, per_class=200, dim=16, noise=0.05, frames_per_track=10, cooc_rate=0.1, seed=0))]
fn synth(
    num_classes: usize,
    per_class: usize,
    dim: usize,
    noise: f64,
    frames_per_track: usize,
    cooc_rate: f64,
    seed: u64,
) -> PyResult<PyFeatureSet> {
    let cfg = SynthConfig {
        num_classes,
        per_class,
        dim,
        noise,
        frames_per_track,
        cooc_rate,
        seed,
    };
    Ok(PyFeatureSet {
        inner: synth_generate(&cfg).map_err(err)?,
    })
}

/// First-neighbor hierarchy of the rows: `(partitions, cluster_counts)`.
#[pyfunction]
fn finch(features: Vec<Vec<f32>>) -> PyResult<(Vec<Vec<usize>>, Vec<usize>)> {
    let h = ccl::finch_hierarchy(&to_array(features)?).map_err(err)?;
    Ok((h.partitions, h.cluster_counts))
}

#[pyfunction]
fn ward_hac(features: Vec<Vec<f32>>, num_clusters: usize) -> PyResult<Vec<usize>> {
    Ok(ccl::ward_hac(&to_array(features)?, num_clusters).map_err(err)?.labels)
}

#[pyfunction]
#[pyo3(signature = (features, k, seed=0))]
fn kmeans(features: Vec<Vec<f32>>, k: usize, seed: u64) -> PyResult<Vec<usize>> {
    let r = ccl::minibatch_kmeans(&to_array(features)?, &ccl::KMeansConfig::new(k, seed)).map_err(err)?;
    Ok(r.labels)
}

#[pyfunction]
fn wcp(pred: Vec<i64>, gt: Vec<i64>) -> PyResult<f64> {
    Ok(ccl::wcp(&pred, &gt).map_err(err)?.acc)
}

/// `(precision, recall, f)`.
#[pyfunction]
fn bcubed(pred: Vec<i64>, gt: Vec<i64>) -> PyResult<(f64, f64, f64)> {
    let b = ccl::bcubed(&pred, &gt).map_err(err)?;
    Ok((b.precision, b.recall, b.f))
}

/// Contrastive loss of one pair of projections; `y = 0` marks a positive.
#[pyfunction]
#[pyo3(signature = (p1, p2, y, margin=1.0, squared=false))]
fn contrastive_loss(p1: Vec<f64>, p2: Vec<f64>, y: u8, margin: f64, squared: bool) -> PyResult<f64> {
    if p1.len() != p2.len() {
        return Err(PyValueError::new_err("projections differ in length"));
    }
    if y > 1 {
        return Err(PyValueError::new_err("y must be 0 or 1"));
    }
    let mode = if squared { DistanceMode::Squared } else { DistanceMode::Euclidean };
    Ok(siamese::contrastive_loss(&p1, &p2, y, margin, mode))
}

/// Ward clustering at `num_clusters` (class count when omitted); returns
/// `(ids, labels, report)` with `report` `None` for unlabeled data.
#[pyfunction]
#[pyo3(signature = (fs, num_clusters=None, level="frame"))]
fn cluster<'py>(
    py: Python<'py>,
    fs: &PyFeatureSet,
    num_clusters: Option<usize>,
    level: &str,
) -> PyResult<(Vec<i64>, Vec<usize>, Option<Bound<'py, PyAny>>)> {
    let fs = l2_normalize(&fs.inner).map_err(err)?;
    let (labels, report) = pipeline::cluster_and_score(&fs, num_clusters, parse_level(level)?).map_err(err)?;
    let report = match report {
        Some(r) => Some(json_to_py(py, &serde_json_string(&r)?)?),
        None => None,
    };
    Ok((labels.ids, labels.labels, report))
}

fn serde_json_string<T: serde::Serialize>(v: &T) -> PyResult<String> {
    serde_json::to_string(v).map_err(|e| PyValueError::new_err(e.to_string()))
}

/// Full pipeline on an in-memory feature set; the report as a dict.
#[pyfunction]
#[pyo3(signature = (fs, config=None))]
fn run_pipeline<'py>(py: Python<'py>, fs: &PyFeatureSet, config: Option<&PyPipelineConfig>) -> PyResult<Bound<'py, PyDict>> {
    let cfg = config.map(|c| c.inner.clone()).unwrap_or_default();
    let report = py.detach(|| pipeline::run_pipeline_on(&fs.inner, &cfg)).map_err(err)?;
    let out = json_to_py(py, &report.to_json())?.cast_into::<PyDict>()?;
    if let Some(labels) = report.labels {
        out.set_item("labels", labels.labels)?;
        out.set_item("label_ids", labels.ids)?;
    }
    Ok(out)
}

/// The six pair-source combinations plus the baseline, as a dict.
#[pyfunction]
#[pyo3(signature = (fs, config=None))]
fn run_ablation<'py>(py: Python<'py>, fs: &PyFeatureSet, config: Option<&PyPipelineConfig>) -> PyResult<Bound<'py, PyAny>> {
    let cfg = config.map(|c| c.inner.clone()).unwrap_or_default();
    let report = py.detach(|| pipeline::run_ablation(&fs.inner, &cfg)).map_err(err)?;
    json_to_py(py, &serde_json_string(&report)?)
}

#[pymodule]
fn ccl_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyFeatureSet>()?;
    m.add_class::<PyPipelineConfig>()?;
    m.add_class::<PySiameseModel>()?;
    m.add_function(wrap_pyfunction!(synth, m)?)?;
    m.add_function(wrap_pyfunction!(finch, m)?)?;
    m.add_function(wrap_pyfunction!(ward_hac, m)?)?;
    m.add_function(wrap_pyfunction!(kmeans, m)?)?;
    m.add_function(wrap_pyfunction!(wcp, m)?)?;
    m.add_function(wrap_pyfunction!(bcubed, m)?)?;
    m.add_function(wrap_pyfunction!(contrastive_loss, m)?)?;
    m.add_function(wrap_pyfunction!(cluster, m)?)?;
    m.add_function(wrap_pyfunction!(run_pipeline, m)?)?;
    m.add_function(wrap_pyfunction!(run_ablation, m)?)?;
    Ok(())
}
