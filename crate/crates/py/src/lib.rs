//! Python bindings. Images cross the boundary as lists of rows; configs and
//! reports as JSON strings.

use pyo3::exceptions::{PyIOError, PyValueError};
use pyo3::prelude::*;

use esn2d::detectors::{self, median_gamma};
use esn2d::model_space;
use esn2d::pipeline::{self, PipelineConfig};
use esn2d::preprocess::{BScanImage, PreprocessConfig};
use esn2d::reservoir::{self, ReservoirConfig};
use esn2d::synthgpr::{self, AnomalyKind, SceneSpec};

fn py_err(e: esn2d::Error) -> PyErr {
    let msg = format!("{}: {e}", e.code());
    match e {
        esn2d::Error::Io { .. } => PyIOError::new_err(msg),
        _ => PyValueError::new_err(msg),
    }
}

fn image(rows: Vec<Vec<f64>>) -> PyResult<BScanImage> {
    BScanImage::from_rows(&rows).map_err(py_err)
}

type Rows = Vec<Vec<f64>>;
type Truth = Vec<(usize, usize, String)>;

fn rows(img: &BScanImage) -> Vec<Vec<f64>> {
    (0..img.rows()).map(|r| img.row(r).to_vec()).collect()
}

fn from_json<T: serde::de::DeserializeOwned + Default>(json: Option<&str>) -> PyResult<T> {
    match json {
        Some(s) => serde_json::from_str(s).map_err(|e| PyValueError::new_err(e.to_string())),
        None => Ok(T::default()),
    }
}

/// A point in model space: the embedded readout of one fitted window.
#[pyclass(module = "esn2d_py", from_py_object)]
#[derive(Clone)]
pub struct ModelVector {
    inner: model_space::ModelVector,
}

#[pymethods]
impl ModelVector {
    #[getter]
    fn phi(&self) -> Vec<f64> {
        self.inner.phi.clone()
    }

    #[getter]
    fn label(&self) -> Option<String> {
        self.inner.label.clone()
    }

    #[setter]
    fn set_label(&mut self, label: Option<String>) {
        self.inner.label = label;
    }

    #[getter]
    fn window_span(&self) -> (usize, usize) {
        self.inner.window_span
    }

    /// Squared model-space distance to `other`.
    fn distance(&self, other: &ModelVector) -> PyResult<f64> {
        model_space::model_distance(&self.inner, &other.inner).map_err(py_err)
    }

    fn __repr__(&self) -> String {
        format!(
            "ModelVector(dim={}, label={:?}, span={:?})",
            self.inner.phi.len(),
            self.inner.label,
            self.inner.window_span
        )
    }
}

fn inner(points: &[ModelVector]) -> Vec<model_space::ModelVector> {
    points.iter().map(|p| p.inner.clone()).collect()
}

/// Seeded 2D-ESN reservoir.
#[pyclass(module = "esn2d_py")]
pub struct Reservoir {
    inner: reservoir::ReservoirWeights,
}

#[pymethods]
impl Reservoir {
    #[new]
    #[pyo3(signature = (n_units=50, alpha=0.1, input_scale=1.0, density=0.1, ridge_lambda=1e-6, seed=0))]
    fn new(
        n_units: usize,
        alpha: f64,
        input_scale: f64,
        density: f64,
        ridge_lambda: f64,
        seed: u64,
    ) -> PyResult<Self> {
        let config = ReservoirConfig {
            n_units,
            alpha,
            input_scale,
            density,
            ridge_lambda,
            seed,
        };
        reservoir::init_reservoir(&config)
            .map(|inner| Self { inner })
            .map_err(py_err)
    }

    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        reservoir::ReservoirWeights::load(path.as_ref())
            .map(|inner| Self { inner })
            .map_err(py_err)
    }

    fn save(&self, path: &str) -> PyResult<()> {
        self.inner.save(path.as_ref(), false).map_err(py_err)
    }

    #[getter]
    fn fingerprint(&self) -> String {
        self.inner.fingerprint().to_string()
    }

    #[getter]
    fn n_units(&self) -> usize {
        self.inner.n_units()
    }

    /// Fits the readout to one window and embeds it.
    #[pyo3(signature = (window, label=None))]
    fn fit(&self, window: Vec<Vec<f64>>, label: Option<String>) -> PyResult<ModelVector> {
        let win = image(window)?;
        let m = reservoir::fit_window(&self.inner, &win).map_err(py_err)?;
        let mut v = model_space::embed(&m).with_span(0, win.cols());
        v.label = label;
        Ok(ModelVector { inner: v })
    }

    /// Fits every sliding window of an already preprocessed image.
    #[pyo3(signature = (img, width=300, stride=20))]
    fn fit_windows(
        &self,
        img: Vec<Vec<f64>>,
        width: usize,
        stride: usize,
    ) -> PyResult<Vec<ModelVector>> {
        let spec = esn2d::segmentation::WindowSpec {
            width_cols: width,
            stride_cols: stride,
        };
        let fitted = pipeline::fit_windows(&self.inner, &image(img)?, &spec).map_err(py_err)?;
        Ok(fitted
            .into_iter()
            .map(|f| ModelVector { inner: f.point })
            .collect())
    }
}

/// One-class SVM over model space.
#[pyclass(module = "esn2d_py")]
pub struct Ocsvm {
    inner: detectors::OcsvmModel,
}

#[pymethods]
impl Ocsvm {
    /// Trains on `points`; `gamma=None` uses the median heuristic times `gamma_scale`.
    #[staticmethod]
    #[pyo3(signature = (points, nu=0.05, gamma=None, gamma_scale=1.0))]
    fn train(
        points: Vec<ModelVector>,
        nu: f64,
        gamma: Option<f64>,
        gamma_scale: f64,
    ) -> PyResult<Self> {
        let pts = inner(&points);
        let g = gamma.unwrap_or_else(|| gamma_scale * median_gamma(&pts));
        detectors::train_ocsvm(&pts, nu, g)
            .map(|inner| Self { inner })
            .map_err(py_err)
    }

    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        detectors::OcsvmModel::load(path.as_ref())
            .map(|inner| Self { inner })
            .map_err(py_err)
    }

    fn save(&self, path: &str) -> PyResult<()> {
        self.inner.save(path.as_ref()).map_err(py_err)
    }

    /// `(inlier, decision value)`.
    fn classify(&self, p: &ModelVector) -> PyResult<(bool, f64)> {
        detectors::ocsvm_classify(&self.inner, &p.inner).map_err(py_err)
    }

    #[getter]
    fn n_support(&self) -> usize {
        self.inner.support_vectors.len()
    }
}

/// k-nearest-neighbour classifier over model space.
#[pyclass(module = "esn2d_py")]
pub struct Knn {
    inner: detectors::KnnModel,
}

#[pymethods]
impl Knn {
    #[new]
    #[pyo3(signature = (points, k=5))]
    fn new(points: Vec<ModelVector>, k: usize) -> PyResult<Self> {
        detectors::KnnModel::new(inner(&points), k)
            .map(|inner| Self { inner })
            .map_err(py_err)
    }

    fn classify(&self, p: &ModelVector) -> PyResult<String> {
        detectors::knn_classify(&self.inner, &p.inner).map_err(py_err)
    }
}

/// Leave-one-out KNN accuracy over labeled points.
#[pyfunction]
#[pyo3(signature = (points, k=5))]
fn leave_one_out_accuracy(points: Vec<ModelVector>, k: usize) -> PyResult<f64> {
    detectors::leave_one_out_accuracy(&inner(&points), k).map_err(py_err)
}

/// Synthetic road B-scan. `anomalies` holds `(kind, start_col, end_col)`.
/// Returns the image rows and the ground truth as `(start, end, kind)`.
#[pyfunction]
#[pyo3(signature = (cols, seed=0, anomalies=Vec::new()))]
fn generate_road(
    cols: usize,
    seed: u64,
    anomalies: Vec<(String, usize, usize)>,
) -> PyResult<(Rows, Truth)> {
    let mut spec = SceneSpec::road(cols, seed);
    for (kind, s, e) in anomalies {
        let kind: AnomalyKind = kind.parse().map_err(py_err)?;
        spec = spec.with_anomaly(kind, (s, e));
    }
    let (img, truth) = synthgpr::generate_bscan(&spec).map_err(py_err)?;
    Ok((
        rows(&img),
        truth
            .into_iter()
            .map(|t| (t.start_col, t.end_col, t.kind.to_string()))
            .collect(),
    ))
}

/// Applies the preprocessing chain; `config` is PreprocessConfig JSON.
#[pyfunction]
#[pyo3(signature = (img, config=None))]
fn preprocess(img: Vec<Vec<f64>>, config: Option<&str>) -> PyResult<Vec<Vec<f64>>> {
    let config: PreprocessConfig = from_json(config)?;
    config.apply(&image(img)?).map(|o| rows(&o)).map_err(py_err)
}

/// Full diagnosis of a raw image. `config` is PipelineConfig JSON; the base
/// classifier is trained on `normal_span`. Returns the report summary JSON.
#[pyfunction]
#[pyo3(signature = (img, normal_span, config=None))]
fn diagnose(
    py: Python<'_>,
    img: Vec<Vec<f64>>,
    normal_span: (usize, usize),
    config: Option<&str>,
) -> PyResult<String> {
    let mut config: PipelineConfig = from_json(config)?;
    config.normal_span = Some(normal_span);
    let raw = image(img)?;
    let summary = py.detach(|| {
        let w = reservoir::init_reservoir(&config.reservoir)?;
        let (report, _) = pipeline::diagnose(&raw, &w, None, &config)?;
        let mut s = report.summary_json();
        s["timing"] = report.timing_json();
        Ok::<_, esn2d::Error>(s)
    });
    Ok(summary.map_err(py_err)?.to_string())
}

#[pymodule]
fn esn2d_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<ModelVector>()?;
    m.add_class::<Reservoir>()?;
    m.add_class::<Ocsvm>()?;
    m.add_class::<Knn>()?;
    m.add_function(wrap_pyfunction!(leave_one_out_accuracy, m)?)?;
    m.add_function(wrap_pyfunction!(generate_road, m)?)?;
    m.add_function(wrap_pyfunction!(preprocess, m)?)?;
    m.add_function(wrap_pyfunction!(diagnose, m)?)?;
    Ok(())
}
