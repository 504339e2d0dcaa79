//! Python bindings: images, masks, edge operators, metrics, synthetic data,
//! checkpoints and the experiment runner.

use std::path::PathBuf;

use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;

use ecg::data::{synth_fundus, DomainStyle, SynthSpec};
use ecg::edgeops::{self, CannyParams};
use ecg::eval::{self, ExperimentSpec};
use ecg::gantrain::{self, GanConfig, GanRunOptions};
use ecg::networks::{Architecture, GeneratorSpec, ModelBundle};

fn err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

/// Float image in [0, 1], stored row-major with interleaved channels.
#[pyclass(name = "Image", module = "edgecyclegan", from_py_object)]
#[derive(Clone)]
pub struct PyImage(ecg::Image);

#[pymethods]
impl PyImage {
    #[new]
    fn new(height: usize, width: usize, channels: usize, data: Vec<f32>) -> PyResult<Self> {
        ecg::Image::new(height, width, channels, data).map(Self).map_err(err)
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        ecg::Image::load(path).map(Self).map_err(err)
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        self.0.save(path).map_err(err)
    }

    #[getter]
    fn shape(&self) -> (usize, usize, usize) {
        self.0.dims()
    }

    fn data(&self) -> Vec<f32> {
        self.0.data().to_vec()
    }

    fn get(&self, y: usize, x: usize, c: usize) -> f32 {
        self.0.get(y, x, c)
    }

    fn to_grayscale(&self) -> Self {
        Self(self.0.to_grayscale())
    }

    fn resize(&self, height: usize, width: usize) -> PyResult<Self> {
        self.0.resize(height, width).map(Self).map_err(err)
    }

    fn __repr__(&self) -> String {
        let (h, w, c) = self.0.dims();
        format!("Image({h}x{w}x{c})")
    }
}

/// Binary mask, 1 = vessel.
#[pyclass(name = "SegMask", module = "edgecyclegan", from_py_object)]
#[derive(Clone)]
pub struct PySegMask(ecg::SegMask);

#[pymethods]
impl PySegMask {
    #[new]
    fn new(height: usize, width: usize, data: Vec<u8>) -> PyResult<Self> {
        ecg::SegMask::new(height, width, data).map(Self).map_err(err)
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        ecg::SegMask::load(path).map(Self).map_err(err)
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        self.0.save(path).map_err(err)
    }

    #[getter]
    fn shape(&self) -> (usize, usize) {
        self.0.dims()
    }

    fn data(&self) -> Vec<u8> {
        self.0.data().to_vec()
    }

    fn count_ones(&self) -> usize {
        self.0.count_ones()
    }

    fn __repr__(&self) -> String {
        let (h, w) = self.0.dims();
        format!("SegMask({h}x{w}, {} on)", self.0.count_ones())
    }
}

/// Canny thresholds on the Sobel/4 magnitude of the smoothed gray image.
#[pyclass(name = "CannyParams", module = "edgecyclegan", from_py_object)]
#[derive(Clone)]
pub struct PyCannyParams(CannyParams);

#[pymethods]
impl PyCannyParams {
    #[new]
    #[pyo3(signature = (sigma = 1.0, low = 0.1, high = 0.2, soft_temperature = 50.0))]
    fn new(sigma: f64, low: f64, high: f64, soft_temperature: f64) -> PyResult<Self> {
        let p = CannyParams { sigma, low, high, soft_temperature };
        p.validate().map_err(err)?;
        Ok(Self(p))
    }

    #[getter]
    fn sigma(&self) -> f64 {
        self.0.sigma
    }

    #[getter]
    fn low(&self) -> f64 {
        self.0.low
    }

    #[getter]
    fn high(&self) -> f64 {
        self.0.high
    }

    fn __repr__(&self) -> String {
        format!("CannyParams(sigma={}, low={}, high={})", self.0.sigma, self.0.low, self.0.high)
    }
}

fn params(p: Option<PyRef<'_, PyCannyParams>>) -> CannyParams {
    p.map(|p| p.0).unwrap_or_default()
}

fn rows<T: Copy>(h: usize, w: usize, data: &[T]) -> Vec<Vec<T>> {
    data.chunks(w).take(h).map(|r| r.to_vec()).collect()
}

/// Binary Canny edge map as a list of rows.
#[pyfunction]
#[pyo3(signature = (image, params = None))]
fn canny_edges(image: PyRef<'_, PyImage>, params: Option<PyRef<'_, PyCannyParams>>) -> Vec<Vec<bool>> {
    let e = edgeops::canny_edges(&image.0, &self::params(params));
    let (h, w) = e.dims();
    let bits: Vec<bool> = e.data().iter().map(|&v| v != 0).collect();
    rows(h, w, &bits)
}

/// Differentiable edge strength map as a list of rows.
#[pyfunction]
#[pyo3(signature = (image, params = None))]
fn soft_edges(image: PyRef<'_, PyImage>, params: Option<PyRef<'_, PyCannyParams>>) -> Vec<Vec<f64>> {
    let e = edgeops::soft_edges(&image.0, &self::params(params));
    let (h, w) = e.dims();
    rows(h, w, e.data())
}

/// Edge F-measure between the Canny maps of two images.
#[pyfunction]
#[pyo3(signature = (pred, reference, tolerance_px = 1, params = None))]
fn edge_f_measure(
    pred: PyRef<'_, PyImage>,
    reference: PyRef<'_, PyImage>,
    tolerance_px: usize,
    params: Option<PyRef<'_, PyCannyParams>>,
) -> PyResult<f64> {
    let p = self::params(params);
    edgeops::edge_f_measure(&edgeops::canny_edges(&pred.0, &p), &edgeops::canny_edges(&reference.0, &p), tolerance_px)
        .map_err(err)
}

#[pyfunction]
#[pyo3(signature = (pred, gt, fov = None))]
fn dice_score(pred: PyRef<'_, PySegMask>, gt: PyRef<'_, PySegMask>, fov: Option<PyRef<'_, PySegMask>>) -> PyResult<f64> {
    eval::dice_score(&pred.0, &gt.0, fov.as_deref().map(|m| &m.0)).map_err(err)
}

#[pyfunction]
#[pyo3(signature = (pred, gt, fov = None))]
fn precision_recall(
    pred: PyRef<'_, PySegMask>,
    gt: PyRef<'_, PySegMask>,
    fov: Option<PyRef<'_, PySegMask>>,
) -> PyResult<(f64, f64)> {
    eval::precision_recall(&pred.0, &gt.0, fov.as_deref().map(|m| &m.0)).map_err(err)
}

#[pyfunction]
fn cycle_loss(x: PyRef<'_, PyImage>, x_rec: PyRef<'_, PyImage>, y: PyRef<'_, PyImage>, y_rec: PyRef<'_, PyImage>) -> PyResult<f64> {
    gantrain::cycle_loss(&x.0, &x_rec.0, &y.0, &y_rec.0).map_err(err)
}

#[pyfunction]
#[pyo3(signature = (x, x_rec, y, y_rec, params = None))]
fn edge_loss(
    x: PyRef<'_, PyImage>,
    x_rec: PyRef<'_, PyImage>,
    y: PyRef<'_, PyImage>,
    y_rec: PyRef<'_, PyImage>,
    params: Option<PyRef<'_, PyCannyParams>>,
) -> PyResult<f64> {
    gantrain::edge_loss(&x.0, &x_rec.0, &y.0, &y_rec.0, &self::params(params)).map_err(err)
}

/// Synthetic fundus images with vessel masks; `style` is "warm" or "pale".
#[pyfunction]
#[pyo3(signature = (count, image_size = 128, style = "warm", seed = 0))]
fn synth(count: usize, image_size: usize, style: &str, seed: u64) -> PyResult<Vec<(PyImage, PySegMask)>> {
    let style = match style {
        "warm" => DomainStyle::warm(),
        "pale" => DomainStyle::pale(),
        other => return Err(err(format!("unknown style {other:?}, expected \"warm\" or \"pale\""))),
    };
    let ds = synth_fundus(&SynthSpec { count, image_size, style, seed, ..Default::default() }).map_err(err)?;
    let labels = ds.labels().map_err(err)?.to_vec();
    Ok(ds.images.into_iter().zip(labels).map(|(i, m)| (PyImage(i), PySegMask(m))).collect())
}

/// A network with its architecture and weights.
#[pyclass(name = "Model", module = "edgecyclegan")]
pub struct PyModel(ModelBundle);

#[pymethods]
impl PyModel {
    #[staticmethod]
    #[pyo3(signature = (base_filters = 64, residual_blocks = 9, input_channels = 3, seed = 0))]
    fn generator(base_filters: usize, residual_blocks: usize, input_channels: usize, seed: u64) -> PyResult<Self> {
        let spec = GeneratorSpec { input_channels, base_filters, residual_blocks, ..Default::default() };
        ModelBundle::build(Architecture::Generator(spec), seed).map(Self).map_err(err)
    }

    #[staticmethod]
    fn load(dir: PathBuf) -> PyResult<Self> {
        ModelBundle::load(dir).map(Self).map_err(err)
    }

    fn save(&self, dir: PathBuf) -> PyResult<PathBuf> {
        self.0.save(dir).map_err(err)
    }

    fn fingerprint(&self) -> PyResult<String> {
        self.0.fingerprint().map_err(err)
    }

    fn parameter_count(&self) -> usize {
        self.0.parameter_count()
    }

    /// Runs a generator over images of matching channel count.
    fn translate(&self, images: Vec<PyRef<'_, PyImage>>) -> PyResult<Vec<PyImage>> {
        let imgs: Vec<ecg::Image> = images.iter().map(|i| i.0.clone()).collect();
        let out = gantrain::translate(&self.0, &imgs).map_err(err)?;
        Ok(out.into_iter().map(PyImage).collect())
    }
}

/// Default translation-stage configuration as JSON.
#[pyfunction]
fn default_gan_config() -> PyResult<String> {
    serde_json::to_string_pretty(&GanConfig::default()).map_err(err)
}

/// Trains both translators; `config` is a JSON GanConfig (missing keys use
/// defaults). Returns `(G, F)` mapping A to B and back.
#[pyfunction]
#[pyo3(signature = (domain_a, domain_b, config = "{}", output_dir = None))]
fn train_gan(
    domain_a: Vec<PyRef<'_, PyImage>>,
    domain_b: Vec<PyRef<'_, PyImage>>,
    config: &str,
    output_dir: Option<PathBuf>,
) -> PyResult<(PyModel, PyModel)> {
    let cfg: GanConfig = serde_json::from_str(config).map_err(err)?;
    let a: Vec<ecg::Image> = domain_a.iter().map(|i| i.0.clone()).collect();
    let b: Vec<ecg::Image> = domain_b.iter().map(|i| i.0.clone()).collect();
    let opts = GanRunOptions { output_dir, ..Default::default() };
    let out = gantrain::train_edgecyclegan(&a, &b, &cfg, &opts).map_err(err)?;
    Ok((PyModel(out.g), PyModel(out.f)))
}

/// Runs one experiment arm ("baseline", "cyclegan" or "edgecyclegan") from a
/// JSON ExperimentSpec and returns the metrics report as JSON.
#[pyfunction]
fn run_experiment(spec: &str, method: &str) -> PyResult<String> {
    let spec: ExperimentSpec = serde_json::from_str(spec).map_err(err)?;
    let report = match method {
        "baseline" => eval::run_baseline(&spec),
        "cyclegan" => eval::run_adapted(&spec, false),
        "edgecyclegan" => eval::run_adapted(&spec, true),
        other => return Err(err(format!("unknown method {other:?}"))),
    }
    .map_err(err)?;
    serde_json::to_string_pretty(&report).map_err(err)
}

#[pymodule]
fn edgecyclegan(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyImage>()?;
    m.add_class::<PySegMask>()?;
    m.add_class::<PyCannyParams>()?;
    m.add_class::<PyModel>()?;
    m.add_function(wrap_pyfunction!(canny_edges, m)?)?;
    m.add_function(wrap_pyfunction!(soft_edges, m)?)?;
    m.add_function(wrap_pyfunction!(edge_f_measure, m)?)?;
    m.add_function(wrap_pyfunction!(dice_score, m)?)?;
    m.add_function(wrap_pyfunction!(precision_recall, m)?)?;
    m.add_function(wrap_pyfunction!(cycle_loss, m)?)?;
    m.add_function(wrap_pyfunction!(edge_loss, m)?)?;
    m.add_function(wrap_pyfunction!(synth, m)?)?;
    m.add_function(wrap_pyfunction!(default_gan_config, m)?)?;
    m.add_function(wrap_pyfunction!(train_gan, m)?)?;
    m.add_function(wrap_pyfunction!(run_experiment, m)?)?;
    Ok(())
}
