//! Python bindings: feature bags, codebooks, histograms, SVMs and the
//! experiment harness.

use std::path::PathBuf;

use pyo3::exceptions::{PyArithmeticError, PyValueError};
use pyo3::prelude::*;

use msmil::aggregate::{self, Method};
use msmil::classify::{self, ClassifierKind, Kernel};
use msmil::codebook::{self, KMeansParams};
use msmil::features::{self, FeatureBackend};
use msmil::harness::{self, ExperimentConfig, SyntheticSpec};
use msmil::slide::{self, Patch};
use msmil::{FeatureMatrix, Label, FEATURE_DIM};

fn to_py(e: msmil::Error) -> PyErr {
    match e.exit_code() {
        4 => PyArithmeticError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

fn parse<T: std::str::FromStr<Err = msmil::Error>>(s: &str) -> PyResult<T> {
    s.parse().map_err(to_py)
}

fn matrix(rows: Vec<Vec<f32>>, dim: usize) -> PyResult<FeatureMatrix> {
    FeatureMatrix::from_rows(dim, rows.iter()).map_err(to_py)
}

/// Per-slide feature vectors at scales 1, 1/2 and 1/4.
#[pyclass(name = "FeatureBag", module = "msmil", from_py_object)]
#[derive(Clone)]
struct PyFeatureBag {
    inner: features::FeatureBag,
}

#[pymethods]
impl PyFeatureBag {
    /// `scales` holds three equally long lists of 512-wide rows.
    #[new]
    fn new(slide_id: String, label: &str, scales: [Vec<Vec<f32>>; 3]) -> PyResult<Self> {
        let [a, b, c] = scales;
        let mats = [matrix(a, FEATURE_DIM)?, matrix(b, FEATURE_DIM)?, matrix(c, FEATURE_DIM)?];
        let inner = features::FeatureBag::new(slide_id, parse(label)?, mats).map_err(to_py)?;
        Ok(Self { inner })
    }

    #[getter]
    fn slide_id(&self) -> String {
        self.inner.slide_id.clone()
    }

    #[getter]
    fn label(&self) -> String {
        self.inner.label.to_string()
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    /// Rows of scale index 0, 1 or 2.
    fn scale(&self, index: usize) -> PyResult<Vec<Vec<f32>>> {
        let m = self
            .inner
            .scales()
            .get(index)
            .ok_or_else(|| PyValueError::new_err("scale index must be 0, 1 or 2"))?;
        Ok(m.iter_rows().map(<[f32]>::to_vec).collect())
    }

    fn __repr__(&self) -> String {
        format!(
            "FeatureBag(slide_id={:?}, label={}, n_patches={})",
            self.inner.slide_id,
            self.inner.label,
            self.inner.len()
        )
    }
}

fn unwrap_bags(bags: &[PyFeatureBag]) -> Vec<features::FeatureBag> {
    bags.iter().map(|b| b.inner.clone()).collect()
}

fn wrap_bags(bags: Vec<features::FeatureBag>) -> Vec<PyFeatureBag> {
    bags.into_iter().map(|inner| PyFeatureBag { inner }).collect()
}

#[pyfunction]
fn read_cache(path: PathBuf) -> PyResult<Vec<PyFeatureBag>> {
    features::read_cache(&path).map(wrap_bags).map_err(to_py)
}

#[pyfunction]
fn write_cache(path: PathBuf, bags: Vec<PyFeatureBag>) -> PyResult<()> {
    features::write_cache(&path, &unwrap_bags(&bags)).map_err(to_py)
}

/// Synthetic bags from a named preset.
#[pyfunction]
#[pyo3(signature = (preset, seed=0, slides_per_class=20, n_patches=50))]
fn generate_synthetic(preset: &str, seed: u64, slides_per_class: usize, n_patches: usize) -> PyResult<Vec<PyFeatureBag>> {
    let spec = SyntheticSpec {
        slides_per_class,
        n_patches,
        ..SyntheticSpec::preset(preset, seed).map_err(to_py)?
    };
    harness::generate_synthetic_dataset(&spec)
        .map(|d| wrap_bags(d.bags))
        .map_err(to_py)
}

/// Regions `(x, y, extent)` at scales 1, 1/2, 1/4 for a scale-1 origin.
#[pyfunction]
fn multiscale_regions(x: usize, y: usize, width: usize, height: usize) -> PyResult<Vec<(usize, usize, usize)>> {
    let specs = slide::build_multiscale_specs((x, y), (width, height)).map_err(to_py)?;
    Ok(specs.iter().map(|s| (s.origin_x, s.origin_y, s.extent())).collect())
}

/// Features of a 256×256 RGB patch (row-major bytes) from the test backend.
#[pyfunction]
fn test_backend_embed(seed: u64, pixels: Vec<u8>) -> PyResult<Vec<f32>> {
    let patch = Patch::new(pixels).map_err(to_py)?;
    features::TestBackend::new(seed).embed(&patch).map_err(PyValueError::new_err)
}

/// k-means++ / Lloyd; returns `(centroids, inertia)`.
#[pyfunction]
#[pyo3(signature = (data, k, seed=0))]
fn fit_kmeans(data: Vec<Vec<f32>>, k: usize, seed: u64) -> PyResult<(Vec<Vec<f32>>, f64)> {
    let dim = data.first().map_or(0, Vec::len);
    let cb = codebook::fit_kmeans(&matrix(data, dim)?, k, seed, &KMeansParams::default()).map_err(to_py)?;
    let centroids = cb.centroids().iter_rows().map(<[f32]>::to_vec).collect();
    Ok((centroids, cb.inertia().unwrap_or(f64::NAN)))
}

/// Codebook(s) of one aggregation method.
#[pyclass(name = "AggregationModel", module = "msmil")]
struct PyAggregationModel {
    inner: aggregate::AggregationModel,
}

#[pymethods]
impl PyAggregationModel {
    #[staticmethod]
    #[pyo3(signature = (method, bags, k, seed=0))]
    fn fit(py: Python<'_>, method: &str, bags: Vec<PyFeatureBag>, k: usize, seed: u64) -> PyResult<Self> {
        let method: Method = parse(method)?;
        let bags = unwrap_bags(&bags);
        py.detach(|| aggregate::fit_aggregator(method, &bags, k, seed, &KMeansParams::default()))
            .map(|inner| Self { inner })
            .map_err(to_py)
    }

    #[staticmethod]
    fn load(method: &str, path: PathBuf) -> PyResult<Self> {
        aggregate::AggregationModel::read(parse(method)?, &path)
            .map(|inner| Self { inner })
            .map_err(to_py)
    }

    /// Writes the codebook file(s) and returns their paths.
    fn save(&self, path: PathBuf) -> PyResult<Vec<PathBuf>> {
        self.inner.write(&path).map_err(to_py)
    }

    #[getter]
    fn method(&self) -> String {
        self.inner.method.to_string()
    }

    #[getter]
    fn k(&self) -> usize {
        self.inner.k()
    }

    #[getter]
    fn width(&self) -> usize {
        self.inner.histogram_width()
    }

    /// L1-normalized histogram of one bag.
    fn histogram(&self, bag: &PyFeatureBag) -> PyResult<Vec<f64>> {
        aggregate::histogram(&self.inner, &bag.inner)
            .map(|h| h.values)
            .map_err(to_py)
    }
}

/// Binary SVM; labels are "FN" and "PC".
#[pyclass(name = "SvmModel", module = "msmil")]
struct PySvmModel {
    inner: classify::SvmModel,
}

#[pymethods]
impl PySvmModel {
    #[staticmethod]
    #[pyo3(signature = (x, y, kernel="linear", c=1.0, gamma=1e-3))]
    fn train(py: Python<'_>, x: Vec<Vec<f64>>, y: Vec<String>, kernel: &str, c: f64, gamma: f64) -> PyResult<Self> {
        let y = y.iter().map(|s| parse::<Label>(s)).collect::<PyResult<Vec<_>>>()?;
        let kernel = match parse::<ClassifierKind>(kernel)? {
            ClassifierKind::Linear => Kernel::Linear,
            ClassifierKind::Rbf => Kernel::Rbf { gamma },
            ClassifierKind::Optimized => {
                return Err(PyValueError::new_err("use train_optimized for the grid search"));
            }
        };
        py.detach(|| classify::train_svm(&x, &y, kernel, c))
            .map(|inner| Self { inner })
            .map_err(to_py)
    }

    /// Grid search; returns the model and the chosen `(kernel, gamma, C)`.
    #[staticmethod]
    #[pyo3(signature = (x, y, seed=0))]
    fn train_optimized(
        py: Python<'_>,
        x: Vec<Vec<f64>>,
        y: Vec<String>,
        seed: u64,
    ) -> PyResult<(Self, (String, Option<f64>, f64))> {
        let y = y.iter().map(|s| parse::<Label>(s)).collect::<PyResult<Vec<_>>>()?;
        let (inner, report) = py
            .detach(|| classify::train_optimized(&x, &y, &mut msmil::rng::seeded(seed)))
            .map_err(to_py)?;
        let cell = report.chosen_cell();
        Ok((Self { inner }, (cell.kernel.name().to_owned(), cell.kernel.gamma(), cell.c)))
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        classify::SvmModel::read(&path).map(|inner| Self { inner }).map_err(to_py)
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        self.inner.write(&path).map_err(to_py)
    }

    fn decision_value(&self, x: Vec<f64>) -> PyResult<f64> {
        self.inner.decision_value(&x).map_err(to_py)
    }

    fn predict(&self, x: Vec<f64>) -> PyResult<String> {
        self.inner.predict(&x).map(|(l, _)| l.to_string()).map_err(to_py)
    }

    #[getter]
    fn n_support(&self) -> usize {
        self.inner.support_vectors().len()
    }

    #[getter]
    fn bias(&self) -> f64 {
        self.inner.bias
    }
}

/// Repeated stratified holdout; returns a dict with `accuracies`,
/// `mean_acc` and `std_acc`.
#[pyfunction]
#[pyo3(signature = (bags, method="baseline", k=64, classifier="linear", repetitions=512, seed=0, aug1=true, train_fraction=0.8))]
#[allow(clippy::too_many_arguments)]
fn run_experiment<'py>(
    py: Python<'py>,
    bags: Vec<PyFeatureBag>,
    method: &str,
    k: usize,
    classifier: &str,
    repetitions: usize,
    seed: u64,
    aug1: bool,
    train_fraction: f64,
) -> PyResult<Bound<'py, pyo3::types::PyDict>> {
    let bags = unwrap_bags(&bags);
    let config = ExperimentConfig {
        method: parse(method)?,
        k,
        classifier: parse(classifier)?,
        n_patches: bags.first().map_or(0, |b| b.len()),
        repetitions,
        seed,
        aug1,
        train_fraction,
        ..ExperimentConfig::default()
    };
    let result = py.detach(|| harness::run_experiment(&bags, &config)).map_err(to_py)?;
    let d = pyo3::types::PyDict::new(py);
    d.set_item("accuracies", result.accuracies)?;
    d.set_item("mean_acc", result.mean_acc)?;
    d.set_item("std_acc", result.std_acc)?;
    d.set_item("seconds", result.seconds)?;
    Ok(d)
}

#[pymodule]
#[pyo3(name = "msmil")]
fn msmil_module(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("FEATURE_DIM", FEATURE_DIM)?;
    m.add_class::<PyFeatureBag>()?;
    m.add_class::<PyAggregationModel>()?;
    m.add_class::<PySvmModel>()?;
    m.add_function(wrap_pyfunction!(read_cache, m)?)?;
    m.add_function(wrap_pyfunction!(write_cache, m)?)?;
    m.add_function(wrap_pyfunction!(generate_synthetic, m)?)?;
    m.add_function(wrap_pyfunction!(multiscale_regions, m)?)?;
    m.add_function(wrap_pyfunction!(test_backend_embed, m)?)?;
    m.add_function(wrap_pyfunction!(fit_kmeans, m)?)?;
    m.add_function(wrap_pyfunction!(run_experiment, m)?)?;
    Ok(())
}
