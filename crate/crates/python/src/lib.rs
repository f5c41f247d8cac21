//! Python bindings: sphere building, models, indexes, synthetic data and the
//! end-to-end pipeline. Vectors cross the boundary as lists of floats.

use std::path::PathBuf;

use hsq_core::eval::{evaluate, GroundTruth};
use hsq_core::io::{self, LabelRecord, SearchResult};
use hsq_core::pipeline::{run_pipeline as run, sphere_from_files, PipelineInputs};
use hsq_core::quantizer::{encoding_cost, icm_encode};
use hsq_core::synth::{generate, SynthSpec};
use hsq_core::{
    Codebooks, HsqError, PipelineConfig, RetrievalIndex, SemanticSphere, TransformLayer,
};
use nalgebra::DMatrix;
use pyo3::exceptions::{PyArithmeticError, PyOSError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

fn to_py(e: HsqError) -> PyErr {
    let msg = e.to_string();
    if e.is_numerical() {
        return PyArithmeticError::new_err(msg);
    }
    match e {
        HsqError::Io { .. } => PyOSError::new_err(msg),
        _ => PyValueError::new_err(msg),
    }
}

/// Column-per-vector matrix from a list of equal-length rows.
fn columns(rows: &[Vec<f64>]) -> PyResult<DMatrix<f64>> {
    let d = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != d) {
        return Err(PyValueError::new_err("all vectors must have the same length"));
    }
    Ok(DMatrix::from_fn(d, rows.len(), |i, j| rows[j][i]))
}

fn rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.column_iter().map(|c| c.iter().copied().collect()).collect()
}

/// JSON object from a flat dict of bools, ints, floats and strings.
fn dict_to_json(d: Option<&Bound<'_, PyDict>>) -> PyResult<serde_json::Value> {
    let mut map = serde_json::Map::new();
    if let Some(d) = d {
        for (k, v) in d.iter() {
            let key: String = k.extract()?;
            let val = if let Ok(b) = v.extract::<bool>() {
                serde_json::Value::from(b)
            } else if let Ok(i) = v.extract::<i64>() {
                serde_json::Value::from(i)
            } else if let Ok(f) = v.extract::<f64>() {
                serde_json::Value::from(f)
            } else if let Ok(s) = v.extract::<String>() {
                serde_json::Value::from(s)
            } else {
                return Err(PyValueError::new_err(format!("unsupported value for {key}")));
            };
            map.insert(key, val);
        }
    }
    Ok(serde_json::Value::Object(map))
}

fn config_from(d: Option<&Bound<'_, PyDict>>) -> PyResult<PipelineConfig> {
    let cfg: PipelineConfig = serde_json::from_value(dict_to_json(d)?)
        .map_err(|e| PyValueError::new_err(format!("config error: {e}")))?;
    cfg.validate().map_err(to_py)?;
    Ok(cfg)
}

/// Merged, normalized tag embeddings with their second-moment matrix.
#[pyclass(name = "SemanticSphere", module = "hsq")]
struct PySphere {
    inner: SemanticSphere,
}

#[pymethods]
impl PySphere {
    /// Builds a sphere from a tag embedding file and a tag assignment file.
    #[staticmethod]
    #[pyo3(signature = (tags, assignments, config=None))]
    fn build(tags: PathBuf, assignments: PathBuf, config: Option<&Bound<'_, PyDict>>) -> PyResult<Self> {
        let cfg = config_from(config)?;
        let (inner, _) = sphere_from_files(&tags, &assignments, &cfg.sphere_params()).map_err(to_py)?;
        Ok(PySphere { inner })
    }

    #[staticmethod]
    fn load(dir: PathBuf) -> PyResult<Self> {
        Ok(PySphere { inner: SemanticSphere::load(&dir).map_err(to_py)? })
    }

    fn save(&self, dir: PathBuf) -> PyResult<()> {
        self.inner.save(&dir, None).map_err(to_py)
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    #[getter]
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    fn vectors(&self) -> Vec<Vec<f64>> {
        rows(self.inner.vectors())
    }

    /// `Σ_S` as a list of rows (symmetric).
    fn covariance(&self) -> Vec<Vec<f64>> {
        rows(self.inner.covariance())
    }

    fn __repr__(&self) -> String {
        format!("SemanticSphere(tags={}, dim={})", self.inner.len(), self.inner.dim())
    }
}

/// Trained feature-to-sphere layer.
#[pyclass(name = "Model", module = "hsq")]
struct PyModel {
    inner: TransformLayer,
}

#[pymethods]
impl PyModel {
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        let (inner, _) = io::read_checkpoint(&path).map_err(to_py)?;
        Ok(PyModel { inner })
    }

    /// Fresh layer with seeded uniform weights.
    #[new]
    #[pyo3(signature = (dim, feature_dim, seed=0))]
    fn new(dim: usize, feature_dim: usize, seed: u64) -> Self {
        PyModel { inner: TransformLayer::init(dim, feature_dim, seed) }
    }

    fn embed(&self, features: Vec<Vec<f64>>) -> PyResult<Vec<Vec<f64>>> {
        Ok(rows(&self.inner.embed_all(&columns(&features)?).map_err(to_py)?))
    }

    fn __repr__(&self) -> String {
        format!("Model(dim={}, feature_dim={})", self.inner.dim(), self.inner.feature_dim())
    }
}

/// Additive-quantization index with lookup-table search.
#[pyclass(name = "Index", module = "hsq")]
struct PyIndex {
    inner: RetrievalIndex,
}

#[pymethods]
impl PyIndex {
    #[staticmethod]
    fn load(dir: PathBuf) -> PyResult<Self> {
        Ok(PyIndex { inner: RetrievalIndex::load(&dir).map_err(to_py)? })
    }

    fn save(&self, dir: PathBuf) -> PyResult<()> {
        self.inner.save(&dir).map_err(to_py)
    }

    /// Top `top_n` `(id, score)` pairs for one embedded query.
    #[pyo3(signature = (query, top_n=10))]
    fn search(&self, query: Vec<f64>, top_n: usize) -> PyResult<Vec<(u32, f64)>> {
        self.inner.search(&query, top_n).map_err(to_py)
    }

    fn search_many(&self, queries: Vec<Vec<f64>>, top_n: usize) -> PyResult<Vec<Vec<(u32, f64)>>> {
        self.inner.search_all(&columns(&queries)?, top_n).map_err(to_py)
    }

    /// Codes as lists of ints, one per database point.
    fn codes(&self) -> Vec<Vec<u32>> {
        self.inner.codes().rows().map(|r| r.iter().map(|&c| c as u32).collect()).collect()
    }

    fn ids(&self) -> Vec<u32> {
        self.inner.ids().to_vec()
    }

    fn reconstruct(&self, code: Vec<usize>) -> PyResult<Vec<f64>> {
        let b = self.inner.books();
        if code.len() != b.num_books() || code.iter().any(|&c| c >= b.num_codewords()) {
            return Err(PyValueError::new_err("code does not match the codebooks"));
        }
        let code: Vec<u8> = code.into_iter().map(|c| c as u8).collect();
        Ok(b.reconstruct(&code))
    }

    #[getter]
    fn code_bits(&self) -> usize {
        self.inner.books().code_bits()
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    fn __repr__(&self) -> String {
        let b = self.inner.books();
        format!("Index(n={}, M={}, K={}, dim={})", self.inner.len(), b.num_books(), b.num_codewords(), b.dim())
    }
}

/// ICM encoding of one vector; returns the code and its Σ-weighted cost.
#[pyfunction]
#[pyo3(signature = (r, codebooks, sigma, sweeps=3))]
fn encode(r: Vec<f64>, codebooks: Vec<Vec<Vec<f64>>>, sigma: Vec<Vec<f64>>, sweeps: usize) -> PyResult<(Vec<u32>, f64)> {
    let m = codebooks.len();
    let k = codebooks.first().map_or(0, Vec::len);
    let d = r.len();
    if codebooks.iter().any(|b| b.len() != k || b.iter().any(|c| c.len() != d)) {
        return Err(PyValueError::new_err("codebooks must be M × K × dim"));
    }
    let flat: Vec<f64> = codebooks.into_iter().flatten().flatten().collect();
    let books = Codebooks::from_flat(m, k, d, flat).map_err(to_py)?;
    let sigma = columns(&sigma)?;
    if sigma.shape() != (d, d) {
        return Err(PyValueError::new_err("sigma must be dim × dim"));
    }
    if sweeps == 0 {
        return Err(PyValueError::new_err("sweeps must be >= 1"));
    }
    let code = icm_encode(&r, &books, &sigma, sweeps);
    let cost = encoding_cost(&r, &code, &books, &sigma);
    Ok((code.into_iter().map(u32::from).collect(), cost))
}

/// Writes a synthetic corpus; keyword arguments override generator fields.
#[pyfunction]
#[pyo3(signature = (out, **spec))]
fn synth(out: PathBuf, spec: Option<&Bound<'_, PyDict>>) -> PyResult<usize> {
    let spec: SynthSpec = serde_json::from_value(dict_to_json(spec)?)
        .map_err(|e| PyValueError::new_err(format!("synth spec: {e}")))?;
    let data = generate(&spec).map_err(to_py)?;
    data.write(&out).map_err(to_py)?;
    Ok(spec.database_size())
}

/// Runs the full pipeline on a synthetic data directory and returns the
/// metric report as a JSON string.
#[pyfunction]
#[pyo3(signature = (data, out, **config))]
fn run_pipeline(data: PathBuf, out: PathBuf, config: Option<&Bound<'_, PyDict>>) -> PyResult<String> {
    let cfg = config_from(config)?;
    let inputs = PipelineInputs::from_synth_dir(&data).map_err(to_py)?;
    let res = run(&inputs, &cfg, &out).map_err(to_py)?;
    serde_json::to_string(&res.report).map_err(|e| PyValueError::new_err(e.to_string()))
}

/// MAP@R of a results file against a labels file.
#[pyfunction]
#[pyo3(signature = (results, labels, database, cutoff=5000))]
fn mean_average_precision(results: PathBuf, labels: PathBuf, database: Vec<u32>, cutoff: usize) -> PyResult<f64> {
    let results: Vec<SearchResult> = io::read_jsonl(&results).map_err(to_py)?;
    let labels: Vec<LabelRecord> = io::read_jsonl(&labels).map_err(to_py)?;
    Ok(evaluate(&results, &GroundTruth::from_records(&labels), &database, cutoff).map)
}

#[pymodule]
fn hsq(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PySphere>()?;
    m.add_class::<PyModel>()?;
    m.add_class::<PyIndex>()?;
    m.add_function(wrap_pyfunction!(encode, m)?)?;
    m.add_function(wrap_pyfunction!(synth, m)?)?;
    m.add_function(wrap_pyfunction!(run_pipeline, m)?)?;
    m.add_function(wrap_pyfunction!(mean_average_precision, m)?)?;
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    Ok(())
}
