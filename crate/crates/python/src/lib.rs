//! Python bindings for `probedesign`.

use std::path::PathBuf;

use pyo3::exceptions::{PyIOError, PyValueError};
use pyo3::prelude::*;

use probedesign::experiment::{self, ExperimentConfig};
use probedesign::{DesignMethod, DesignMatrix, Error, FwConfig};

fn to_py(err: Error) -> PyErr {
    match err {
        Error::Io { .. } => PyIOError::new_err(err.to_string()),
        other => {
            let mut message = other.to_string();
            let mut source = std::error::Error::source(&other);
            while let Some(s) = source {
                message.push_str(": ");
                message.push_str(&s.to_string());
                source = s.source();
            }
            PyValueError::new_err(message)
        }
    }
}

/// A network topology with its path set and design matrix.
#[pyclass(name = "Topology", module = "probedesign")]
struct PyTopology {
    inner: probedesign::Topology,
    paths: probedesign::PathSet,
    x: DesignMatrix,
}

impl PyTopology {
    fn wrap(inner: probedesign::Topology) -> PyResult<Self> {
        let paths = probedesign::path_set(&inner).map_err(to_py)?;
        let x = probedesign::design_matrix(&paths).map_err(to_py)?;
        Ok(PyTopology { inner, paths, x })
    }
}

#[pymethods]
impl PyTopology {
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Self::wrap(probedesign::Topology::load(path).map_err(to_py)?)
    }

    /// Random geometric topology in the unit square.
    #[staticmethod]
    #[pyo3(signature = (nodes, radius=None, seed=0))]
    fn generate(nodes: usize, radius: Option<f64>, seed: u64) -> PyResult<Self> {
        let radius = radius.unwrap_or_else(|| probedesign::topology::default_radius(nodes));
        Self::wrap(probedesign::Topology::generate_geometric(nodes, radius, seed).map_err(to_py)?)
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        self.inner.save(path).map_err(to_py)
    }

    #[getter]
    fn n_nodes(&self) -> usize {
        self.inner.nodes().len()
    }

    #[getter]
    fn n_edges(&self) -> usize {
        self.inner.n_edges()
    }

    #[getter]
    fn n_paths(&self) -> usize {
        self.paths.len()
    }

    /// Edge indices of every path.
    fn paths(&self) -> Vec<Vec<usize>> {
        self.paths.paths().iter().map(|p| p.edges.clone()).collect()
    }

    /// (source, destination) node indices of every path.
    fn endpoints(&self) -> Vec<(usize, usize)> {
        self.paths.endpoints()
    }

    fn latencies(&self) -> Vec<f64> {
        self.inner.latencies()
    }

    /// Dense design matrix as a list of rows.
    fn design_matrix(&self) -> Vec<Vec<f64>> {
        let dense = self.x.to_dense();
        (0..dense.nrows()).map(|i| dense.row(i).iter().copied().collect()).collect()
    }

    /// Computes a probing distribution with one of `a_optimal`,
    /// `e_optimal`, `qr`, `uniform`.
    #[pyo3(signature = (method="a_optimal", iterations=300, excess_budget=None))]
    fn design(&self, method: &str, iterations: usize, excess_budget: Option<f64>) -> PyResult<PyDistribution> {
        let method: DesignMethod = method.parse().map_err(to_py)?;
        let constraints = probedesign::build_constraints(&self.paths.endpoints(), excess_budget).map_err(to_py)?;
        let config = FwConfig { iterations, ..FwConfig::default() };
        let inner = probedesign::compute_design(method, &self.x, &constraints, &config).map_err(to_py)?;
        Ok(PyDistribution { inner })
    }

    /// Per-path predicted-error bounds for a distribution at budget `n`.
    #[pyo3(signature = (alpha, n, sigma=0.01, delta=0.05))]
    fn predicted_error_bound(&self, alpha: Vec<f64>, n: usize, sigma: f64, delta: f64) -> PyResult<Vec<f64>> {
        let b = probedesign::predicted_error_bound(&alpha, n, &self.x, sigma, delta).map_err(to_py)?;
        Ok(b.bounds)
    }

    /// Weights of the edge-first path distribution used by the average
    /// error.
    fn path_weights(&self) -> PyResult<Vec<f64>> {
        Ok(probedesign::path_distribution(&self.x).map_err(to_py)?.weights)
    }

    fn __repr__(&self) -> String {
        format!("Topology(nodes={}, edges={}, paths={})", self.inner.nodes().len(), self.inner.n_edges(), self.paths.len())
    }
}

/// A probing distribution over paths.
#[pyclass(name = "ProbingDistribution", module = "probedesign")]
struct PyDistribution {
    inner: probedesign::ProbingDistribution,
}

#[pymethods]
impl PyDistribution {
    #[getter]
    fn alpha(&self) -> Vec<f64> {
        self.inner.alpha.clone()
    }

    #[getter]
    fn design_name(&self) -> &str {
        &self.inner.design_name
    }

    #[getter]
    fn objective_trace(&self) -> Vec<f64> {
        self.inner.objective_trace.clone()
    }

    fn to_json(&self) -> String {
        serde_json::to_string(&self.inner).expect("distribution serializes")
    }

    fn __len__(&self) -> usize {
        self.inner.alpha.len()
    }

    fn __repr__(&self) -> String {
        format!("ProbingDistribution(design={:?}, paths={})", self.inner.design_name, self.inner.alpha.len())
    }
}

/// Runs an experiment from a JSON config string and returns the results
/// table as CSV text. Writes output files when `output_dir` is given.
#[pyfunction]
#[pyo3(signature = (config_json, output_dir=None))]
fn run_experiment(py: Python<'_>, config_json: &str, output_dir: Option<PathBuf>) -> PyResult<String> {
    let config: ExperimentConfig =
        serde_json::from_str(config_json).map_err(|e| PyValueError::new_err(format!("invalid config: {e}")))?;
    let table = py.detach(|| experiment::run_experiment(&config)).map_err(to_py)?;
    if let Some(dir) = output_dir {
        experiment::emit_results(&table, dir).map_err(to_py)?;
    }
    Ok(experiment::results_csv(&table))
}

#[pymodule]
fn _probedesign(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyTopology>()?;
    m.add_class::<PyDistribution>()?;
    m.add_function(wrap_pyfunction!(run_experiment, m)?)?;
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    Ok(())
}
