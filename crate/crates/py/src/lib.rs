//! Python bindings: region graphs, clusterings, covariance matrices, the
//! exact MSE machinery, design selection and the iterative CGC loop.
//!
//! Matrices cross the boundary as nested lists; batches as (covariates,
//! treatments, outcomes) row-major lists. Build with
//! `cargo build --release -p cgcut-py` and import the produced cdylib as
//! module `cgcut` (see python/smoke_test.py).

use nalgebra::DMatrix;
use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;

use cgcut_core as core;

fn err(e: core::Error) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn matrix_from_rows(rows: Vec<Vec<f64>>, what: &str) -> PyResult<DMatrix<f64>> {
    let n = rows.len();
    if n == 0 {
        return Err(PyValueError::new_err(format!("{what}: no rows")));
    }
    let cols = rows[0].len();
    if rows.iter().any(|r| r.len() != cols) {
        return Err(PyValueError::new_err(format!("{what}: ragged rows")));
    }
    Ok(DMatrix::from_fn(n, cols, |i, j| rows[i][j]))
}

fn matrix_to_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows()).map(|i| m.row(i).iter().copied().collect()).collect()
}

/// Spatial region graph over lattice cells.
#[pyclass(name = "RegionGraph", frozen)]
struct PyRegionGraph {
    inner: core::RegionGraph,
}

#[pymethods]
impl PyRegionGraph {
    /// Build a lattice grid: "square" (side), "rectangle" (width, height),
    /// "circle" (radius) or "fan" (radius, sectors).
    #[staticmethod]
    #[pyo3(signature = (shape, side=None, width=None, height=None, radius=None, sectors=None))]
    fn grid(
        shape: &str,
        side: Option<u32>,
        width: Option<u32>,
        height: Option<u32>,
        radius: Option<u32>,
        sectors: Option<u32>,
    ) -> PyResult<Self> {
        let need = |v: Option<u32>, name: &str| {
            v.ok_or_else(|| PyValueError::new_err(format!("{shape} grid needs {name}=")))
        };
        let shape = match shape {
            "square" => core::GridShape::Square { side: need(side, "side")? },
            "rectangle" => core::GridShape::Rectangle {
                width: need(width, "width")?,
                height: need(height, "height")?,
            },
            "circle" => core::GridShape::Circle { radius: need(radius, "radius")? },
            "fan" => core::GridShape::Fan {
                radius: need(radius, "radius")?,
                sectors: need(sectors, "sectors")?,
            },
            other => return Err(PyValueError::new_err(format!("unknown shape '{other}'"))),
        };
        Ok(PyRegionGraph { inner: core::build_grid(&shape).map_err(err)? })
    }

    fn region_count(&self) -> usize {
        self.inner.region_count()
    }

    fn coords(&self) -> Vec<(f64, f64)> {
        self.inner.coords().to_vec()
    }

    fn neighborhood(&self, i: usize) -> PyResult<Vec<usize>> {
        if i >= self.inner.region_count() {
            return Err(PyValueError::new_err(format!("region {i} out of range")));
        }
        Ok(self.inner.neighborhood(i).to_vec())
    }

    fn edges(&self) -> Vec<(usize, usize)> {
        self.inner.edges()
    }

    fn max_degree(&self) -> usize {
        self.inner.max_degree()
    }

    fn __repr__(&self) -> String {
        format!("RegionGraph(R={})", self.inner.region_count())
    }
}

/// Partition of regions into clusters.
#[pyclass(name = "Clustering", frozen, from_py_object)]
#[derive(Clone)]
struct PyClustering {
    inner: core::Clustering,
}

#[pymethods]
impl PyClustering {
    #[new]
    fn new(labels: Vec<usize>) -> PyResult<Self> {
        Ok(PyClustering { inner: core::Clustering::new(labels).map_err(err)? })
    }

    #[staticmethod]
    fn global_design(region_count: usize) -> Self {
        PyClustering { inner: core::Clustering::global(region_count) }
    }

    #[staticmethod]
    fn individual_design(region_count: usize) -> Self {
        PyClustering { inner: core::Clustering::individual(region_count) }
    }

    #[staticmethod]
    fn tiling(graph: &PyRegionGraph, tiles_per_side: usize) -> PyResult<Self> {
        Ok(PyClustering {
            inner: core::tiling_partition(&graph.inner, tiles_per_side).map_err(err)?,
        })
    }

    fn labels(&self) -> Vec<usize> {
        self.inner.labels().to_vec()
    }

    fn cluster_count(&self) -> usize {
        self.inner.cluster_count()
    }

    fn boundary(&self, graph: &PyRegionGraph, cluster: usize) -> PyResult<Vec<usize>> {
        core::boundary_regions(&graph.inner, &self.inner, cluster).map_err(err)
    }

    fn touch_count(&self, graph: &PyRegionGraph, region: usize) -> usize {
        core::cluster_touch_count(&graph.inner, &self.inner, region)
    }

    fn shared_count(&self, graph: &PyRegionGraph, i: usize, j: usize) -> usize {
        core::shared_cluster_count(&graph.inner, &self.inner, i, j)
    }

    fn __repr__(&self) -> String {
        format!("Clustering(R={}, m={})", self.inner.len(), self.inner.cluster_count())
    }
}

/// Symmetric residual covariance.
#[pyclass(name = "CovarianceMatrix", frozen, from_py_object)]
#[derive(Clone)]
struct PyCovariance {
    inner: core::CovarianceMatrix,
}

#[pymethods]
impl PyCovariance {
    /// One of the model structures: "constant", "truncated-constant",
    /// "exponential" (index-distance based).
    #[staticmethod]
    fn model(model: &str, rho: f64, region_count: usize) -> PyResult<Self> {
        let model: core::CovModel = model.parse().map_err(err)?;
        Ok(PyCovariance {
            inner: core::build_model_covariance(model, rho, region_count).map_err(err)?,
        })
    }

    #[staticmethod]
    fn from_rows(rows: Vec<Vec<f64>>) -> PyResult<Self> {
        let m = matrix_from_rows(rows, "covariance")?;
        Ok(PyCovariance {
            inner: core::CovarianceMatrix::new(m, core::CovarianceOrigin::External).map_err(err)?,
        })
    }

    fn values(&self) -> Vec<Vec<f64>> {
        matrix_to_rows(self.inner.values())
    }

    fn dim(&self) -> usize {
        self.inner.dim()
    }

    fn positive_part(&self) -> Vec<Vec<f64>> {
        matrix_to_rows(&core::positive_part(&self.inner))
    }

    fn is_decaying(&self, graph: &PyRegionGraph) -> PyResult<bool> {
        core::check_decaying(&graph.inner, &self.inner).map_err(err)
    }

    fn __repr__(&self) -> String {
        format!("CovarianceMatrix(R={})", self.inner.dim())
    }
}

/// Experiment batch: row-major (n x R) covariates, binary treatments and
/// outcomes, plus the design the treatments were drawn under.
#[pyclass(name = "ExperimentBatch", frozen)]
struct PyBatch {
    inner: core::ExperimentBatch,
}

#[pymethods]
impl PyBatch {
    #[new]
    fn new(
        covariates: Vec<Vec<f64>>,
        treatments: Vec<Vec<u8>>,
        outcomes: Vec<Vec<f64>>,
        design: PyClustering,
    ) -> PyResult<Self> {
        let o = matrix_from_rows(covariates, "covariates")?;
        let y = matrix_from_rows(outcomes, "outcomes")?;
        let n = treatments.len();
        if n == 0 || treatments.iter().any(|r| r.len() != treatments[0].len()) {
            return Err(PyValueError::new_err("treatments: empty or ragged rows"));
        }
        let a = DMatrix::from_fn(n, treatments[0].len(), |i, j| treatments[i][j]);
        Ok(PyBatch {
            inner: core::ExperimentBatch::new(o, a, y, design.inner).map_err(err)?,
        })
    }

    fn n_reps(&self) -> usize {
        self.inner.n_reps()
    }

    fn covariates(&self) -> Vec<Vec<f64>> {
        matrix_to_rows(&self.inner.covariates)
    }

    fn treatments(&self) -> Vec<Vec<u8>> {
        (0..self.inner.n_reps())
            .map(|t| self.inner.treatments.row(t).iter().copied().collect())
            .collect()
    }

    fn outcomes(&self) -> Vec<Vec<f64>> {
        matrix_to_rows(&self.inner.outcomes)
    }

    fn __repr__(&self) -> String {
        format!("ExperimentBatch(n={}, R={})", self.inner.n_reps(), self.inner.region_count())
    }
}

/// Fitted outcome model.
#[pyclass(name = "OutcomeModel", frozen)]
struct PyOutcomeModel {
    inner: core::OutcomeModel,
}

#[pymethods]
impl PyOutcomeModel {
    #[staticmethod]
    fn zero() -> Self {
        PyOutcomeModel { inner: core::OutcomeModel::Zero }
    }

    fn __repr__(&self) -> String {
        match &self.inner {
            core::OutcomeModel::Zero => "OutcomeModel(zero)".into(),
            core::OutcomeModel::PooledRidge { .. } => "OutcomeModel(pooled-ridge)".into(),
            core::OutcomeModel::Oracle { .. } => "OutcomeModel(oracle)".into(),
        }
    }
}

/// Synthetic spatial environment (sinusoidal outcomes, Gaussian residuals).
#[pyclass(name = "SyntheticEnv")]
struct PyEnv {
    inner: core::SyntheticEnv,
}

#[pymethods]
impl PyEnv {
    #[new]
    #[pyo3(signature = (graph, covariance, signal_strength=0.025, covariate_low=0.5, covariate_high=1.5, seed=0))]
    fn new(
        graph: &PyRegionGraph,
        covariance: &PyCovariance,
        signal_strength: f64,
        covariate_low: f64,
        covariate_high: f64,
        seed: u64,
    ) -> PyResult<Self> {
        let law = if covariate_low == covariate_high {
            core::CovariateLaw::Constant(covariate_low)
        } else {
            core::CovariateLaw::Uniform { low: covariate_low, high: covariate_high }
        };
        Ok(PyEnv {
            inner: core::SyntheticEnv::new(
                graph.inner.clone(),
                covariance.inner.clone(),
                signal_strength,
                law,
                seed,
            )
            .map_err(err)?,
        })
    }

    fn sample_batch(&mut self, design: &PyClustering, n: usize) -> PyResult<PyBatch> {
        Ok(PyBatch { inner: self.inner.sample_batch(&design.inner, n).map_err(err)? })
    }

    fn true_ate(&self) -> f64 {
        self.inner.true_ate()
    }

    #[pyo3(signature = (n_mc=core::DEFAULT_MC_REPS))]
    fn mc_ate(&self, n_mc: usize) -> PyResult<(f64, f64)> {
        self.inner.mc_ate(n_mc).map_err(err)
    }

    fn reset(&mut self) {
        self.inner.reset();
    }
}

/// Exact randomization variance of the DR estimator, scaled by 1/n_reps.
#[pyfunction]
#[pyo3(signature = (graph, clustering, covariance, n_reps=1, p=0.5))]
fn sigma1_squared(
    graph: &PyRegionGraph,
    clustering: &PyClustering,
    covariance: &PyCovariance,
    n_reps: usize,
    p: f64,
) -> PyResult<f64> {
    core::sigma1_squared(&graph.inner, &clustering.inner, &covariance.inner, n_reps, p).map_err(err)
}

/// MSE decomposition at p = 0.5 as a dict of components.
#[pyfunction]
#[pyo3(signature = (graph, clustering, covariance, n_reps=1))]
fn decompose(
    py: Python<'_>,
    graph: &PyRegionGraph,
    clustering: &PyClustering,
    covariance: &PyCovariance,
    n_reps: usize,
) -> PyResult<Py<pyo3::types::PyDict>> {
    let b = core::decompose(&graph.inner, &clustering.inner, &covariance.inner, n_reps)
        .map_err(err)?;
    let dict = pyo3::types::PyDict::new(py);
    dict.set_item("da", b.da)?;
    dict.set_item("sc", b.sc)?;
    dict.set_item("i1", b.i1)?;
    dict.set_item("j1", b.j1)?;
    dict.set_item("j2", b.j2)?;
    dict.set_item("j3", b.j3)?;
    dict.set_item("sigma1_sq", b.sigma1_sq)?;
    dict.set_item("total", b.total)?;
    Ok(dict.into())
}

/// Brute-force per-experiment variance by enumerating cluster assignments.
#[pyfunction]
#[pyo3(signature = (graph, clustering, covariance, p=0.5))]
fn exact_variance_oracle(
    graph: &PyRegionGraph,
    clustering: &PyClustering,
    covariance: &PyCovariance,
    p: f64,
) -> PyResult<f64> {
    core::exact_variance_oracle(&graph.inner, &clustering.inner, &covariance.inner, p).map_err(err)
}

/// Graph-cut surrogate objective for any cluster count.
#[pyfunction]
#[pyo3(signature = (graph, covariance, clustering, n_reps=1))]
fn surrogate(
    graph: &PyRegionGraph,
    covariance: &PyCovariance,
    clustering: &PyClustering,
    n_reps: usize,
) -> PyResult<f64> {
    core::surrogate_general(&graph.inner, &covariance.inner, &clustering.inner, n_reps)
        .map_err(err)
}

/// Clustering, chosen cluster count, and the `(m, sigma1_sq)` sweep table.
type SelectionTuple = (PyClustering, usize, Vec<(usize, f64)>);

/// Sweep cluster counts and return (clustering, chosen_m, [(m, sigma1_sq)]).
#[pyfunction]
#[pyo3(signature = (graph, covariance, n_reps=1, m_max=None, seed=0))]
fn select_design(
    graph: &PyRegionGraph,
    covariance: &PyCovariance,
    n_reps: usize,
    m_max: Option<usize>,
    seed: u64,
) -> PyResult<SelectionTuple> {
    let cfg = core::SpectralConfig { rng_seed: seed, ..Default::default() };
    let sel =
        core::select_design(&graph.inner, &covariance.inner, n_reps, m_max, &cfg).map_err(err)?;
    Ok((PyClustering { inner: sel.clustering }, sel.chosen_m, sel.per_m_mse))
}

/// Importance-sampling ATE estimate.
#[pyfunction]
fn is_estimate(graph: &PyRegionGraph, batch: &PyBatch) -> f64 {
    core::is_estimate(&graph.inner, &batch.inner)
}

/// Doubly-robust ATE estimate under a fitted (or zero) outcome model.
#[pyfunction]
fn dr_estimate(graph: &PyRegionGraph, batch: &PyBatch, model: &PyOutcomeModel) -> PyResult<f64> {
    core::dr_estimate(&graph.inner, &batch.inner, &model.inner).map_err(err)
}

/// Pooled ridge fit ("pooled-ridge") or the zero model ("zero").
#[pyfunction]
#[pyo3(signature = (graph, batch, kind="pooled-ridge", penalty=1e-3))]
fn fit_outcome_model(
    graph: &PyRegionGraph,
    batch: &PyBatch,
    kind: &str,
    penalty: f64,
) -> PyResult<PyOutcomeModel> {
    let spec = match kind {
        "zero" => core::RegressionSpec::Zero,
        "pooled-ridge" => core::RegressionSpec::PooledRidge { penalty },
        other => return Err(PyValueError::new_err(format!("unknown regression '{other}'"))),
    };
    let model =
        core::fit_outcome_model(&graph.inner, std::slice::from_ref(&batch.inner), spec)
            .map_err(err)?;
    Ok(PyOutcomeModel { inner: model })
}

/// Cross-fitted DR estimate with K folds.
#[pyfunction]
#[pyo3(signature = (graph, batch, folds=2, kind="pooled-ridge", penalty=1e-3))]
fn crossfit_dr(
    graph: &PyRegionGraph,
    batch: &PyBatch,
    folds: usize,
    kind: &str,
    penalty: f64,
) -> PyResult<f64> {
    let spec = match kind {
        "zero" => core::RegressionSpec::Zero,
        "pooled-ridge" => core::RegressionSpec::PooledRidge { penalty },
        other => return Err(PyValueError::new_err(format!("unknown regression '{other}'"))),
    };
    core::crossfit_dr(&graph.inner, std::slice::from_ref(&batch.inner), folds, spec).map_err(err)
}

/// Run the iterative loop on a synthetic environment. Returns a dict with
/// the final estimate and per-round records.
#[pyfunction]
#[pyo3(signature = (env, batch_size, total_repetitions, shrinkage=0.1, ridge_penalty=1e-3, m_max=None, seed=0, initial=None, cumulative=true))]
#[allow(clippy::too_many_arguments)]
fn run_cgc(
    py: Python<'_>,
    env: &mut PyEnv,
    batch_size: usize,
    total_repetitions: usize,
    shrinkage: f64,
    ridge_penalty: f64,
    m_max: Option<usize>,
    seed: u64,
    initial: Option<PyClustering>,
    cumulative: bool,
) -> PyResult<Py<pyo3::types::PyDict>> {
    let cfg = core::CgcConfig {
        batch_size,
        total_repetitions,
        initial_design: initial.map(|c| c.inner),
        covariance_mode: if cumulative {
            core::CovarianceMode::Cumulative
        } else {
            core::CovarianceMode::SingleBatch
        },
        shrinkage,
        regression: core::RegressionSpec::PooledRidge { penalty: ridge_penalty },
        m_max,
        crossfit_folds: None,
        spectral: core::SpectralConfig { rng_seed: seed, ..Default::default() },
        seed,
    };
    let trace = core::run_cgc(&mut env.inner, &cfg).map_err(err)?;
    let dict = pyo3::types::PyDict::new(py);
    dict.set_item("final_ate", trace.final_ate)?;
    let rounds: Vec<(usize, usize, f64)> =
        trace.rounds.iter().map(|r| (r.round, r.chosen_m, r.ate)).collect();
    dict.set_item("rounds", rounds)?;
    let designs: Vec<Vec<usize>> =
        trace.rounds.iter().map(|r| r.design.labels().to_vec()).collect();
    dict.set_item("round_designs", designs)?;
    Ok(dict.into())
}

#[pymodule]
fn cgcut(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyRegionGraph>()?;
    m.add_class::<PyClustering>()?;
    m.add_class::<PyCovariance>()?;
    m.add_class::<PyBatch>()?;
    m.add_class::<PyOutcomeModel>()?;
    m.add_class::<PyEnv>()?;
    m.add_function(wrap_pyfunction!(sigma1_squared, m)?)?;
    m.add_function(wrap_pyfunction!(decompose, m)?)?;
    m.add_function(wrap_pyfunction!(exact_variance_oracle, m)?)?;
    m.add_function(wrap_pyfunction!(surrogate, m)?)?;
    m.add_function(wrap_pyfunction!(select_design, m)?)?;
    m.add_function(wrap_pyfunction!(is_estimate, m)?)?;
    m.add_function(wrap_pyfunction!(dr_estimate, m)?)?;
    m.add_function(wrap_pyfunction!(fit_outcome_model, m)?)?;
    m.add_function(wrap_pyfunction!(crossfit_dr, m)?)?;
    m.add_function(wrap_pyfunction!(run_cgc, m)?)?;
    Ok(())
}
