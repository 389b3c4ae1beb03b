//! Python bindings. Matrices cross the boundary as lists of rows.

use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;

use ccpd::analysis::{self, GroupLabels, SyntheticSpec, TTestKind};
use ccpd::compression::{self, CompressionBasis};
use ccpd::reproducibility::{self as repro, SelectionOptions};
use ccpd::{CoupledDataset, Dims, FactorMatrix, PartitionedFactors, Ranks, SolverConfig};

fn err(e: ccpd::Error) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn rows(m: &FactorMatrix) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

fn dataset(tensors: &[PyRef<'_, Tensor3>]) -> PyResult<CoupledDataset> {
    CoupledDataset::new(tensors.iter().map(|t| t.inner.clone()).collect()).map_err(err)
}

#[pyclass(frozen, skip_from_py_object)]
#[derive(Clone)]
pub struct Tensor3 {
    inner: ccpd::Tensor3,
}

#[pymethods]
impl Tensor3 {
    /// `data` is laid out with the first index varying fastest.
    #[new]
    fn new(dims: (usize, usize, usize), data: Vec<f64>) -> PyResult<Self> {
        let inner = ccpd::Tensor3::new([dims.0, dims.1, dims.2], data).map_err(err)?;
        Ok(Self { inner })
    }

    #[getter]
    fn dims(&self) -> (usize, usize, usize) {
        let [i, j, k] = self.inner.dims();
        (i, j, k)
    }

    fn data(&self) -> Vec<f64> {
        self.inner.data().to_vec()
    }

    fn get(&self, i: usize, j: usize, k: usize) -> PyResult<f64> {
        let [ni, nj, nk] = self.inner.dims();
        if i >= ni || j >= nj || k >= nk {
            return Err(PyValueError::new_err(format!("index ({i}, {j}, {k}) out of range for {:?}", self.inner.dims())));
        }
        Ok(self.inner.get(i, j, k))
    }

    /// Mode-`mode` unfolding (1, 2 or 3).
    fn unfold(&self, mode: usize) -> PyResult<Vec<Vec<f64>>> {
        Ok(rows(&self.inner.unfold(mode).map_err(err)?))
    }

    fn frobenius_norm_sq(&self) -> f64 {
        self.inner.frobenius_norm_sq()
    }

    fn __repr__(&self) -> String {
        format!("Tensor3(dims={:?})", self.inner.dims())
    }
}

/// Shared and distinct factor blocks of a coupled model.
#[pyclass(frozen, skip_from_py_object)]
#[derive(Clone)]
pub struct Factors {
    inner: PartitionedFactors,
}

impl Factors {
    fn check(&self, k: usize) -> PyResult<()> {
        if k >= self.inner.datasets() {
            return Err(PyValueError::new_err(format!("dataset {k} out of range")));
        }
        Ok(())
    }
}

#[pymethods]
impl Factors {
    #[getter]
    fn shared_rank(&self) -> usize {
        self.inner.s_shared.ncols()
    }

    #[getter]
    fn distinct_ranks(&self) -> Vec<usize> {
        self.inner.ranks().distinct
    }

    #[getter]
    fn datasets(&self) -> usize {
        self.inner.datasets()
    }

    #[getter]
    fn s_shared(&self) -> Vec<Vec<f64>> {
        rows(&self.inner.s_shared)
    }

    #[getter]
    fn v_shared(&self) -> Vec<Vec<f64>> {
        rows(&self.inner.v_shared)
    }

    fn s_distinct(&self, k: usize) -> PyResult<Vec<Vec<f64>>> {
        self.check(k)?;
        Ok(rows(&self.inner.s_distinct[k]))
    }

    fn v_distinct(&self, k: usize) -> PyResult<Vec<Vec<f64>>> {
        self.check(k)?;
        Ok(rows(&self.inner.v_distinct[k]))
    }

    fn t_shared(&self, k: usize) -> PyResult<Vec<Vec<f64>>> {
        self.check(k)?;
        Ok(rows(&self.inner.t_shared[k]))
    }

    fn t_distinct(&self, k: usize) -> PyResult<Vec<Vec<f64>>> {
        self.check(k)?;
        Ok(rows(&self.inner.t_distinct[k]))
    }

    /// Model tensor of dataset `k`.
    fn reconstruct(&self, k: usize) -> PyResult<Tensor3> {
        self.check(k)?;
        Ok(Tensor3 { inner: self.inner.reconstruct(k).map_err(err)? })
    }

    fn __repr__(&self) -> String {
        format!("Factors(shared={}, distinct={:?})", self.shared_rank(), self.distinct_ranks())
    }
}

#[pyclass(frozen, get_all)]
pub struct Solution {
    factors: Factors,
    cost_trace: Vec<f64>,
    iterations: usize,
    converged: bool,
    seed: u64,
}

impl Solution {
    fn from_result(r: ccpd::SolveResult) -> Self {
        Self {
            factors: Factors { inner: r.theta },
            cost_trace: r.cost_trace,
            iterations: r.iterations,
            converged: r.converged,
            seed: r.seed,
        }
    }
}

#[pymethods]
impl Solution {
    #[getter]
    fn final_cost(&self) -> f64 {
        *self.cost_trace.last().unwrap_or(&f64::NAN)
    }
}

#[pyclass(frozen, get_all)]
pub struct Selection {
    best: Py<Solution>,
    index: usize,
    scores: Vec<f64>,
    failed_seeds: Vec<u64>,
}

#[pyclass(frozen)]
pub struct Basis {
    inner: CompressionBasis,
}

#[pymethods]
impl Basis {
    #[getter]
    fn dims(&self) -> (usize, usize) {
        (self.inner.d1(), self.inner.d2())
    }

    /// Maps factors fit to compressed data back to the original space.
    fn expand(&self, factors: &Factors) -> PyResult<Factors> {
        Ok(Factors { inner: compression::expand_factors(&factors.inner, &self.inner).map_err(err)? })
    }
}

#[pyclass(frozen, get_all)]
pub struct FmsScores {
    shared: Vec<f64>,
    distinct: Vec<Vec<f64>>,
    mean: Option<f64>,
    min_block_mean: Option<f64>,
}

#[pyclass(frozen, get_all)]
pub struct TTest {
    t: f64,
    df: f64,
    p: f64,
    significant: bool,
    mean0: f64,
    mean1: f64,
}

fn solver_config(shared: usize, distinct: Vec<usize>, lam: f64, max_iters: usize, rel_tol: f64, seed: u64) -> PyResult<SolverConfig> {
    let mut cfg = SolverConfig::new(Ranks::new(shared, distinct).map_err(err)?, lam);
    cfg.max_iters = max_iters;
    cfg.rel_tol = rel_tol;
    cfg.seed = seed;
    cfg.validate().map_err(err)?;
    Ok(cfg)
}

/// Fits one random start with block coordinate descent.
#[pyfunction]
#[allow(clippy::too_many_arguments)]
#[pyo3(signature = (tensors, shared, distinct, lam = 0.0, max_iters = 500, rel_tol = 1e-8, seed = 0))]
fn solve(
    py: Python<'_>,
    tensors: Vec<PyRef<'_, Tensor3>>,
    shared: usize,
    distinct: Vec<usize>,
    lam: f64,
    max_iters: usize,
    rel_tol: f64,
    seed: u64,
) -> PyResult<Solution> {
    let data = dataset(&tensors)?;
    let cfg = solver_config(shared, distinct, lam, max_iters, rel_tol, seed)?;
    let res = py.detach(|| ccpd::bcd_solve(&data, &cfg)).map_err(err)?;
    Ok(Solution::from_result(res))
}

/// Runs `n_starts` seeds and keeps the run most similar to the others.
#[pyfunction]
#[pyo3(signature = (tensors, shared, distinct, lam = 0.0, n_starts = 20, seed = 0, max_iters = 500, jobs = None))]
#[allow(clippy::too_many_arguments)]
fn multi_start(
    py: Python<'_>,
    tensors: Vec<PyRef<'_, Tensor3>>,
    shared: usize,
    distinct: Vec<usize>,
    lam: f64,
    n_starts: usize,
    seed: u64,
    max_iters: usize,
    jobs: Option<usize>,
) -> PyResult<Selection> {
    let data = dataset(&tensors)?;
    let cfg = solver_config(shared, distinct, lam, max_iters, ccpd::model::defaults::rel_tol(), seed)?;
    let (mut runs, sel) = py
        .detach(|| {
            let runs = repro::multi_start(&data, &cfg, n_starts, jobs)?;
            let sel = repro::select_most_reproducible(&runs, SelectionOptions::default())?;
            Ok((runs, sel))
        })
        .map_err(err)?;
    let best = runs.runs.swap_remove(sel.index);
    Ok(Selection {
        best: Py::new(py, Solution::from_result(best))?,
        index: sel.index,
        scores: sel.scores,
        failed_seeds: runs.failures.iter().map(|f| f.seed).collect(),
    })
}

#[pyfunction]
#[pyo3(signature = (factors, tensors, lam = 0.0))]
fn cost(factors: &Factors, tensors: Vec<PyRef<'_, Tensor3>>, lam: f64) -> PyResult<f64> {
    ccpd::cost(&factors.inner, &dataset(&tensors)?, lam).map_err(err)
}

/// Negative matched similarity of two runs; lower means more alike.
#[pyfunction]
fn pdistance(a: &Factors, b: &Factors) -> PyResult<f64> {
    Ok(repro::pdistance(&a.inner, &b.inner).map_err(err)?.pdistance)
}

/// Returns the compressed tensors and the basis used.
#[pyfunction]
fn compress(tensors: Vec<PyRef<'_, Tensor3>>, d1: usize, d2: usize) -> PyResult<(Vec<Tensor3>, Basis)> {
    let data = dataset(&tensors)?;
    let basis = compression::fit_basis(&data, d1, d2).map_err(err)?;
    let reduced = compression::compress(&data, &basis).map_err(err)?;
    let out = reduced.tensors().iter().map(|t| Tensor3 { inner: t.clone() }).collect();
    Ok((out, Basis { inner: basis }))
}

/// Synthetic data with known factors; returns `(tensors, truth)`.
#[pyfunction]
#[pyo3(signature = (subjects, voxels, times, shared, distinct, snr_db = None, collinearity = 0.0, seed = 0))]
#[allow(clippy::too_many_arguments)]
fn simulate(
    subjects: usize,
    voxels: usize,
    times: Vec<usize>,
    shared: usize,
    distinct: Vec<usize>,
    snr_db: Option<f64>,
    collinearity: f64,
    seed: u64,
) -> PyResult<(Vec<Tensor3>, Factors)> {
    let spec = SyntheticSpec {
        dims: Dims { subjects, voxels, times },
        ranks: Ranks::new(shared, distinct).map_err(err)?,
        noise_snr_db: snr_db,
        collinearity,
        seed,
        group_effect: None,
    };
    let sim = analysis::generate_synthetic(&spec).map_err(err)?;
    let tensors = sim.data.tensors().iter().map(|t| Tensor3 { inner: t.clone() }).collect();
    Ok((tensors, Factors { inner: sim.truth }))
}

#[pyfunction]
fn factor_match_score(estimate: &Factors, truth: &Factors) -> PyResult<FmsScores> {
    let r = analysis::factor_match_score(&estimate.inner, &truth.inner).map_err(err)?;
    Ok(FmsScores { min_block_mean: r.min_block_mean(), shared: r.shared, distinct: r.distinct, mean: r.mean })
}

/// Two-sample t-test of group 1 against group 0 (labels are 0 or 1).
#[pyfunction]
#[pyo3(signature = (values, labels, pooled = false))]
fn ttest(values: Vec<f64>, labels: Vec<u8>, pooled: bool) -> PyResult<TTest> {
    let labels = GroupLabels::new(labels).map_err(err)?;
    let kind = if pooled { TTestKind::Pooled } else { TTestKind::Welch };
    let r = analysis::two_sample_ttest_with(&values, &labels, kind).map_err(err)?;
    Ok(TTest { t: r.t, df: r.df, p: r.p, significant: r.significant, mean0: r.mean0, mean1: r.mean1 })
}

/// Returns `(z, thresholded)`.
#[pyfunction]
#[pyo3(signature = (values, z_thresh = analysis::DEFAULT_Z_THRESHOLD))]
fn zscore_threshold(values: Vec<f64>, z_thresh: f64) -> PyResult<(Vec<f64>, Vec<f64>)> {
    let m = analysis::zscore_threshold(&values, z_thresh).map_err(err)?;
    Ok((m.z, m.thresholded))
}

#[pymodule(name = "ccpd")]
fn ccpd_module(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    m.add_class::<Tensor3>()?;
    m.add_class::<Factors>()?;
    m.add_class::<Solution>()?;
    m.add_class::<Selection>()?;
    m.add_class::<Basis>()?;
    m.add_class::<FmsScores>()?;
    m.add_class::<TTest>()?;
    m.add_function(wrap_pyfunction!(solve, m)?)?;
    m.add_function(wrap_pyfunction!(multi_start, m)?)?;
    m.add_function(wrap_pyfunction!(cost, m)?)?;
    m.add_function(wrap_pyfunction!(pdistance, m)?)?;
    m.add_function(wrap_pyfunction!(compress, m)?)?;
    m.add_function(wrap_pyfunction!(simulate, m)?)?;
    m.add_function(wrap_pyfunction!(factor_match_score, m)?)?;
    m.add_function(wrap_pyfunction!(ttest, m)?)?;
    m.add_function(wrap_pyfunction!(zscore_threshold, m)?)?;
    Ok(())
}
