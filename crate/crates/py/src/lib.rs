//! Python bindings for `dan_core`.
//!
//! Errors from the core crate surface as `ValueError`.

#![allow(clippy::needless_range_loop)]

use dan_core::dsf::{run_dsf, TaggedMessage};
use dan_core::engines::{danla_phi, NewtonBounds};
use dan_core::graph::{generate_erdos_renyi, generate_random_tree, generate_strongly_connected_digraph};
use dan_core::harness::RunResult;
use dan_core::linalg::{rank1_truncate, symmetric_eigen, SymmetricMatrix};
use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;

fn err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn symmetric(rows: Vec<Vec<f64>>) -> PyResult<SymmetricMatrix> {
    let p = rows.len();
    if rows.iter().any(|r| r.len() != p) {
        return Err(PyValueError::new_err("matrix must be square"));
    }
    for i in 0..p {
        for j in 0..i {
            if rows[i][j] != rows[j][i] {
                return Err(PyValueError::new_err(format!("matrix is not symmetric at ({i}, {j})")));
            }
        }
    }
    Ok(SymmetricMatrix::from_dense_upper(&rows))
}

#[pyclass(module = "dan_py", frozen)]
pub struct Graph(dan_core::Graph);

#[pymethods]
impl Graph {
    #[new]
    #[pyo3(signature = (n, edges, directed=false))]
    fn new(n: usize, edges: Vec<(usize, usize)>, directed: bool) -> PyResult<Self> {
        dan_core::Graph::new(n, directed, edges).map(Self).map_err(err)
    }

    #[staticmethod]
    fn random_tree(n: usize, seed: u64) -> Self {
        Self(generate_random_tree(n, seed).into_graph())
    }

    #[staticmethod]
    fn erdos_renyi(n: usize, seed: u64) -> PyResult<Self> {
        generate_erdos_renyi(n, seed).map(Self).map_err(err)
    }

    #[staticmethod]
    #[pyo3(signature = (n, seed, extra_p=0.1))]
    fn strongly_connected_digraph(n: usize, seed: u64, extra_p: f64) -> Self {
        Self(generate_strongly_connected_digraph(n, extra_p, seed))
    }

    #[staticmethod]
    fn directed_cycle(n: usize) -> Self {
        Self(dan_core::Graph::directed_cycle(n))
    }

    #[getter]
    fn node_count(&self) -> usize {
        self.0.node_count()
    }

    #[getter]
    fn directed(&self) -> bool {
        self.0.is_directed()
    }

    fn edges(&self) -> Vec<(usize, usize)> {
        self.0.edges()
    }

    fn is_tree(&self) -> bool {
        self.0.is_tree()
    }

    fn diameter(&self) -> PyResult<usize> {
        self.0.diameter().map_err(err)
    }

    fn __repr__(&self) -> String {
        format!(
            "Graph(n={}, directed={}, edges={})",
            self.0.node_count(),
            self.0.is_directed(),
            self.0.edge_count()
        )
    }
}

/// Result of one flooding execution.
#[pyclass(module = "dan_py", frozen, get_all)]
pub struct FloodResult {
    pub rounds: usize,
    /// Transmissions per round.
    pub transmissions: Vec<usize>,
    /// Cumulative scalars sent by each node at the end.
    pub scalars_sent: Vec<u64>,
    /// Per node, the origins it holds, ascending.
    pub info_sets: Vec<Vec<usize>>,
}

/// Floods one payload per node over `graph`. Runs the default round budget
/// unless `rounds` is given.
#[pyfunction]
#[pyo3(signature = (graph, payloads, rounds=None))]
fn flood(graph: &Graph, payloads: Vec<Vec<f64>>, rounds: Option<usize>) -> PyResult<FloodResult> {
    let msgs = payloads
        .into_iter()
        .enumerate()
        .map(|(i, p)| TaggedMessage::new(i, p))
        .collect();
    let out = run_dsf(&graph.0, msgs, rounds).map_err(err)?;
    Ok(FloodResult {
        rounds: out.reports.len(),
        transmissions: out.reports.iter().map(|r| r.transmissions.len()).collect(),
        scalars_sent: out
            .reports
            .last()
            .map_or_else(|| vec![0; graph.0.node_count()], |r| r.cumulative_scalars.clone()),
        info_sets: out.states.iter().map(|s| s.info_set().keys().copied().collect()).collect(),
    })
}

#[pyfunction]
fn polyak_stepsize(grad_norm: f64, mu: f64, lipschitz: f64) -> f64 {
    dan_core::polyak_stepsize(grad_norm, mu, lipschitz)
}

#[pyfunction]
fn danla_threshold(mu: f64, hessian_upper: f64, c: f64) -> f64 {
    dan_core::danla_threshold(mu, hessian_upper, c)
}

#[pyfunction]
fn danla_stepsize(grad_norm: f64, r_hat: f64, mu: f64, lipschitz: f64, hessian_upper: f64, c: f64) -> f64 {
    dan_core::danla_stepsize(grad_norm, r_hat, mu, lipschitz, hessian_upper, c)
}

#[pyfunction]
#[pyo3(name = "danla_phi")]
fn danla_phi_py(mu: f64, lipschitz: f64, hessian_upper: f64, r: f64) -> f64 {
    danla_phi(mu, lipschitz, hessian_upper, r)
}

#[pyclass(module = "dan_py", frozen)]
pub struct Bounds(NewtonBounds);

#[pymethods]
impl Bounds {
    #[getter]
    fn k0(&self) -> usize {
        self.0.k0
    }

    #[getter]
    fn gamma(&self) -> f64 {
        self.0.gamma
    }

    #[getter]
    fn gamma_clamped(&self) -> bool {
        self.0.gamma_clamped
    }

    fn grad_bound(&self, k: usize) -> f64 {
        self.0.grad_bound(k)
    }

    fn dist_bound(&self, k: usize) -> f64 {
        self.0.dist_bound(k)
    }

    fn iterations_for(&self, eps: f64) -> usize {
        self.0.iterations_for(eps)
    }
}

/// Convergence envelope of the Polyak adaptive Newton method.
#[pyfunction]
fn bounds(grad0_norm: f64, mu: f64, lipschitz: f64) -> Bounds {
    Bounds(dan_core::newton_bounds(grad0_norm, mu, lipschitz))
}

/// Eigenvalues (ascending) and matching eigenvectors of a symmetric matrix.
#[pyfunction]
fn symmetric_eig(rows: Vec<Vec<f64>>) -> PyResult<(Vec<f64>, Vec<Vec<f64>>)> {
    let e = symmetric_eigen(&symmetric(rows)?).map_err(err)?;
    Ok((e.values, e.vectors))
}

/// Best rank-1 approximation `sign * h h^T`; returns `(sign, h, error)`.
#[pyfunction]
#[pyo3(signature = (rows, tol=1e-12))]
fn rank1(rows: Vec<Vec<f64>>, tol: f64) -> PyResult<(f64, Vec<f64>, f64)> {
    let r = rank1_truncate(&symmetric(rows)?, tol).map_err(err)?;
    Ok((r.sign, r.h, r.error))
}

#[pyclass(module = "dan_py", frozen)]
pub struct Experiment(RunResult);

#[pymethods]
impl Experiment {
    #[getter]
    fn converged(&self) -> bool {
        self.0.trace.converged
    }

    #[getter]
    fn iterations(&self) -> usize {
        self.0.trace.records.len()
    }

    #[getter]
    fn final_x(&self) -> Vec<f64> {
        self.0.final_x.clone()
    }

    #[getter]
    fn config_hash(&self) -> String {
        self.0.config_hash.clone()
    }

    fn grad_norms(&self) -> Vec<f64> {
        self.0.trace.records.iter().map(|r| r.grad_norm).collect()
    }

    fn bits_per_node(&self) -> Vec<f64> {
        self.0.trace.records.iter().map(|r| r.bits_sent_per_node_cum).collect()
    }

    fn trace_csv(&self) -> String {
        self.0.trace.to_csv()
    }

    fn summary_json(&self) -> PyResult<String> {
        serde_json::to_string(&self.0.summary()).map_err(err)
    }
}

/// Runs one experiment described by a TOML config string.
#[pyfunction]
fn run_experiment(py: Python<'_>, config: &str) -> PyResult<Experiment> {
    let cfg = dan_core::SimConfig::from_toml_str(config).map_err(err)?;
    cfg.validate().map_err(err)?;
    py.detach(|| dan_core::run_experiment(&cfg)).map(Experiment).map_err(err)
}

#[pymodule]
fn dan_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Graph>()?;
    m.add_class::<FloodResult>()?;
    m.add_class::<Bounds>()?;
    m.add_class::<Experiment>()?;
    m.add_function(wrap_pyfunction!(flood, m)?)?;
    m.add_function(wrap_pyfunction!(polyak_stepsize, m)?)?;
    m.add_function(wrap_pyfunction!(danla_threshold, m)?)?;
    m.add_function(wrap_pyfunction!(danla_stepsize, m)?)?;
    m.add_function(wrap_pyfunction!(danla_phi_py, m)?)?;
    m.add_function(wrap_pyfunction!(bounds, m)?)?;
    m.add_function(wrap_pyfunction!(symmetric_eig, m)?)?;
    m.add_function(wrap_pyfunction!(rank1, m)?)?;
    m.add_function(wrap_pyfunction!(run_experiment, m)?)?;
    Ok(())
}
