//! Optimization engines: centralized Polyak adaptive Newton, DAN, DAN-LA and
//! a gradient-descent baseline, plus the closed-form stepsize and bound
//! calculators they rely on.
//!
//! In the distributed engines every node aggregates the DSF output itself, in
//! ascending origin order, and all nodes must end each iteration bitwise
//! identical. DAN reproduces the centralized Polyak iteration exactly when the
//! centralized oracle is the ordered sum of the node oracles.

use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dsf::{DsfEngine, DsfError, TaggedMessage};
use crate::graph::{NodeId, SpanningTree};
use crate::ledger::{CommLedger, LedgerError};
use crate::linalg::{
    self, norm2, rank1_truncate, smw_solve, spd_solve, Cholesky, LinalgError, Rank1Term,
    SymmetricMatrix,
};
use crate::objectives::{sum_matrices, sum_vectors, ObjectiveOracle, ProblemConstants, SharedOracle};

#[derive(Debug, Error)]
pub enum EngineError {
    #[error("iteration {iteration}: linear algebra failure: {source}")]
    Linalg {
        iteration: usize,
        source: LinalgError,
    },
    #[error("iteration {iteration}: DSF failure: {source}")]
    Dsf { iteration: usize, source: DsfError },
    #[error("iteration {iteration}: ledger failure: {source}")]
    Ledger {
        iteration: usize,
        source: LedgerError,
    },
    #[error("iteration {iteration}: node {node} diverged from node 0 ({field})")]
    ConsensusViolation {
        iteration: usize,
        node: NodeId,
        field: &'static str,
    },
    #[error("network has {nodes} nodes but {oracles} oracles were supplied")]
    OracleCount { nodes: usize, oracles: usize },
    #[error("starting point has dimension {found}, expected {expected}")]
    StartDimension { expected: usize, found: usize },
}

/// Clamp applied when the Polyak bound parameter lands on 1/2.
pub const GAMMA_CLAMP: f64 = 0.5 - 1e-12;

/// `min{1, mu^2 / (L ‖g‖)}`, and 1 at a stationary point.
pub fn polyak_stepsize(grad_norm: f64, mu: f64, lipschitz: f64) -> f64 {
    if grad_norm == 0.0 {
        return 1.0;
    }
    (mu * mu / (lipschitz * grad_norm)).min(1.0)
}

/// Error gate `(√((M+c)^2 + 3 mu^2) - (M+c)) / 3`, evaluated in the
/// cancellation-free form `mu^2 / (√((M+c)^2 + 3 mu^2) + M + c)`.
pub fn danla_threshold(mu: f64, hessian_upper: f64, c: f64) -> f64 {
    let mc = hessian_upper + c;
    if !mc.is_finite() {
        return 0.0;
    }
    mu * mu / ((mc * mc + 3.0 * mu * mu).sqrt() + mc)
}

/// Damped-phase decrement `phi` of the DAN-LA stepsize for gate `r`.
pub fn danla_phi(mu: f64, lipschitz: f64, hessian_upper: f64, r: f64) -> f64 {
    let gap = mu - r;
    2.0 * mu * gap * gap / (lipschitz * (hessian_upper + mu)) - 2.0 * r * gap / lipschitz
}

/// Zero when the summed approximation error exceeds the gate, otherwise
/// `min{1, phi / ‖g‖}` (1 when `g = 0`).
pub fn danla_stepsize(grad_norm: f64, r_hat: f64, mu: f64, lipschitz: f64, hessian_upper: f64, c: f64) -> f64 {
    let gate = danla_threshold(mu, hessian_upper, c);
    if r_hat > gate {
        return 0.0;
    }
    if grad_norm == 0.0 {
        return 1.0;
    }
    (danla_phi(mu, lipschitz, hessian_upper, gate) / grad_norm).min(1.0)
}

/// Damped/quadratic-phase envelope of the Polyak adaptive Newton method.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NewtonBounds {
    pub k0: usize,
    pub gamma: f64,
    pub gamma_clamped: bool,
    pub grad0_norm: f64,
    pub mu: f64,
    pub lipschitz: f64,
}

pub fn newton_bounds(grad0_norm: f64, mu: f64, lipschitz: f64) -> NewtonBounds {
    let t = lipschitz * grad0_norm / (mu * mu);
    let k0 = ((2.0 * t).ceil() - 2.0).max(0.0) as usize;
    let mut gamma = (0.5 * t - k0 as f64 / 4.0).max(0.0);
    let gamma_clamped = gamma > GAMMA_CLAMP;
    if gamma_clamped {
        gamma = GAMMA_CLAMP;
    }
    NewtonBounds {
        k0,
        gamma,
        gamma_clamped,
        grad0_norm,
        mu,
        lipschitz,
    }
}

impl NewtonBounds {
    fn gamma_power(&self, k: usize) -> f64 {
        let e = (k - self.k0).min(1023) as i32;
        self.gamma.powf(2f64.powi(e))
    }

    /// Upper bound on `‖∇f(x_k)‖`.
    pub fn grad_bound(&self, k: usize) -> f64 {
        let (mu, l) = (self.mu, self.lipschitz);
        if k <= self.k0 {
            self.grad0_norm - mu * mu / (2.0 * l) * k as f64
        } else {
            2.0 * mu * mu / l * self.gamma_power(k)
        }
    }

    /// Upper bound on `‖x_k - x*‖`.
    pub fn dist_bound(&self, k: usize) -> f64 {
        let (mu, l, g) = (self.mu, self.lipschitz, self.gamma);
        if k <= self.k0 {
            mu / l * (self.k0 as f64 - k as f64 + 2.0 * g / (1.0 - g))
        } else {
            let q = self.gamma_power(k);
            2.0 * mu * q / (l * (1.0 - q))
        }
    }

    /// `k0 + log2 log_{1/γ}(4 mu / (L eps))`, rounded up; the iteration count
    /// after which `‖x_k - x*‖ <= eps` is guaranteed.
    pub fn iterations_for(&self, eps: f64) -> usize {
        if self.gamma <= 0.0 {
            return self.k0;
        }
        let ratio = 4.0 * self.mu / (self.lipschitz * eps);
        if ratio <= 1.0 {
            return self.k0;
        }
        let inner = ratio.ln() / (1.0 / self.gamma).ln();
        if inner <= 1.0 {
            return self.k0;
        }
        self.k0 + inner.log2().ceil() as usize
    }
}

/// Relative stopping tolerance and iteration cap.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StopRule {
    /// Stop once `‖g_k‖ <= tol * max(1, ‖g_0‖)`.
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for StopRule {
    fn default() -> Self {
        Self {
            tol: 1e-10,
            max_iter: 1000,
        }
    }
}

impl StopRule {
    fn threshold(&self, g0: f64) -> f64 {
        self.tol * g0.max(1.0)
    }
}

/// Which solver applies the DAN-LA Hessian estimate.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SolverPath {
    #[default]
    Cholesky,
    /// Cached factor plus Sherman–Morrison updates; refactorizes on
    /// breakdown or once more than `p` updates are pending.
    Smw,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub k: usize,
    pub grad_norm: f64,
    pub stepsize: f64,
    pub updated: bool,
    pub scalars_sent_per_node_cum: f64,
    pub bits_sent_per_node_cum: f64,
    pub dist_to_opt: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trace {
    pub records: Vec<IterationRecord>,
    /// `x_k` for each record.
    pub iterates: Vec<Vec<f64>>,
    pub final_x: Vec<f64>,
    pub converged: bool,
}

impl Trace {
    pub fn updating_iterations(&self) -> usize {
        self.records.iter().filter(|r| r.updated).count()
    }

    /// Longest run of consecutive non-updating iterations.
    pub fn longest_stall(&self) -> usize {
        let (mut best, mut cur) = (0, 0);
        for r in &self.records {
            if r.updated {
                cur = 0;
            } else {
                cur += 1;
                best = best.max(cur);
            }
        }
        best
    }

    pub const CSV_HEADER: &'static str =
        "k,grad_norm,stepsize,updated,scalars_sent_per_node_cum,bits_sent_per_node_cum,dist_to_opt";

    pub fn to_csv(&self) -> String {
        let mut out = String::from(Self::CSV_HEADER);
        out.push('\n');
        for r in &self.records {
            out.push_str(&format!(
                "{},{},{},{},{},{},{}\n",
                r.k,
                r.grad_norm,
                r.stepsize,
                u8::from(r.updated),
                r.scalars_sent_per_node_cum,
                r.bits_sent_per_node_cum,
                r.dist_to_opt.map(|d| d.to_string()).unwrap_or_default()
            ));
        }
        out
    }

    /// Parses the CSV written by [`Trace::to_csv`] back into records.
    pub fn records_from_csv(text: &str) -> Result<Vec<IterationRecord>, String> {
        let mut lines = text.lines();
        if lines.next() != Some(Self::CSV_HEADER) {
            return Err("unexpected trace header".into());
        }
        lines
            .enumerate()
            .map(|(i, line)| {
                let f: Vec<&str> = line.split(',').collect();
                if f.len() != 7 {
                    return Err(format!("line {}: expected 7 fields", i + 2));
                }
                let num = |s: &str| s.parse::<f64>().map_err(|e| format!("line {}: {e}", i + 2));
                Ok(IterationRecord {
                    k: f[0].parse().map_err(|e| format!("line {}: {e}", i + 2))?,
                    grad_norm: num(f[1])?,
                    stepsize: num(f[2])?,
                    updated: f[3] == "1",
                    scalars_sent_per_node_cum: num(f[4])?,
                    bits_sent_per_node_cum: num(f[5])?,
                    dist_to_opt: if f[6].is_empty() { None } else { Some(num(f[6])?) },
                })
            })
            .collect()
    }
}

fn distance(x: &[f64], opt: Option<&[f64]>) -> Option<f64> {
    opt.map(|o| norm2(&x.iter().zip(o).map(|(a, b)| a - b).collect::<Vec<_>>()))
}

/// `x - alpha * d`.
fn apply_step(x: &[f64], alpha: f64, d: &[f64]) -> Vec<f64> {
    x.iter().zip(d).map(|(xi, di)| xi - alpha * di).collect()
}

/// One adaptive Newton step from aggregated `(g, H)`; shared by the
/// centralized and distributed engines so both follow the same arithmetic.
fn polyak_newton_step(
    x: &[f64],
    g: &[f64],
    h: &SymmetricMatrix,
    mu: f64,
    lipschitz: f64,
) -> Result<(Vec<f64>, f64, f64), LinalgError> {
    let gn = norm2(g);
    let alpha = polyak_stepsize(gn, mu, lipschitz);
    let d = spd_solve(h, g)?;
    Ok((apply_step(x, alpha, &d), alpha, gn))
}

/// Centralized Polyak adaptive Newton method.
pub fn polyak_newton_run(
    oracle: &dyn ObjectiveOracle,
    x0: &[f64],
    mu: f64,
    lipschitz: f64,
    stop: StopRule,
    optimum: Option<&[f64]>,
) -> Result<Trace, EngineError> {
    let mut x = x0.to_vec();
    let mut trace = Trace {
        records: Vec::new(),
        iterates: Vec::new(),
        final_x: Vec::new(),
        converged: false,
    };
    let mut threshold = None;
    for k in 0..stop.max_iter {
        let g = oracle.gradient(&x);
        let h = oracle.hessian(&x);
        let (next, alpha, gn) = polyak_newton_step(&x, &g, &h, mu, lipschitz)
            .map_err(|source| EngineError::Linalg { iteration: k, source })?;
        let thr = *threshold.get_or_insert_with(|| stop.threshold(gn));
        trace.records.push(IterationRecord {
            k,
            grad_norm: gn,
            stepsize: alpha,
            updated: true,
            scalars_sent_per_node_cum: 0.0,
            bits_sent_per_node_cum: 0.0,
            dist_to_opt: distance(&x, optimum),
        });
        trace.iterates.push(std::mem::replace(&mut x, next));
        if gn <= thr {
            trace.converged = true;
            break;
        }
    }
    trace.final_x = x;
    Ok(trace)
}

/// Centralized gradient descent with the fixed step `2 / (mu + smoothness)`.
pub fn gd_baseline_run(
    oracle: &dyn ObjectiveOracle,
    x0: &[f64],
    mu: f64,
    smoothness: f64,
    stop: StopRule,
    optimum: Option<&[f64]>,
) -> Trace {
    let step = 2.0 / (mu + smoothness);
    let mut x = x0.to_vec();
    let mut trace = Trace {
        records: Vec::new(),
        iterates: Vec::new(),
        final_x: Vec::new(),
        converged: false,
    };
    let mut threshold = None;
    for k in 0..stop.max_iter {
        let g = oracle.gradient(&x);
        let gn = norm2(&g);
        let thr = *threshold.get_or_insert_with(|| stop.threshold(gn));
        trace.records.push(IterationRecord {
            k,
            grad_norm: gn,
            stepsize: step,
            updated: true,
            scalars_sent_per_node_cum: 0.0,
            bits_sent_per_node_cum: 0.0,
            dist_to_opt: distance(&x, optimum),
        });
        let next = apply_step(&x, step, &g);
        trace.iterates.push(std::mem::replace(&mut x, next));
        if gn <= thr {
            trace.converged = true;
            break;
        }
    }
    trace.final_x = x;
    trace
}

/// Runs one DSF execution over the tree, booking every round in the ledger,
/// and returns each node's info-set payloads in ascending origin order.
fn share(
    tree: &SpanningTree,
    payloads: Vec<Vec<f64>>,
    ledger: &mut CommLedger,
    iteration: usize,
) -> Result<Vec<Vec<Arc<[f64]>>>, EngineError> {
    let msgs = payloads
        .into_iter()
        .enumerate()
        .map(|(i, p)| TaggedMessage::new(i, p))
        .collect();
    let mut engine = DsfEngine::on_tree(tree, msgs).map_err(|source| EngineError::Dsf { iteration, source })?;
    let budget = engine.default_budget();
    for _ in 0..budget {
        let report = engine.step();
        ledger
            .record_round(&report)
            .map_err(|source| EngineError::Ledger { iteration, source })?;
    }
    let n = tree.node_count();
    if let Some(s) = engine.states().iter().find(|s| s.info_set().len() != n) {
        return Err(EngineError::Dsf {
            iteration,
            source: DsfError::ProtocolViolation {
                rounds: budget,
                node: s.id(),
                held: s.info_set().len(),
                n,
            },
        });
    }
    Ok(engine
        .into_states()
        .into_iter()
        .map(|s| s.info_set().values().map(|m| Arc::clone(&m.payload)).collect())
        .collect())
}

fn check_network(tree: &SpanningTree, oracles: &[SharedOracle], x0: &[f64]) -> Result<usize, EngineError> {
    if tree.node_count() != oracles.len() {
        return Err(EngineError::OracleCount {
            nodes: tree.node_count(),
            oracles: oracles.len(),
        });
    }
    let p = oracles.first().map_or(x0.len(), |o| o.dim());
    if x0.len() != p {
        return Err(EngineError::StartDimension {
            expected: p,
            found: x0.len(),
        });
    }
    Ok(p)
}

fn same_bits(a: &[f64], b: &[f64]) -> bool {
    a.len() == b.len() && a.iter().zip(b).all(|(x, y)| x.to_bits() == y.to_bits())
}

/// One gradient-descent iteration executed through DSF (gradients only).
/// Used for warm starts of both distributed engines.
fn distributed_gd_step(
    xs: &mut [Vec<f64>],
    tree: &SpanningTree,
    oracles: &[SharedOracle],
    step: f64,
    ledger: &mut CommLedger,
    iteration: usize,
) -> Result<f64, EngineError> {
    let p = xs[0].len();
    let payloads = oracles
        .iter()
        .zip(xs.iter())
        .map(|(o, x)| o.gradient(x))
        .collect();
    let views = share(tree, payloads, ledger, iteration)?;
    let mut gn = 0.0;
    for (x, held) in xs.iter_mut().zip(&views) {
        let g = sum_vectors(p, held.iter().map(|m| &m[..]));
        gn = norm2(&g);
        *x = apply_step(x, step, &g);
    }
    Ok(gn)
}

#[derive(Debug, Clone, PartialEq)]
pub struct DanNodeState {
    pub x: Vec<f64>,
    pub gradient: Vec<f64>,
    pub hessian: SymmetricMatrix,
}

/// Outcome of one distributed iteration, as seen by node 0.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepInfo {
    pub grad_norm: f64,
    pub stepsize: f64,
    pub updated: bool,
}

/// Distributed adaptive Newton: every node shares `(g_i, H_i)` by DSF and
/// takes the Polyak step on the sums.
pub struct DanEngine<'a> {
    tree: &'a SpanningTree,
    oracles: &'a [SharedOracle],
    mu: f64,
    lipschitz: f64,
    states: Vec<DanNodeState>,
    iteration: usize,
}

impl<'a> DanEngine<'a> {
    pub fn new(
        tree: &'a SpanningTree,
        oracles: &'a [SharedOracle],
        mu: f64,
        lipschitz: f64,
        x0: &[f64],
    ) -> Result<Self, EngineError> {
        let p = check_network(tree, oracles, x0)?;
        let states = (0..oracles.len())
            .map(|_| DanNodeState {
                x: x0.to_vec(),
                gradient: vec![0.0; p],
                hessian: SymmetricMatrix::zeros(p),
            })
            .collect();
        Ok(Self {
            tree,
            oracles,
            mu,
            lipschitz,
            states,
            iteration: 0,
        })
    }

    pub fn states(&self) -> &[DanNodeState] {
        &self.states
    }

    pub fn x(&self) -> &[f64] {
        &self.states[0].x
    }

    /// Message size: packed Hessian plus gradient.
    pub fn message_scalars(p: usize) -> usize {
        p * (p + 1) / 2 + p
    }

    pub fn step(&mut self, ledger: &mut CommLedger) -> Result<StepInfo, EngineError> {
        let k = self.iteration;
        dan_iteration(&mut self.states, self.tree, self.oracles, self.mu, self.lipschitz, ledger, k)
            .inspect(|_| self.iteration += 1)
    }

    /// Gradient-only warm-start iteration.
    pub fn warm_step(&mut self, step: f64, ledger: &mut CommLedger) -> Result<StepInfo, EngineError> {
        let k = self.iteration;
        let mut xs: Vec<Vec<f64>> = self.states.iter().map(|s| s.x.clone()).collect();
        let gn = distributed_gd_step(&mut xs, self.tree, self.oracles, step, ledger, k)?;
        for (s, x) in self.states.iter_mut().zip(xs) {
            s.x = x;
        }
        check_identical_x(self.states.iter().map(|s| &s.x[..]), k)?;
        self.iteration += 1;
        Ok(StepInfo {
            grad_norm: gn,
            stepsize: step,
            updated: true,
        })
    }
}

fn check_identical_x<'b>(mut xs: impl Iterator<Item = &'b [f64]>, iteration: usize) -> Result<(), EngineError> {
    let first = xs.next().expect("at least one node");
    for (i, x) in xs.enumerate() {
        if !same_bits(first, x) {
            return Err(EngineError::ConsensusViolation {
                iteration,
                node: i + 1,
                field: "x",
            });
        }
    }
    Ok(())
}

/// One DAN iteration over all nodes.
pub fn dan_iteration(
    states: &mut [DanNodeState],
    tree: &SpanningTree,
    oracles: &[SharedOracle],
    mu: f64,
    lipschitz: f64,
    ledger: &mut CommLedger,
    iteration: usize,
) -> Result<StepInfo, EngineError> {
    check_identical_x(states.iter().map(|s| &s.x[..]), iteration)?;
    let p = states[0].x.len();
    let payloads: Vec<Vec<f64>> = states
        .iter_mut()
        .zip(oracles)
        .map(|(s, o)| {
            s.gradient = o.gradient(&s.x);
            s.hessian = o.hessian(&s.x);
            let mut msg = s.gradient.clone();
            msg.extend_from_slice(s.hessian.packed());
            msg
        })
        .collect();
    let views = share(tree, payloads, ledger, iteration)?;
    let mut info = None;
    for (s, held) in states.iter_mut().zip(&views) {
        let hs: Vec<SymmetricMatrix> = held
            .iter()
            .map(|m| SymmetricMatrix::from_packed(p, m[p..].to_vec()).expect("packed size"))
            .collect();
        let g = sum_vectors(p, held.iter().map(|m| &m[..p]));
        let h = sum_matrices(p, hs.iter());
        let (next, alpha, gn) = polyak_newton_step(&s.x, &g, &h, mu, lipschitz)
            .map_err(|source| EngineError::Linalg { iteration, source })?;
        s.x = next;
        info.get_or_insert(StepInfo {
            grad_norm: gn,
            stepsize: alpha,
            updated: true,
        });
    }
    check_identical_x(states.iter().map(|s| &s.x[..]), iteration)?;
    Ok(info.expect("at least one node"))
}

/// Options shared by the distributed run loops.
#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    pub stop: StopRule,
    pub warm_start: usize,
    /// Smoothness constant of the warm-start gradient step `2/(mu + l)`;
    /// defaults to the Hessian-Lipschitz slot.
    pub gd_smoothness: Option<f64>,
    pub solver: SolverPath,
    pub optimum: Option<Vec<f64>>,
}

fn record(
    k: usize,
    info: StepInfo,
    x: &[f64],
    ledger: &CommLedger,
    optimum: Option<&[f64]>,
) -> IterationRecord {
    IterationRecord {
        k,
        grad_norm: info.grad_norm,
        stepsize: info.stepsize,
        updated: info.updated,
        scalars_sent_per_node_cum: ledger.mean_sent_scalars(),
        bits_sent_per_node_cum: ledger.mean_payload_bits(),
        dist_to_opt: distance(x, optimum),
    }
}

/// Shared driver: warm start, then engine steps until the stop rule fires.
fn drive(
    opts: &RunOptions,
    mu: f64,
    lipschitz: f64,
    ledger: &mut CommLedger,
    engine: &mut dyn DistributedEngine,
) -> Result<Trace, EngineError> {
    let mut trace = Trace {
        records: Vec::new(),
        iterates: Vec::new(),
        final_x: Vec::new(),
        converged: false,
    };
    let gd_step = 2.0 / (mu + opts.gd_smoothness.unwrap_or(lipschitz));
    let optimum = opts.optimum.as_deref();
    let mut threshold = None;
    for k in 0..opts.stop.max_iter {
        let x = engine.current_x();
        ledger.begin_iteration(k);
        let info = if k < opts.warm_start {
            engine.warm(gd_step, ledger)?
        } else {
            engine.newton(ledger)?
        };
        ledger.end_iteration();
        let thr = *threshold.get_or_insert_with(|| opts.stop.threshold(info.grad_norm));
        trace.records.push(record(k, info, &x, ledger, optimum));
        trace.iterates.push(x);
        if info.grad_norm <= thr {
            trace.converged = true;
            break;
        }
    }
    trace.final_x = engine.current_x();
    Ok(trace)
}

trait DistributedEngine {
    fn current_x(&self) -> Vec<f64>;
    fn warm(&mut self, step: f64, ledger: &mut CommLedger) -> Result<StepInfo, EngineError>;
    fn newton(&mut self, ledger: &mut CommLedger) -> Result<StepInfo, EngineError>;
}

impl DistributedEngine for DanEngine<'_> {
    fn current_x(&self) -> Vec<f64> {
        self.x().to_vec()
    }
    fn warm(&mut self, step: f64, ledger: &mut CommLedger) -> Result<StepInfo, EngineError> {
        self.warm_step(step, ledger)
    }
    fn newton(&mut self, ledger: &mut CommLedger) -> Result<StepInfo, EngineError> {
        self.step(ledger)
    }
}

impl DistributedEngine for DanLaEngine<'_> {
    fn current_x(&self) -> Vec<f64> {
        self.x().to_vec()
    }
    fn warm(&mut self, step: f64, ledger: &mut CommLedger) -> Result<StepInfo, EngineError> {
        self.warm_step(step, ledger)
    }
    fn newton(&mut self, ledger: &mut CommLedger) -> Result<StepInfo, EngineError> {
        self.step(ledger)
    }
}

/// Full DAN run with trace.
pub fn dan_run(
    tree: &SpanningTree,
    oracles: &[SharedOracle],
    constants: &ProblemConstants,
    x0: &[f64],
    opts: &RunOptions,
    ledger: &mut CommLedger,
) -> Result<Trace, EngineError> {
    let mut engine = DanEngine::new(tree, oracles, constants.mu, constants.lipschitz_hessian, x0)?;
    drive(
        opts,
        constants.mu,
        constants.lipschitz_hessian,
        ledger,
        &mut engine,
    )
}

#[derive(Debug, Clone)]
pub struct DanLaNodeState {
    pub x: Vec<f64>,
    /// Running rank-1 reconstruction of the local Hessian.
    pub local_estimate: SymmetricMatrix,
    /// Running estimate of the global Hessian.
    pub global_estimate: SymmetricMatrix,
    pub global_gradient: Vec<f64>,
    pub error_bound: f64,
    pub stepsize: f64,
    factor: Option<Cholesky>,
    pending: Vec<Rank1Term>,
}

impl DanLaNodeState {
    fn new(x0: &[f64]) -> Self {
        let p = x0.len();
        Self {
            x: x0.to_vec(),
            local_estimate: SymmetricMatrix::zeros(p),
            global_estimate: SymmetricMatrix::zeros(p),
            global_gradient: vec![0.0; p],
            error_bound: 0.0,
            stepsize: 0.0,
            factor: None,
            pending: Vec::new(),
        }
    }

    fn solve(&mut self, solver: SolverPath) -> Result<Vec<f64>, LinalgError> {
        let p = self.x.len();
        if solver == SolverPath::Smw && self.pending.len() <= p {
            if let Some(f) = &self.factor {
                match smw_solve(f, &self.pending, &self.global_gradient, linalg::DEFAULT_TOL) {
                    Ok(d) => return Ok(d),
                    Err(LinalgError::SmwBreakdown { .. }) => {}
                    Err(e) => return Err(e),
                }
            }
        }
        let f = Cholesky::factor(&self.global_estimate)?;
        let d = f.solve(&self.global_gradient)?;
        if solver == SolverPath::Smw {
            self.factor = Some(f);
            self.pending.clear();
        }
        Ok(d)
    }
}

/// DAN-LA: rank-1 compressed Hessian innovations with an error-gated
/// adaptive stepsize.
pub struct DanLaEngine<'a> {
    tree: &'a SpanningTree,
    oracles: &'a [SharedOracle],
    constants: ProblemConstants,
    solver: SolverPath,
    eig_tol: f64,
    states: Vec<DanLaNodeState>,
    iteration: usize,
}

impl<'a> DanLaEngine<'a> {
    pub fn new(
        tree: &'a SpanningTree,
        oracles: &'a [SharedOracle],
        constants: ProblemConstants,
        x0: &[f64],
        solver: SolverPath,
    ) -> Result<Self, EngineError> {
        check_network(tree, oracles, x0)?;
        Ok(Self {
            tree,
            oracles,
            constants,
            solver,
            eig_tol: linalg::DEFAULT_TOL,
            states: (0..oracles.len()).map(|_| DanLaNodeState::new(x0)).collect(),
            iteration: 0,
        })
    }

    pub fn states(&self) -> &[DanLaNodeState] {
        &self.states
    }

    pub fn x(&self) -> &[f64] {
        &self.states[0].x
    }

    pub fn gate(&self) -> f64 {
        danla_threshold(self.constants.mu, self.constants.hessian_upper, self.constants.c)
    }

    /// `(r, s, g, h)`: two scalars plus two `p`-vectors.
    pub fn message_scalars(p: usize) -> usize {
        2 * p + 2
    }

    pub fn step(&mut self, ledger: &mut CommLedger) -> Result<StepInfo, EngineError> {
        let k = self.iteration;
        let info = danla_iteration(
            &mut self.states,
            self.tree,
            self.oracles,
            &self.constants,
            self.solver,
            self.eig_tol,
            ledger,
            k,
        )?;
        self.iteration += 1;
        Ok(info)
    }

    pub fn warm_step(&mut self, step: f64, ledger: &mut CommLedger) -> Result<StepInfo, EngineError> {
        let k = self.iteration;
        let mut xs: Vec<Vec<f64>> = self.states.iter().map(|s| s.x.clone()).collect();
        let gn = distributed_gd_step(&mut xs, self.tree, self.oracles, step, ledger, k)?;
        for (s, x) in self.states.iter_mut().zip(xs) {
            s.x = x;
        }
        check_identical_x(self.states.iter().map(|s| &s.x[..]), k)?;
        self.iteration += 1;
        Ok(StepInfo {
            grad_norm: gn,
            stepsize: step,
            updated: true,
        })
    }
}

/// One DAN-LA iteration over all nodes.
#[allow(clippy::too_many_arguments)]
pub fn danla_iteration(
    states: &mut [DanLaNodeState],
    tree: &SpanningTree,
    oracles: &[SharedOracle],
    constants: &ProblemConstants,
    solver: SolverPath,
    eig_tol: f64,
    ledger: &mut CommLedger,
    iteration: usize,
) -> Result<StepInfo, EngineError> {
    check_identical_x(states.iter().map(|s| &s.x[..]), iteration)?;
    let p = states[0].x.len();
    let mut payloads = Vec::with_capacity(states.len());
    for (s, o) in states.iter_mut().zip(oracles) {
        let innovation = o.hessian(&s.x).sub(&s.local_estimate);
        let r1 = rank1_truncate(&innovation, eig_tol).map_err(|source| EngineError::Linalg { iteration, source })?;
        s.local_estimate.add_rank1(r1.sign, &r1.h);
        let g = o.gradient(&s.x);
        let mut msg = Vec::with_capacity(2 * p + 2);
        msg.push(r1.error);
        msg.push(r1.sign);
        msg.extend_from_slice(&g);
        msg.extend_from_slice(&r1.h);
        payloads.push(msg);
    }
    let views = share(tree, payloads, ledger, iteration)?;
    let (mu, l, m, c) = (
        constants.mu,
        constants.lipschitz_hessian,
        constants.hessian_upper,
        constants.c,
    );
    for (s, held) in states.iter_mut().zip(&views) {
        s.global_gradient = sum_vectors(p, held.iter().map(|msg| &msg[2..2 + p]));
        for msg in held {
            let (sign, h) = (msg[1], &msg[2 + p..]);
            s.global_estimate.add_rank1(sign, h);
            if solver == SolverPath::Smw {
                s.pending.push(Rank1Term { sign, h: h.to_vec() });
            }
        }
        s.error_bound = held.iter().fold(0.0, |acc, msg| acc + msg[0]);
        let gn = norm2(&s.global_gradient);
        s.stepsize = danla_stepsize(gn, s.error_bound, mu, l, m, c);
        if s.stepsize > 0.0 {
            let d = s
                .solve(solver)
                .map_err(|source| EngineError::Linalg { iteration, source })?;
            s.x = apply_step(&s.x, s.stepsize, &d);
        }
    }
    check_danla_identity(states, iteration)?;
    let s0 = &states[0];
    Ok(StepInfo {
        grad_norm: norm2(&s0.global_gradient),
        stepsize: s0.stepsize,
        updated: s0.stepsize > 0.0,
    })
}

fn check_danla_identity(states: &[DanLaNodeState], iteration: usize) -> Result<(), EngineError> {
    let first = &states[0];
    for (i, s) in states.iter().enumerate().skip(1) {
        let field = if !same_bits(&first.x, &s.x) {
            "x"
        } else if !same_bits(first.global_estimate.packed(), s.global_estimate.packed()) {
            "global Hessian estimate"
        } else if !same_bits(&first.global_gradient, &s.global_gradient) {
            "global gradient"
        } else if first.error_bound.to_bits() != s.error_bound.to_bits() {
            "error bound"
        } else if first.stepsize.to_bits() != s.stepsize.to_bits() {
            "stepsize"
        } else {
            continue;
        };
        return Err(EngineError::ConsensusViolation {
            iteration,
            node: i,
            field,
        });
    }
    Ok(())
}

/// Full DAN-LA run with trace.
pub fn danla_run(
    tree: &SpanningTree,
    oracles: &[SharedOracle],
    constants: &ProblemConstants,
    x0: &[f64],
    opts: &RunOptions,
    ledger: &mut CommLedger,
) -> Result<Trace, EngineError> {
    let mut engine = DanLaEngine::new(tree, oracles, *constants, x0, opts.solver)?;
    drive(
        opts,
        constants.mu,
        constants.lipschitz_hessian,
        ledger,
        &mut engine,
    )
}
