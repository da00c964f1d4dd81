//! Distributed second-order optimization over networks with finite-time
//! set-consensus: selective flooding, adaptive Newton engines with and
//! without rank-1 Hessian compression, and an experiment harness.

#![allow(clippy::needless_range_loop)]

pub mod dsf;
pub mod engines;
pub mod cli;
pub mod graph;
pub mod harness;
pub mod ledger;
pub mod linalg;
pub mod objectives;
pub mod seed;

pub use dsf::{run_dsf, DsfEngine, DsfError, TaggedMessage};
pub use engines::{
    dan_run, danla_run, danla_stepsize, danla_threshold, gd_baseline_run, polyak_newton_run, polyak_stepsize,
    newton_bounds, DanEngine, DanLaEngine, EngineError, RunOptions, SolverPath, StopRule, Trace,
};
pub use graph::{Graph, GraphError, SpanningTree};
pub use harness::{run_experiment, sweep, Algorithm, HarnessError, RunResult, SimConfig};
pub use ledger::CommLedger;
pub use linalg::SymmetricMatrix;
pub use objectives::{ObjectiveOracle, ProblemConstants, SharedOracle};
