//! `dan` command-line interface.
//!
//! Exit codes: 0 success (converged), 2 stopped at the iteration cap,
//! 1 any error.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::dsf::{default_round_budget, DsfEngine, TaggedMessage};
use crate::engines::newton_bounds;
use crate::graph::{
    bfs_spanning_tree, generate_erdos_renyi, generate_random_tree, generate_strongly_connected_digraph, Graph,
};
use crate::harness::{sweep, Algorithm, HarnessError, RunResult, SimConfig};
use crate::objectives::load_csv_dataset;

pub const EXIT_OK: i32 = 0;
pub const EXIT_ERROR: i32 = 1;
pub const EXIT_CAP: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "dan", version, about = "Distributed adaptive Newton simulator")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run one experiment and write trace.csv, summary.json and ledger.json.
    Run(RunArgs),
    /// Run one experiment per config (and per --c value) into numbered
    /// subdirectories.
    Sweep(SweepArgs),
    /// Simulate one DSF execution and print per-round info-set sizes.
    ConsensusDemo(DemoArgs),
    /// Print the convergence envelope of the Polyak adaptive Newton method.
    Bounds(BoundsArgs),
    /// Check a CSV dataset and print its certified constants.
    ValidateData(DataArgs),
}

#[derive(Debug, Clone, Args)]
pub struct Overrides {
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub algorithm: Option<Algorithm>,
    #[arg(long)]
    pub nodes: Option<usize>,
    #[arg(long)]
    pub warm_start: Option<usize>,
    #[arg(long)]
    pub cap: Option<usize>,
    #[arg(long)]
    pub tol: Option<f64>,
}

impl Overrides {
    fn apply(&self, cfg: &mut SimConfig) {
        if let Some(v) = self.seed {
            cfg.seed = v;
        }
        if let Some(v) = self.algorithm {
            cfg.algorithm = v;
        }
        if let Some(v) = self.nodes {
            cfg.nodes = v;
        }
        if let Some(v) = self.warm_start {
            cfg.warm_start = v;
        }
        if let Some(v) = self.cap {
            cfg.cap = v;
        }
        if let Some(v) = self.tol {
            cfg.tol = v;
        }
    }
}

#[derive(Debug, Args)]
pub struct RunArgs {
    #[arg(long)]
    pub config: PathBuf,
    /// Output directory (created if absent).
    #[arg(long, env = "DAN_OUT_DIR", default_value = "out")]
    pub out: PathBuf,
    #[arg(long)]
    pub c: Option<f64>,
    #[command(flatten)]
    pub overrides: Overrides,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[arg(long, required = true)]
    pub config: Vec<PathBuf>,
    #[arg(long, env = "DAN_OUT_DIR", default_value = "out")]
    pub out: PathBuf,
    /// Balance parameter values; each config runs once per value.
    #[arg(long)]
    pub c: Vec<f64>,
    #[command(flatten)]
    pub overrides: Overrides,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum DemoTopology {
    Tree,
    Path,
    Star,
    ErdosRenyi,
    DirectedCycle,
    Digraph,
}

#[derive(Debug, Args)]
pub struct DemoArgs {
    #[arg(long, value_enum, default_value = "tree")]
    pub topology: DemoTopology,
    #[arg(long, default_value_t = 10)]
    pub nodes: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct BoundsArgs {
    #[arg(long)]
    pub mu: f64,
    #[arg(long)]
    pub lipschitz: f64,
    #[arg(long)]
    pub grad0: f64,
}

#[derive(Debug, Args)]
pub struct DataArgs {
    #[arg(long)]
    pub path: PathBuf,
    /// Zero-based label column.
    #[arg(long)]
    pub label_column: usize,
    #[arg(long)]
    pub no_header: bool,
    #[arg(long)]
    pub no_normalize: bool,
    #[arg(long, default_value_t = 1.0)]
    pub rho: f64,
}

impl clap::ValueEnum for Algorithm {
    fn value_variants<'a>() -> &'a [Self] {
        &[Algorithm::Dan, Algorithm::DanLa, Algorithm::Gd, Algorithm::Polyak]
    }

    fn to_possible_value(&self) -> Option<clap::builder::PossibleValue> {
        Some(clap::builder::PossibleValue::new(match self {
            Algorithm::Dan => "dan",
            Algorithm::DanLa => "dan-la",
            Algorithm::Gd => "gd",
            Algorithm::Polyak => "polyak",
        }))
    }
}

/// Parses `std::env::args` and runs; returns the process exit code.
pub fn main() -> i32 {
    match Cli::try_parse() {
        Ok(cli) => execute(cli),
        Err(e) => {
            let code = if e.use_stderr() { EXIT_ERROR } else { EXIT_OK };
            let _ = e.print();
            code
        }
    }
}

pub fn execute(cli: Cli) -> i32 {
    let result = match cli.command {
        Command::Run(a) => cmd_run(&a),
        Command::Sweep(a) => cmd_sweep(&a),
        Command::ConsensusDemo(a) => cmd_consensus_demo(&a),
        Command::Bounds(a) => Ok(cmd_bounds(&a)),
        Command::ValidateData(a) => cmd_validate_data(&a),
    };
    result.unwrap_or_else(|msg| {
        eprintln!("error: {msg}");
        EXIT_ERROR
    })
}

fn load_config(path: &Path, c: Option<f64>, overrides: &Overrides) -> Result<SimConfig, HarnessError> {
    let mut cfg = SimConfig::from_file(path)?;
    overrides.apply(&mut cfg);
    if c.is_some() {
        cfg.constants.c = c;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn warn_assumptions(r: &RunResult) {
    if !r.certified {
        eprintln!(
            "warning: constants are not certified for this problem; convergence guarantees hold only if \
             strong convexity, Hessian-Lipschitz and Hessian-bound assumptions hold with the given values"
        );
    }
    if r.bounds.is_some_and(|b| b.gamma_clamped) {
        eprintln!("warning: bound parameter gamma hit 1/2 and was clamped just below it");
    }
}

fn report(r: &RunResult, out: &Path) -> Result<i32, String> {
    warn_assumptions(r);
    r.write_outputs(out).map_err(|e| e.to_string())?;
    let s = r.summary();
    println!(
        "{:?}: {} iterations ({} updating), final |g| = {:.3e}, converged = {}, output in {}",
        s.algorithm,
        s.iterations,
        s.updating_iterations,
        s.final_grad_norm,
        s.converged,
        out.display()
    );
    Ok(if s.converged { EXIT_OK } else { EXIT_CAP })
}

fn cmd_run(a: &RunArgs) -> Result<i32, String> {
    let cfg = load_config(&a.config, a.c, &a.overrides).map_err(|e| e.to_string())?;
    let r = crate::harness::run_experiment(&cfg).map_err(|e| e.to_string())?;
    report(&r, &a.out)
}

fn cmd_sweep(a: &SweepArgs) -> Result<i32, String> {
    let cs: Vec<Option<f64>> = if a.c.is_empty() {
        vec![None]
    } else {
        a.c.iter().copied().map(Some).collect()
    };
    let mut configs = Vec::new();
    for path in &a.config {
        for &c in &cs {
            configs.push(load_config(path, c, &a.overrides).map_err(|e| e.to_string())?);
        }
    }
    let results = sweep(&configs).map_err(|e| e.to_string())?;
    let mut code = EXIT_OK;
    for (i, r) in results.into_iter().enumerate() {
        let dir = a.out.join(format!("run-{i:03}"));
        let rc = match r {
            Ok(r) => report(&r, &dir).unwrap_or_else(|msg| {
                eprintln!("run {i}: {msg}");
                EXIT_ERROR
            }),
            Err(e) => {
                eprintln!("run {i}: {e}");
                EXIT_ERROR
            }
        };
        code = match (code, rc) {
            (EXIT_ERROR, _) | (_, EXIT_ERROR) => EXIT_ERROR,
            (EXIT_CAP, _) | (_, EXIT_CAP) => EXIT_CAP,
            _ => EXIT_OK,
        };
    }
    Ok(code)
}

fn cmd_consensus_demo(a: &DemoArgs) -> Result<i32, String> {
    let n = a.nodes;
    let e = |x: crate::graph::GraphError| x.to_string();
    let graph = match a.topology {
        DemoTopology::Tree => generate_random_tree(n, a.seed).into_graph(),
        DemoTopology::Path => Graph::path(n),
        DemoTopology::Star => Graph::star(n),
        DemoTopology::ErdosRenyi => bfs_spanning_tree(&generate_erdos_renyi(n, a.seed).map_err(e)?, 0)
            .map_err(e)?
            .into_graph(),
        DemoTopology::DirectedCycle => Graph::directed_cycle(n),
        DemoTopology::Digraph => generate_strongly_connected_digraph(n, 0.1, a.seed),
    };
    let bound = default_round_budget(&graph).map_err(e)?;
    let payloads = (0..n).map(|i| TaggedMessage::new(i, vec![i as f64])).collect();
    let mut engine = DsfEngine::new(&graph, payloads).map_err(|x| x.to_string())?;
    println!(
        "{} graph, n = {n}, round bound = {bound}{}",
        if graph.is_directed() { "directed" } else { "undirected" },
        if graph.is_directed() { " (n + diameter - 1)" } else { " (n - 1)" }
    );
    let mut total = 0usize;
    while !engine.is_complete() && engine.round() < bound {
        let r = engine.step();
        total += r.transmissions.len();
        let sizes: Vec<usize> = engine.states().iter().map(|s| s.info_set().len()).collect();
        println!("round {:>3}: {:>4} transmissions, info-set sizes {:?}", r.round, r.transmissions.len(), sizes);
    }
    let done = engine.round();
    println!("complete after {done} rounds, {total} transmissions");
    if !graph.is_directed() {
        println!("lower bound on rounds for this tree: {}", n.saturating_sub(1));
    }
    if !engine.is_complete() || done > bound {
        eprintln!("error: set-consensus not reached within {bound} rounds");
        return Ok(EXIT_ERROR);
    }
    Ok(EXIT_OK)
}

fn cmd_bounds(a: &BoundsArgs) -> i32 {
    let b = newton_bounds(a.grad0, a.mu, a.lipschitz);
    println!("k0 = {}", b.k0);
    println!("gamma = {}", b.gamma);
    if b.k0 == 0 {
        println!("damped phase is empty: quadratic convergence from the first iteration");
    }
    if b.gamma_clamped {
        eprintln!("warning: gamma evaluated to 1/2 and was clamped to {}", b.gamma);
    }
    for eps in [1e-4, 1e-8, 1e-12] {
        println!("iterations for |x - x*| <= {eps:e}: {}", b.iterations_for(eps));
    }
    EXIT_OK
}

fn cmd_validate_data(a: &DataArgs) -> Result<i32, String> {
    let prob = load_csv_dataset(&a.path, a.label_column, !a.no_normalize, !a.no_header, a.rho)
        .map_err(|e| e.to_string())?;
    let positives = prob.labels().iter().filter(|&&y| y == 1.0).count();
    let (mu, lip, upper) = prob.certified_constants().map_err(|e| e.to_string())?;
    println!("samples = {}, features = {}", prob.samples(), prob.dim());
    println!("labels: {} positive, {} negative", positives, prob.samples() - positives);
    println!("certified constants: mu = {mu:e}, L = {lip:e}, M = {upper:e}");
    Ok(EXIT_OK)
}
