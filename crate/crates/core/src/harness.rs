//! Experiment orchestration: configuration, topology and problem
//! construction, engine dispatch, and output files.

use std::fs;
use std::io::BufReader;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::engines::{
    dan_run, danla_run, gd_baseline_run, polyak_newton_run, newton_bounds, EngineError, RunOptions,
    SolverPath, StopRule, NewtonBounds, Trace,
};
use crate::graph::{bfs_spanning_tree, generate_erdos_renyi, generate_random_tree, Graph, GraphError, SpanningTree};
use crate::ledger::{CommLedger, LedgerSummary};
use crate::objectives::{
    logistic_node_oracles, parse_csv_dataset, make_covertype_style_config, partition_dataset, synth_logistic,
    synth_quadratic, LogisticProblem, ObjectiveError, ProblemConstants, RidgeSplit, SharedOracle, SumOracle,
};
use crate::seed::{stream_seed, Stream};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("cannot read {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("config parse error: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("invalid config at `{field}`: {msg}")]
    Field { field: &'static str, msg: String },
    #[error("topology: {0}")]
    Topology(#[from] GraphError),
    #[error("problem: {0}")]
    Problem(#[from] ObjectiveError),
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error("sweep needs at least one config")]
    EmptySweep,
}

fn field(field: &'static str, msg: impl Into<String>) -> HarnessError {
    HarnessError::Field { field, msg: msg.into() }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Algorithm {
    Dan,
    DanLa,
    Gd,
    Polyak,
}

impl std::str::FromStr for Algorithm {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "dan" => Ok(Self::Dan),
            "dan-la" | "danla" => Ok(Self::DanLa),
            "gd" => Ok(Self::Gd),
            "polyak" => Ok(Self::Polyak),
            other => Err(format!("unknown algorithm `{other}` (dan, dan-la, gd, polyak)")),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TopologyKind {
    /// Uniform random recursive tree.
    #[default]
    Tree,
    ErdosRenyi,
    Path,
    Star,
    /// Edge-list file; see [`Graph::read_edge_list`].
    File,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TopologySpec {
    #[serde(default)]
    pub kind: TopologyKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub path: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ProblemKind {
    SynthQuadratic,
    SynthLogistic,
    Csv,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemSpec {
    pub kind: ProblemKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dim: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub samples: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub path: Option<PathBuf>,
    /// Zero-based label column; defaults to the last column.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label_column: Option<usize>,
    #[serde(default = "yes")]
    pub header: bool,
    #[serde(default = "yes")]
    pub normalize: bool,
}

fn yes() -> bool {
    true
}

/// Where unspecified constants come from.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ConstantsPreset {
    /// Provable constants computed from the data (logistic) or the
    /// generator's spectrum bounds (quadratics).
    #[default]
    Certified,
    /// Sample-count scaled guidance values for logistic regression.
    Guidance,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConstantsSpec {
    #[serde(default)]
    pub preset: ConstantsPreset,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mu: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lipschitz: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hessian_upper: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub c: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rho: Option<f64>,
    /// Smoothness constant for gradient steps; defaults to `lipschitz`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gd_smoothness: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimConfig {
    pub algorithm: Algorithm,
    #[serde(default)]
    pub seed: u64,
    pub nodes: usize,
    #[serde(default)]
    pub warm_start: usize,
    #[serde(default = "default_cap")]
    pub cap: usize,
    #[serde(default = "default_tol")]
    pub tol: f64,
    #[serde(default)]
    pub solver: SolverPath,
    #[serde(default)]
    pub ridge_split: RidgeSplit,
    #[serde(default)]
    pub topology: TopologySpec,
    pub problem: ProblemSpec,
    #[serde(default)]
    pub constants: ConstantsSpec,
}

fn default_cap() -> usize {
    1000
}

fn default_tol() -> f64 {
    1e-10
}

impl SimConfig {
    pub fn from_toml_str(text: &str) -> Result<Self, HarnessError> {
        let cfg: Self = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> Result<Self, HarnessError> {
        let text = fs::read_to_string(path).map_err(|source| HarnessError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config is plain data")
    }

    /// Hex SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("config is plain data");
        Sha256::digest(&json).iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        if self.nodes == 0 {
            return Err(field("nodes", "must be at least 1"));
        }
        if self.cap == 0 {
            return Err(field("cap", "must be at least 1"));
        }
        if !(self.tol >= 0.0 && self.tol.is_finite()) {
            return Err(field("tol", format!("must be finite and >= 0, got {}", self.tol)));
        }
        if self.topology.kind == TopologyKind::File {
            match &self.topology.path {
                None => return Err(field("topology.path", "required when kind = \"file\"")),
                Some(p) if !p.exists() => {
                    return Err(field("topology.path", format!("{} does not exist", p.display())))
                }
                _ => {}
            }
        }
        if self.topology.kind == TopologyKind::ErdosRenyi && self.nodes < 2 {
            return Err(field("topology.kind", "erdos-renyi needs at least 2 nodes"));
        }
        match self.problem.kind {
            ProblemKind::Csv => match &self.problem.path {
                None => return Err(field("problem.path", "required when kind = \"csv\"")),
                Some(p) if !p.exists() => {
                    return Err(field("problem.path", format!("{} does not exist", p.display())))
                }
                _ => {}
            },
            ProblemKind::SynthQuadratic | ProblemKind::SynthLogistic => {
                if self.problem.dim == Some(0) {
                    return Err(field("problem.dim", "must be at least 1"));
                }
            }
        }
        if self.problem.kind == ProblemKind::SynthQuadratic && self.constants.preset == ConstantsPreset::Guidance {
            return Err(field("constants.preset", "guidance constants apply to logistic problems only"));
        }
        for (name, v) in [
            ("constants.mu", self.constants.mu),
            ("constants.lipschitz", self.constants.lipschitz),
            ("constants.hessian_upper", self.constants.hessian_upper),
            ("constants.rho", self.constants.rho),
            ("constants.gd_smoothness", self.constants.gd_smoothness),
        ] {
            if let Some(v) = v {
                if !(v > 0.0 && v.is_finite()) {
                    return Err(field(name, format!("must be positive, got {v}")));
                }
            }
        }
        if let Some(c) = self.constants.c {
            if !(c >= 0.0 && c.is_finite()) {
                return Err(field("constants.c", format!("must be finite and >= 0, got {c}")));
            }
        }
        Ok(())
    }
}

/// Built experiment: network, node oracles, constants and start point.
pub struct Instance {
    pub tree: SpanningTree,
    pub oracles: Vec<SharedOracle>,
    pub constants: ProblemConstants,
    pub gd_smoothness: f64,
    pub x0: Vec<f64>,
    pub optimum: Option<Vec<f64>>,
    /// Whether every constant came from a certified source.
    pub certified: bool,
}

pub fn build_topology(cfg: &SimConfig) -> Result<SpanningTree, HarnessError> {
    let n = cfg.nodes;
    let seed = stream_seed(cfg.seed, Stream::Topology);
    let tree = match cfg.topology.kind {
        TopologyKind::Tree => generate_random_tree(n, seed),
        TopologyKind::ErdosRenyi => bfs_spanning_tree(&generate_erdos_renyi(n, seed)?, 0)?,
        TopologyKind::Path => bfs_spanning_tree(&Graph::path(n), 0)?,
        TopologyKind::Star => bfs_spanning_tree(&Graph::star(n), 0)?,
        TopologyKind::File => {
            let path = cfg.topology.path.as_ref().expect("validated");
            let file = fs::File::open(path).map_err(|source| HarnessError::Io {
                path: path.display().to_string(),
                source,
            })?;
            let g = Graph::read_edge_list(BufReader::new(file))?;
            if g.node_count() != n {
                return Err(field(
                    "topology.path",
                    format!("file has {} nodes but config asks for {n}", g.node_count()),
                ));
            }
            bfs_spanning_tree(&g, 0)?
        }
    };
    Ok(tree)
}

/// Column count of the first data row.
fn csv_width(text: &str, header: bool) -> usize {
    text.lines()
        .skip(usize::from(header))
        .find(|l| !l.trim().is_empty())
        .map_or(0, |l| l.split(',').count())
}

fn logistic_problem(cfg: &SimConfig) -> Result<LogisticProblem, HarnessError> {
    let spec = &cfg.problem;
    match spec.kind {
        ProblemKind::SynthLogistic => {
            let m = spec.samples.unwrap_or(2000);
            let p = spec.dim.unwrap_or(20);
            let rho = cfg
                .constants
                .rho
                .unwrap_or_else(|| make_covertype_style_config(m).rho);
            Ok(synth_logistic(m, p, rho, stream_seed(cfg.seed, Stream::Problem))?)
        }
        ProblemKind::Csv => {
            let path = spec.path.as_ref().expect("validated");
            let text = fs::read_to_string(path).map_err(|source| HarnessError::Io {
                path: path.display().to_string(),
                source,
            })?;
            let label = spec.label_column.unwrap_or_else(|| csv_width(&text, spec.header).saturating_sub(1));
            // the default ridge scales with m, which is known only after parsing
            let prob = parse_csv_dataset(&text, label, spec.normalize, spec.header, 1.0)?;
            let rho = cfg
                .constants
                .rho
                .unwrap_or_else(|| make_covertype_style_config(prob.samples()).rho);
            Ok(LogisticProblem::new(prob.features().to_vec(), prob.labels().to_vec(), rho)?)
        }
        ProblemKind::SynthQuadratic => unreachable!("not a logistic problem"),
    }
}

pub fn build_instance(cfg: &SimConfig) -> Result<Instance, HarnessError> {
    cfg.validate()?;
    let tree = build_topology(cfg)?;
    let n = cfg.nodes;
    let k = &cfg.constants;
    match cfg.problem.kind {
        ProblemKind::SynthQuadratic => {
            let p = cfg.problem.dim.unwrap_or(10);
            let mu = k.mu.unwrap_or(1.0);
            let upper = k.hessian_upper.unwrap_or(10.0 * mu);
            let lip = k.lipschitz.unwrap_or(1.0);
            let c = k.c.unwrap_or(mu);
            let constants = ProblemConstants::new(mu, lip, upper, c)?;
            let q = synth_quadratic(n, p, mu, upper, stream_seed(cfg.seed, Stream::Problem))?;
            let mut rng = ChaCha8Rng::seed_from_u64(stream_seed(cfg.seed, Stream::StartPoint));
            let x0 = q
                .optimum
                .iter()
                .map(|o| o + 10.0 * <StandardNormal as Distribution<f64>>::sample(&StandardNormal, &mut rng))
                .collect();
            Ok(Instance {
                tree,
                oracles: q.shared_parts(),
                constants,
                gd_smoothness: k.gd_smoothness.unwrap_or(lip),
                x0,
                optimum: Some(q.optimum),
                certified: true,
            })
        }
        ProblemKind::SynthLogistic | ProblemKind::Csv => {
            let prob = logistic_problem(cfg)?;
            let m = prob.samples();
            let p = prob.dim();
            let (mu, lip, upper, certified) = match k.preset {
                ConstantsPreset::Certified => {
                    let (mu, lip, upper) = prob.certified_constants()?;
                    (mu, lip, upper, k.mu.is_none() && k.lipschitz.is_none() && k.hessian_upper.is_none())
                }
                ConstantsPreset::Guidance => {
                    let g = make_covertype_style_config(m);
                    (g.mu, g.lipschitz_hessian, g.hessian_upper, false)
                }
            };
            let mu = k.mu.unwrap_or(mu);
            let lip = k.lipschitz.unwrap_or(lip);
            let upper = k.hessian_upper.unwrap_or(upper);
            let constants = ProblemConstants::new(mu, lip, upper, k.c.unwrap_or(mu))?;
            let partition = partition_dataset(m, n, stream_seed(cfg.seed, Stream::Partition))?;
            let prob = Arc::new(prob);
            let oracles = logistic_node_oracles(&prob, &partition, cfg.ridge_split)
                .into_iter()
                .map(|o| Arc::new(o) as SharedOracle)
                .collect();
            Ok(Instance {
                tree,
                oracles,
                constants,
                gd_smoothness: k.gd_smoothness.unwrap_or(lip),
                x0: vec![0.0; p],
                optimum: None,
                certified,
            })
        }
    }
}

#[derive(Debug, Clone)]
pub struct RunResult {
    pub config_hash: String,
    pub algorithm: Algorithm,
    pub trace: Trace,
    pub final_x: Vec<f64>,
    pub ledger: LedgerSummary,
    /// Reported for the Polyak-type engines (DAN and centralized).
    pub bounds: Option<NewtonBounds>,
    pub constants: ProblemConstants,
    pub certified: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub config_hash: String,
    pub algorithm: Algorithm,
    pub iterations: usize,
    pub updating_iterations: usize,
    pub converged: bool,
    pub final_grad_norm: f64,
    /// Payload bits (64 per scalar) sent by each node.
    pub total_bits_per_node: Vec<u64>,
    /// Payload plus per-message origin identifier bits.
    pub total_bits_with_ids_per_node: Vec<u64>,
    pub constants: ProblemConstants,
    pub certified_constants: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub bounds: Option<NewtonBounds>,
}

impl RunResult {
    pub fn summary(&self) -> RunSummary {
        RunSummary {
            config_hash: self.config_hash.clone(),
            algorithm: self.algorithm,
            iterations: self.trace.records.len(),
            updating_iterations: self.trace.updating_iterations(),
            converged: self.trace.converged,
            final_grad_norm: self.trace.records.last().map_or(f64::NAN, |r| r.grad_norm),
            total_bits_per_node: self.ledger.per_node.iter().map(|t| t.payload_bits).collect(),
            total_bits_with_ids_per_node: self.ledger.per_node.iter().map(|t| t.total_bits).collect(),
            constants: self.constants,
            certified_constants: self.certified,
            bounds: self.bounds,
        }
    }

    /// Writes `trace.csv`, `summary.json` and `ledger.json` into `dir`,
    /// creating it if needed.
    pub fn write_outputs(&self, dir: &Path) -> Result<(), HarnessError> {
        let io = |path: &Path| {
            let path = path.display().to_string();
            move |source| HarnessError::Io { path, source }
        };
        fs::create_dir_all(dir).map_err(io(dir))?;
        let trace = dir.join("trace.csv");
        fs::write(&trace, self.trace.to_csv()).map_err(io(&trace))?;
        let summary = dir.join("summary.json");
        let text = serde_json::to_string_pretty(&self.summary()).expect("plain data");
        fs::write(&summary, text).map_err(io(&summary))?;
        let ledger = dir.join("ledger.json");
        let text = serde_json::to_string_pretty(&self.ledger).expect("plain data");
        fs::write(&ledger, text).map_err(io(&ledger))?;
        Ok(())
    }
}

pub fn run_instance(cfg: &SimConfig, inst: &Instance) -> Result<RunResult, HarnessError> {
    let stop = StopRule {
        tol: cfg.tol,
        max_iter: cfg.cap,
    };
    let k = inst.constants;
    let optimum = inst.optimum.as_deref();
    let mut ledger = CommLedger::new(inst.tree.node_count());
    let trace = match cfg.algorithm {
        Algorithm::Dan | Algorithm::DanLa => {
            let opts = RunOptions {
                stop,
                warm_start: cfg.warm_start,
                gd_smoothness: Some(inst.gd_smoothness),
                solver: cfg.solver,
                optimum: inst.optimum.clone(),
            };
            if cfg.algorithm == Algorithm::Dan {
                dan_run(&inst.tree, &inst.oracles, &k, &inst.x0, &opts, &mut ledger)?
            } else {
                danla_run(&inst.tree, &inst.oracles, &k, &inst.x0, &opts, &mut ledger)?
            }
        }
        Algorithm::Polyak => {
            let f = SumOracle::new(inst.oracles.clone());
            polyak_newton_run(&f, &inst.x0, k.mu, k.lipschitz_hessian, stop, optimum)?
        }
        Algorithm::Gd => {
            let f = SumOracle::new(inst.oracles.clone());
            gd_baseline_run(&f, &inst.x0, k.mu, inst.gd_smoothness, stop, optimum)
        }
    };
    let bounds = match cfg.algorithm {
        Algorithm::Dan | Algorithm::Polyak if cfg.warm_start == 0 => trace
            .records
            .first()
            .map(|r| newton_bounds(r.grad_norm, k.mu, k.lipschitz_hessian)),
        _ => None,
    };
    Ok(RunResult {
        config_hash: cfg.hash(),
        algorithm: cfg.algorithm,
        final_x: trace.final_x.clone(),
        trace,
        ledger: ledger.summary(),
        bounds,
        constants: k,
        certified: inst.certified,
    })
}

pub fn run_experiment(cfg: &SimConfig) -> Result<RunResult, HarnessError> {
    let inst = build_instance(cfg)?;
    run_instance(cfg, &inst)
}

/// Runs every config independently (in parallel, one thread per run up to
/// the available cores). Results keep input order; a failed run does not
/// stop the others.
pub fn sweep(configs: &[SimConfig]) -> Result<Vec<Result<RunResult, HarnessError>>, HarnessError> {
    if configs.is_empty() {
        return Err(HarnessError::EmptySweep);
    }
    let width = std::thread::available_parallelism().map_or(1, |n| n.get());
    let mut results = Vec::with_capacity(configs.len());
    for chunk in configs.chunks(width) {
        std::thread::scope(|s| {
            let handles: Vec<_> = chunk.iter().map(|c| s.spawn(move || run_experiment(c))).collect();
            results.extend(handles.into_iter().map(|h| h.join().expect("run panicked")));
        });
    }
    Ok(results)
}

#[cfg(test)]
mod tests {
    use super::*;

    const QUAD: &str = r#"
algorithm = "dan"
seed = 3
nodes = 4
[problem]
kind = "synth-quadratic"
dim = 3
"#;

    #[test]
    fn parses_and_defaults() {
        let cfg = SimConfig::from_toml_str(QUAD).unwrap();
        assert_eq!(cfg.cap, 1000);
        assert_eq!(cfg.topology.kind, TopologyKind::Tree);
        assert_eq!(cfg.solver, SolverPath::Cholesky);
        let back = SimConfig::from_toml_str(&cfg.to_toml_string()).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(back.hash(), cfg.hash());
    }

    #[test]
    fn rejects_unknown_keys() {
        let text = format!("{QUAD}\nbogus = 1\n");
        assert!(matches!(SimConfig::from_toml_str(&text), Err(HarnessError::Parse(_))));
    }

    #[test]
    fn missing_files_name_the_field() {
        let text = QUAD.replace("kind = \"synth-quadratic\"", "kind = \"csv\"\npath = \"/no/such.csv\"");
        let err = SimConfig::from_toml_str(&text).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("problem.path") && msg.contains("/no/such.csv"), "{msg}");
    }

    #[test]
    fn single_node_dan_sends_nothing() {
        let mut cfg = SimConfig::from_toml_str(QUAD).unwrap();
        cfg.nodes = 1;
        let r = run_experiment(&cfg).unwrap();
        assert!(r.trace.converged);
        assert!(r.ledger.per_node.iter().all(|t| t.sent_scalars == 0));
        cfg.algorithm = Algorithm::Polyak;
        let c = run_experiment(&cfg).unwrap();
        assert_eq!(c.trace.iterates, r.trace.iterates);
    }

    #[test]
    fn empty_sweep_is_an_error() {
        assert!(matches!(sweep(&[]), Err(HarnessError::EmptySweep)));
    }

    #[test]
    fn sweep_keeps_order_and_isolates_failures() {
        let good = SimConfig::from_toml_str(QUAD).unwrap();
        let mut bad = good.clone();
        bad.nodes = 0;
        let out = sweep(&[good.clone(), bad, good]).unwrap();
        assert!(out[1].is_err());
        let (a, b) = (out[0].as_ref().unwrap(), out[2].as_ref().unwrap());
        assert_eq!(a.trace.to_csv(), b.trace.to_csv());
    }
}
