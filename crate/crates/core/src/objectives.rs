//! Objective oracles: regularized logistic regression, synthetic strongly
//! convex quadratics, dataset partitioning and problem constants.

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg::{self, dot, norm2, spd_solve, SymmetricMatrix};

#[derive(Debug, Error)]
pub enum ObjectiveError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("malformed numeric cell at row {row} col {col}: `{value}`")]
    BadCell { row: usize, col: usize, value: String },
    #[error("row {row} has {found} columns, expected {expected}")]
    RaggedRow {
        row: usize,
        found: usize,
        expected: usize,
    },
    #[error("label column {column} out of range for {width} columns")]
    LabelColumn { column: usize, width: usize },
    #[error("labels must be 0 or 1; found {0:?}")]
    NonBinaryLabels(Vec<String>),
    #[error("feature value {value} at row {row} col {col} is outside [-1, 1]; enable normalization")]
    FeatureOutOfRange { row: usize, col: usize, value: f64 },
    #[error("dataset is empty")]
    Empty,
    #[error("invalid problem constants: {0}")]
    InvalidConstants(String),
    #[error("cannot partition {m} samples over {n} nodes")]
    Partition { m: usize, n: usize },
    #[error("ridge coefficient must be positive, got {0}")]
    Ridge(f64),
    #[error(transparent)]
    Linalg(#[from] linalg::LinalgError),
}

/// Constants of the strong-convexity / Hessian-Lipschitz / Hessian-bound
/// assumptions plus the DAN-LA balance parameter `c`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProblemConstants {
    pub mu: f64,
    pub lipschitz_hessian: f64,
    pub hessian_upper: f64,
    pub c: f64,
}

impl ProblemConstants {
    pub fn new(mu: f64, lipschitz_hessian: f64, hessian_upper: f64, c: f64) -> Result<Self, ObjectiveError> {
        let k = Self {
            mu,
            lipschitz_hessian,
            hessian_upper,
            c,
        };
        k.validate()?;
        Ok(k)
    }

    pub fn validate(&self) -> Result<(), ObjectiveError> {
        let bad = |msg: String| Err(ObjectiveError::InvalidConstants(msg));
        if !(self.mu > 0.0 && self.mu.is_finite()) {
            return bad(format!("mu must be positive, got {}", self.mu));
        }
        if !(self.hessian_upper >= self.mu && self.hessian_upper.is_finite()) {
            return bad(format!(
                "hessian_upper ({}) must be finite and >= mu ({})",
                self.hessian_upper, self.mu
            ));
        }
        if !(self.lipschitz_hessian > 0.0 && self.lipschitz_hessian.is_finite()) {
            return bad(format!(
                "lipschitz_hessian must be positive, got {}",
                self.lipschitz_hessian
            ));
        }
        if self.c < 0.0 || !self.c.is_finite() {
            return bad(format!("c must be finite and >= 0, got {}", self.c));
        }
        if self.c == 0.0 && self.hessian_upper <= self.mu {
            return bad("c = 0 requires hessian_upper strictly greater than mu".into());
        }
        Ok(())
    }
}

/// Guidance constants scaled by the sample count: `mu = 0.02 m`, `L = m`,
/// `M = 0.04 m`, `rho = 0.01 m`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GuidanceConstants {
    pub mu: f64,
    pub lipschitz_hessian: f64,
    pub hessian_upper: f64,
    pub rho: f64,
}

impl GuidanceConstants {
    pub fn with_c(&self, c: f64) -> Result<ProblemConstants, ObjectiveError> {
        ProblemConstants::new(self.mu, self.lipschitz_hessian, self.hessian_upper, c)
    }
}

pub fn make_covertype_style_config(m: usize) -> GuidanceConstants {
    let m = m as f64;
    GuidanceConstants {
        mu: 0.02 * m,
        lipschitz_hessian: m,
        hessian_upper: 0.04 * m,
        rho: 0.01 * m,
    }
}

/// Value, gradient and Hessian evaluator for one smooth objective.
pub trait ObjectiveOracle: Send + Sync {
    fn dim(&self) -> usize;
    fn value(&self, x: &[f64]) -> f64;
    fn gradient(&self, x: &[f64]) -> Vec<f64>;
    fn hessian(&self, x: &[f64]) -> SymmetricMatrix;
}

pub type SharedOracle = Arc<dyn ObjectiveOracle>;

/// Accumulates vectors left to right starting from zero. Every aggregation
/// of node contributions in the crate goes through this (and
/// [`sum_matrices`]) so sums are bitwise reproducible.
pub fn sum_vectors<'a>(dim: usize, parts: impl IntoIterator<Item = &'a [f64]>) -> Vec<f64> {
    let mut acc = vec![0.0; dim];
    for part in parts {
        acc.iter_mut().zip(part).for_each(|(a, b)| *a += b);
    }
    acc
}

pub fn sum_matrices<'a>(
    dim: usize,
    parts: impl IntoIterator<Item = &'a SymmetricMatrix>,
) -> SymmetricMatrix {
    let mut acc = SymmetricMatrix::zeros(dim);
    for part in parts {
        acc.add_assign(part);
    }
    acc
}

/// `f = Σ f_i`, evaluated in ascending part order.
#[derive(Clone)]
pub struct SumOracle {
    dim: usize,
    parts: Vec<SharedOracle>,
}

impl SumOracle {
    pub fn new(parts: Vec<SharedOracle>) -> Self {
        let dim = parts.first().map_or(0, |p| p.dim());
        assert!(parts.iter().all(|p| p.dim() == dim), "dimension mismatch");
        Self { dim, parts }
    }

    pub fn parts(&self) -> &[SharedOracle] {
        &self.parts
    }
}

impl ObjectiveOracle for SumOracle {
    fn dim(&self) -> usize {
        self.dim
    }

    fn value(&self, x: &[f64]) -> f64 {
        self.parts.iter().fold(0.0, |acc, p| acc + p.value(x))
    }

    fn gradient(&self, x: &[f64]) -> Vec<f64> {
        let grads: Vec<_> = self.parts.iter().map(|p| p.gradient(x)).collect();
        sum_vectors(self.dim, grads.iter().map(Vec::as_slice))
    }

    fn hessian(&self, x: &[f64]) -> SymmetricMatrix {
        let hs: Vec<_> = self.parts.iter().map(|p| p.hessian(x)).collect();
        sum_matrices(self.dim, hs.iter())
    }
}

/// `½ (x - b)^T A (x - b)`.
#[derive(Debug, Clone)]
pub struct QuadraticOracle {
    pub a: SymmetricMatrix,
    pub b: Vec<f64>,
}

impl ObjectiveOracle for QuadraticOracle {
    fn dim(&self) -> usize {
        self.b.len()
    }

    fn value(&self, x: &[f64]) -> f64 {
        let d: Vec<f64> = x.iter().zip(&self.b).map(|(x, b)| x - b).collect();
        0.5 * dot(&d, &self.a.mul_vec(&d))
    }

    fn gradient(&self, x: &[f64]) -> Vec<f64> {
        let d: Vec<f64> = x.iter().zip(&self.b).map(|(x, b)| x - b).collect();
        self.a.mul_vec(&d)
    }

    fn hessian(&self, _x: &[f64]) -> SymmetricMatrix {
        self.a.clone()
    }
}

/// Per-node quadratics with a known minimizer.
#[derive(Debug, Clone)]
pub struct SynthQuadratic {
    pub parts: Vec<QuadraticOracle>,
    pub optimum: Vec<f64>,
    pub mu: f64,
    pub hessian_upper: f64,
}

impl SynthQuadratic {
    pub fn shared_parts(&self) -> Vec<SharedOracle> {
        self.parts
            .iter()
            .map(|q| Arc::new(q.clone()) as SharedOracle)
            .collect()
    }
}

fn random_orthogonal(p: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    // Gram–Schmidt on Gaussian columns; redraw on (improbable) degeneracy.
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(p);
    while basis.len() < p {
        let mut v: Vec<f64> = (0..p).map(|_| rng.sample(StandardNormal)).collect();
        for _ in 0..2 {
            for q in &basis {
                let c = dot(&v, q);
                v.iter_mut().zip(q).for_each(|(a, b)| *a -= c * b);
            }
        }
        let nv = norm2(&v);
        if nv > 1e-8 {
            basis.push(v.into_iter().map(|x| x / nv).collect());
        }
    }
    basis
}

/// Quadratics `f_i(x) = ½ (x - b_i)^T A_i (x - b_i)` whose Hessians have
/// eigenvalues drawn from `[mu/n, M/n]`, so the sum satisfies
/// `mu I ⪯ Σ A_i ⪯ M I`.
pub fn synth_quadratic(
    n_nodes: usize,
    p: usize,
    mu: f64,
    hessian_upper: f64,
    seed: u64,
) -> Result<SynthQuadratic, ObjectiveError> {
    if !(mu > 0.0 && hessian_upper >= mu) {
        return Err(ObjectiveError::InvalidConstants(format!(
            "need 0 < mu <= M, got mu = {mu}, M = {hessian_upper}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let nf = n_nodes as f64;
    let (lo, hi) = (mu / nf, hessian_upper / nf);
    let mut parts = Vec::with_capacity(n_nodes);
    for _ in 0..n_nodes {
        let q = random_orthogonal(p, &mut rng);
        let eig: Vec<f64> = (0..p).map(|_| lo + (hi - lo) * rng.random::<f64>()).collect();
        let a = SymmetricMatrix::from_fn(p, |i, j| (0..p).map(|k| q[k][i] * eig[k] * q[k][j]).sum());
        let b: Vec<f64> = (0..p).map(|_| 3.0 * rng.sample::<f64, _>(StandardNormal)).collect();
        parts.push(QuadraticOracle { a, b });
    }
    let total = sum_matrices(p, parts.iter().map(|q| &q.a));
    let ab: Vec<Vec<f64>> = parts.iter().map(|q| q.a.mul_vec(&q.b)).collect();
    let rhs = sum_vectors(p, ab.iter().map(Vec::as_slice));
    let optimum = spd_solve(&total, &rhs)?;
    Ok(SynthQuadratic {
        parts,
        optimum,
        mu,
        hessian_upper,
    })
}

/// Binary logistic regression data with a ridge term.
#[derive(Debug, Clone, PartialEq)]
pub struct LogisticProblem {
    features: Vec<Vec<f64>>,
    labels: Vec<f64>,
    rho: f64,
}

impl LogisticProblem {
    pub fn new(features: Vec<Vec<f64>>, labels: Vec<f64>, rho: f64) -> Result<Self, ObjectiveError> {
        if !(rho > 0.0 && rho.is_finite()) {
            return Err(ObjectiveError::Ridge(rho));
        }
        if features.is_empty() || features.len() != labels.len() {
            return Err(ObjectiveError::Empty);
        }
        let p = features[0].len();
        for (r, row) in features.iter().enumerate() {
            if row.len() != p {
                return Err(ObjectiveError::RaggedRow {
                    row: r + 1,
                    found: row.len(),
                    expected: p,
                });
            }
            if let Some((c, &v)) = row
                .iter()
                .enumerate()
                .find(|(_, v)| !(-1.0..=1.0).contains(*v))
            {
                return Err(ObjectiveError::FeatureOutOfRange {
                    row: r + 1,
                    col: c + 1,
                    value: v,
                });
            }
        }
        let bad: Vec<String> = labels
            .iter()
            .filter(|&&y| y != 0.0 && y != 1.0)
            .map(|y| y.to_string())
            .collect();
        if !bad.is_empty() {
            return Err(ObjectiveError::NonBinaryLabels(dedup(bad)));
        }
        Ok(Self {
            features,
            labels,
            rho,
        })
    }

    pub fn samples(&self) -> usize {
        self.labels.len()
    }

    pub fn dim(&self) -> usize {
        self.features[0].len()
    }

    pub fn rho(&self) -> f64 {
        self.rho
    }

    pub fn features(&self) -> &[Vec<f64>] {
        &self.features
    }

    pub fn labels(&self) -> &[f64] {
        &self.labels
    }

    /// Conservative constants that provably satisfy the assumptions:
    /// `mu = rho`, `M = rho + λ_max(X^T X)/4` and
    /// `L = Σ ‖x_i‖^3 / (6√3)` (the bound on `|σ''|`).
    pub fn certified_constants(&self) -> Result<(f64, f64, f64), ObjectiveError> {
        let p = self.dim();
        let mut gram = SymmetricMatrix::zeros(p);
        for x in &self.features {
            gram.add_rank1(1.0, x);
        }
        let lmax = gram.spectral_norm()?;
        let lip: f64 = self.features.iter().map(|x| norm2(x).powi(3)).sum::<f64>() / (6.0 * 3f64.sqrt());
        Ok((self.rho, lip.max(f64::MIN_POSITIVE), self.rho + 0.25 * lmax))
    }
}

fn dedup(mut v: Vec<String>) -> Vec<String> {
    v.sort();
    v.dedup();
    v
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + e^z)` without overflow.
fn softplus(z: f64) -> f64 {
    z.max(0.0) + (-z.abs()).exp().ln_1p()
}

#[derive(Debug, Clone)]
pub struct LocalEval {
    pub value: f64,
    pub gradient: Vec<f64>,
    pub hessian: SymmetricMatrix,
}

/// Logistic loss over `subset` with ridge `ridge/2 ‖x‖^2`.
pub fn logistic_eval_with_ridge(prob: &LogisticProblem, subset: &[usize], x: &[f64], ridge: f64) -> LocalEval {
    let p = prob.dim();
    let mut value = 0.5 * ridge * dot(x, x);
    let mut gradient: Vec<f64> = x.iter().map(|xi| ridge * xi).collect();
    let mut hessian = SymmetricMatrix::scaled_identity(p, ridge);
    for &i in subset {
        let xi = &prob.features[i];
        let y = prob.labels[i];
        let z = dot(xi, x);
        let s = sigmoid(z);
        value += softplus(z) - y * z;
        let r = s - y;
        gradient.iter_mut().zip(xi).for_each(|(g, a)| *g += r * a);
        hessian.add_rank1(s * (1.0 - s), xi);
    }
    LocalEval {
        value,
        gradient,
        hessian,
    }
}

/// Logistic loss over `subset` with the proportional ridge share
/// `rho |subset| / m`.
pub fn logistic_eval(prob: &LogisticProblem, subset: &[usize], x: &[f64]) -> LocalEval {
    let ridge = prob.rho * subset.len() as f64 / prob.samples() as f64;
    logistic_eval_with_ridge(prob, subset, x, ridge)
}

/// How the global ridge term is divided among nodes.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RidgeSplit {
    /// `rho |subset| / m` per node.
    #[default]
    Proportional,
    /// `rho / n` per node.
    Equal,
}

#[derive(Debug, Clone)]
pub struct LogisticOracle {
    problem: Arc<LogisticProblem>,
    subset: Vec<usize>,
    ridge: f64,
}

impl LogisticOracle {
    pub fn new(problem: Arc<LogisticProblem>, subset: Vec<usize>, ridge: f64) -> Self {
        Self {
            problem,
            subset,
            ridge,
        }
    }

    /// Oracle over every sample with the full ridge.
    pub fn full(problem: Arc<LogisticProblem>) -> Self {
        let rho = problem.rho;
        let subset = (0..problem.samples()).collect();
        Self::new(problem, subset, rho)
    }

    pub fn eval(&self, x: &[f64]) -> LocalEval {
        logistic_eval_with_ridge(&self.problem, &self.subset, x, self.ridge)
    }
}

impl ObjectiveOracle for LogisticOracle {
    fn dim(&self) -> usize {
        self.problem.dim()
    }

    fn value(&self, x: &[f64]) -> f64 {
        self.eval(x).value
    }

    fn gradient(&self, x: &[f64]) -> Vec<f64> {
        self.eval(x).gradient
    }

    fn hessian(&self, x: &[f64]) -> SymmetricMatrix {
        self.eval(x).hessian
    }
}

/// One logistic oracle per partition block.
pub fn logistic_node_oracles(
    problem: &Arc<LogisticProblem>,
    partition: &Partition,
    split: RidgeSplit,
) -> Vec<LogisticOracle> {
    let m = problem.samples() as f64;
    let n = partition.blocks.len() as f64;
    partition
        .blocks
        .iter()
        .map(|block| {
            let ridge = match split {
                RidgeSplit::Proportional => problem.rho * block.len() as f64 / m,
                RidgeSplit::Equal => problem.rho / n,
            };
            LogisticOracle::new(Arc::clone(problem), block.clone(), ridge)
        })
        .collect()
}

/// Synthetic logistic data with deliberately uneven feature scales (feature
/// `j` lives in `[-s_j, s_j]` with `s_j` decaying geometrically), so the
/// unregularized curvature spans several orders of magnitude.
pub fn synth_logistic(m: usize, p: usize, rho: f64, seed: u64) -> Result<LogisticProblem, ObjectiveError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let decay = if p > 1 { 0.02_f64.powf(1.0 / (p - 1) as f64) } else { 1.0 };
    let scales: Vec<f64> = (0..p).map(|j| decay.powi(j as i32)).collect();
    let truth: Vec<f64> = (0..p).map(|_| 2.0 * rng.sample::<f64, _>(StandardNormal)).collect();
    let mut features = Vec::with_capacity(m);
    let mut labels = Vec::with_capacity(m);
    for _ in 0..m {
        let x: Vec<f64> = scales
            .iter()
            .map(|s| s * (2.0 * rng.random::<f64>() - 1.0))
            .collect();
        let prob = sigmoid(dot(&x, &truth));
        labels.push(if rng.random::<f64>() < prob { 1.0 } else { 0.0 });
        features.push(x);
    }
    LogisticProblem::new(features, labels, rho)
}

/// Disjoint covering blocks of sample indices, one per node.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Partition {
    pub blocks: Vec<Vec<usize>>,
}

impl Partition {
    /// JSON manifest `{"<node>": [indices...]}`.
    pub fn to_manifest_json(&self) -> String {
        let map: BTreeMap<usize, &Vec<usize>> = self.blocks.iter().enumerate().collect();
        serde_json::to_string_pretty(&map).expect("plain map")
    }

    pub fn from_manifest_json(text: &str) -> Result<Self, serde_json::Error> {
        let map: BTreeMap<usize, Vec<usize>> = serde_json::from_str(text)?;
        Ok(Self {
            blocks: map.into_values().collect(),
        })
    }
}

/// Seeded shuffle followed by contiguous blocks whose sizes differ by at
/// most one (the first `m mod n` blocks are larger). Each block is sorted.
pub fn partition_dataset(m: usize, n_nodes: usize, seed: u64) -> Result<Partition, ObjectiveError> {
    if n_nodes == 0 || m < n_nodes {
        return Err(ObjectiveError::Partition { m, n: n_nodes });
    }
    let mut idx: Vec<usize> = (0..m).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let (base, extra) = (m / n_nodes, m % n_nodes);
    let mut blocks = Vec::with_capacity(n_nodes);
    let mut start = 0;
    for k in 0..n_nodes {
        let len = base + usize::from(k < extra);
        let mut block = idx[start..start + len].to_vec();
        block.sort_unstable();
        blocks.push(block);
        start += len;
    }
    Ok(Partition { blocks })
}

/// Reads a numeric CSV. Rows and columns in errors are 1-based file
/// positions (the header, when present, is row 1).
pub fn load_csv_dataset(
    path: &Path,
    label_column: usize,
    normalize: bool,
    has_header: bool,
    rho: f64,
) -> Result<LogisticProblem, ObjectiveError> {
    let text = std::fs::read_to_string(path).map_err(|source| ObjectiveError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_csv_dataset(&text, label_column, normalize, has_header, rho)
}

pub fn parse_csv_dataset(
    text: &str,
    label_column: usize,
    normalize: bool,
    has_header: bool,
    rho: f64,
) -> Result<LogisticProblem, ObjectiveError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut labels = Vec::new();
    let mut bad_labels = Vec::new();
    let mut width = None;
    for (k, record) in reader.records().enumerate() {
        let row = k + 1;
        let record = record.map_err(|e| ObjectiveError::BadCell {
            row,
            col: 0,
            value: e.to_string(),
        })?;
        if has_header && k == 0 {
            continue;
        }
        if record.iter().all(str::is_empty) {
            continue;
        }
        let w = *width.get_or_insert(record.len());
        if record.len() != w {
            return Err(ObjectiveError::RaggedRow {
                row,
                found: record.len(),
                expected: w,
            });
        }
        if label_column >= w {
            return Err(ObjectiveError::LabelColumn {
                column: label_column,
                width: w,
            });
        }
        let mut feats = Vec::with_capacity(w - 1);
        for (c, cell) in record.iter().enumerate() {
            let v: f64 = cell.parse().map_err(|_| ObjectiveError::BadCell {
                row,
                col: c + 1,
                value: cell.to_string(),
            })?;
            if !v.is_finite() {
                return Err(ObjectiveError::BadCell {
                    row,
                    col: c + 1,
                    value: cell.to_string(),
                });
            }
            if c == label_column {
                if v != 0.0 && v != 1.0 {
                    bad_labels.push(cell.to_string());
                }
                labels.push(v);
            } else {
                feats.push(v);
            }
        }
        rows.push(feats);
    }
    if !bad_labels.is_empty() {
        return Err(ObjectiveError::NonBinaryLabels(dedup(bad_labels)));
    }
    if rows.is_empty() {
        return Err(ObjectiveError::Empty);
    }
    if normalize {
        normalize_columns(&mut rows);
    }
    LogisticProblem::new(rows, labels, rho)
}

/// Affine map of every column onto `[-1, 1]`; constant columns become 0.
fn normalize_columns(rows: &mut [Vec<f64>]) {
    let p = rows[0].len();
    for j in 0..p {
        let (lo, hi) = rows
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), r| {
                (lo.min(r[j]), hi.max(r[j]))
            });
        for r in rows.iter_mut() {
            r[j] = if hi > lo {
                (2.0 * (r[j] - lo) / (hi - lo) - 1.0).clamp(-1.0, 1.0)
            } else {
                0.0
            };
        }
    }
}
