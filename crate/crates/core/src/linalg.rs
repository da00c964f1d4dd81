//! Dense symmetric linear algebra for the Newton engines.
//!
//! Matrices are stored as packed upper triangles, so symmetry holds by
//! construction and the packed buffer doubles as the wire format for Hessian
//! messages.

use thiserror::Error;

pub const DEFAULT_TOL: f64 = 1e-10;
const MAX_JACOBI_SWEEPS: usize = 100;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LinalgError {
    #[error("matrix contains non-finite entries")]
    NonFinite,
    #[error("eigenvalue iteration did not converge (residual {residual:e})")]
    NoConvergence { residual: f64 },
    #[error("matrix is not positive definite: pivot {index} is {value:e}")]
    NotPositiveDefinite { index: usize, value: f64 },
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("Sherman–Morrison update {index} broke down (denominator {denominator:e}); refactorize")]
    SmwBreakdown { index: usize, denominator: f64 },
}

fn packed_len(p: usize) -> usize {
    p * (p + 1) / 2
}

/// Symmetric `p x p` matrix in packed upper-triangular row-major storage.
#[derive(Debug, Clone, PartialEq)]
pub struct SymmetricMatrix {
    dim: usize,
    upper: Vec<f64>,
}

impl SymmetricMatrix {
    pub fn zeros(dim: usize) -> Self {
        Self {
            dim,
            upper: vec![0.0; packed_len(dim)],
        }
    }

    pub fn identity(dim: usize) -> Self {
        Self::scaled_identity(dim, 1.0)
    }

    pub fn scaled_identity(dim: usize, value: f64) -> Self {
        let mut m = Self::zeros(dim);
        for i in 0..dim {
            m.set(i, i, value);
        }
        m
    }

    pub fn diagonal(diag: &[f64]) -> Self {
        let mut m = Self::zeros(diag.len());
        for (i, &d) in diag.iter().enumerate() {
            m.set(i, i, d);
        }
        m
    }

    /// Builds from a function evaluated on the upper triangle (`i <= j`).
    pub fn from_fn(dim: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut upper = Vec::with_capacity(packed_len(dim));
        for i in 0..dim {
            for j in i..dim {
                upper.push(f(i, j));
            }
        }
        Self { dim, upper }
    }

    /// Takes the upper triangle of a square row-major matrix.
    pub fn from_dense_upper(rows: &[Vec<f64>]) -> Self {
        Self::from_fn(rows.len(), |i, j| rows[i][j])
    }

    pub fn from_packed(dim: usize, upper: Vec<f64>) -> Result<Self, LinalgError> {
        if upper.len() != packed_len(dim) {
            return Err(LinalgError::DimensionMismatch {
                expected: packed_len(dim),
                found: upper.len(),
            });
        }
        Ok(Self { dim, upper })
    }

    /// `s * h * h^T`.
    pub fn outer(s: f64, h: &[f64]) -> Self {
        Self::from_fn(h.len(), |i, j| s * h[i] * h[j])
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn packed(&self) -> &[f64] {
        &self.upper
    }

    fn index(&self, i: usize, j: usize) -> usize {
        let (i, j) = if i <= j { (i, j) } else { (j, i) };
        i * (2 * self.dim - i + 1) / 2 + (j - i)
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.upper[self.index(i, j)]
    }

    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        let k = self.index(i, j);
        self.upper[k] = v;
    }

    pub fn add_assign(&mut self, other: &SymmetricMatrix) {
        assert_eq!(self.dim, other.dim, "dimension mismatch");
        for (a, b) in self.upper.iter_mut().zip(&other.upper) {
            *a += b;
        }
    }

    pub fn sub(&self, other: &SymmetricMatrix) -> SymmetricMatrix {
        assert_eq!(self.dim, other.dim, "dimension mismatch");
        SymmetricMatrix {
            dim: self.dim,
            upper: self
                .upper
                .iter()
                .zip(&other.upper)
                .map(|(a, b)| a - b)
                .collect(),
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for a in &mut self.upper {
            *a *= factor;
        }
    }

    /// In-place `self += s * h * h^T`.
    pub fn add_rank1(&mut self, s: f64, h: &[f64]) {
        assert_eq!(self.dim, h.len(), "dimension mismatch");
        let mut k = 0;
        for i in 0..self.dim {
            let shi = s * h[i];
            for &hj in &h[i..] {
                self.upper[k] += shi * hj;
                k += 1;
            }
        }
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(self.dim, x.len(), "dimension mismatch");
        let mut y = vec![0.0; self.dim];
        for (i, yi) in y.iter_mut().enumerate() {
            *yi = (0..self.dim).map(|j| self.get(i, j) * x[j]).sum();
        }
        y
    }

    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        (0..self.dim)
            .map(|i| (0..self.dim).map(|j| self.get(i, j)).collect())
            .collect()
    }

    pub fn is_finite(&self) -> bool {
        self.upper.iter().all(|v| v.is_finite())
    }

    pub fn frobenius_norm(&self) -> f64 {
        let mut s = 0.0;
        for i in 0..self.dim {
            for j in 0..self.dim {
                s += self.get(i, j).powi(2);
            }
        }
        s.sqrt()
    }

    /// Largest eigenvalue magnitude.
    pub fn spectral_norm(&self) -> Result<f64, LinalgError> {
        let eig = symmetric_eigen(self)?;
        Ok(eig.values.iter().fold(0.0_f64, |m, v| m.max(v.abs())))
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm2(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Full eigendecomposition. `vectors[k]` is the unit eigenvector for
/// `values[k]`.
#[derive(Debug, Clone)]
pub struct SymmetricEigen {
    pub values: Vec<f64>,
    pub vectors: Vec<Vec<f64>>,
}

/// Cyclic Jacobi eigendecomposition.
pub fn symmetric_eigen(a: &SymmetricMatrix) -> Result<SymmetricEigen, LinalgError> {
    if !a.is_finite() {
        return Err(LinalgError::NonFinite);
    }
    let p = a.dim();
    let mut m = a.to_dense();
    let mut v: Vec<Vec<f64>> = (0..p)
        .map(|i| (0..p).map(|j| if i == j { 1.0 } else { 0.0 }).collect())
        .collect();
    let scale = a.frobenius_norm();
    let off = |m: &Vec<Vec<f64>>| -> f64 {
        let mut s = 0.0;
        for i in 0..p {
            for j in (i + 1)..p {
                s += m[i][j] * m[i][j];
            }
        }
        s.sqrt()
    };
    let target = f64::EPSILON * scale;
    let mut converged = scale == 0.0;
    for _ in 0..MAX_JACOBI_SWEEPS {
        if converged || off(&m) <= target {
            converged = true;
            break;
        }
        for i in 0..p {
            for j in (i + 1)..p {
                let aij = m[i][j];
                if aij == 0.0 {
                    continue;
                }
                let theta = (m[j][j] - m[i][i]) / (2.0 * aij);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for row in m.iter_mut() {
                    let (ki, kj) = (row[i], row[j]);
                    row[i] = c * ki - s * kj;
                    row[j] = s * ki + c * kj;
                }
                for k in 0..p {
                    let (ik, jk) = (m[i][k], m[j][k]);
                    m[i][k] = c * ik - s * jk;
                    m[j][k] = s * ik + c * jk;
                }
                for row in v.iter_mut() {
                    let (ki, kj) = (row[i], row[j]);
                    row[i] = c * ki - s * kj;
                    row[j] = s * ki + c * kj;
                }
            }
        }
    }
    if !converged && off(&m) > target * 1e3 {
        return Err(LinalgError::NoConvergence { residual: off(&m) });
    }
    let values = (0..p).map(|i| m[i][i]).collect();
    let vectors = (0..p).map(|k| (0..p).map(|i| v[i][k]).collect()).collect();
    Ok(SymmetricEigen { values, vectors })
}

/// Flips `w` so its first entry of non-negligible magnitude is positive.
fn canonical_sign(w: &mut [f64]) {
    let big = w.iter().fold(0.0_f64, |m, x| m.max(x.abs()));
    if let Some(first) = w.iter().find(|x| x.abs() > 1e-12 * big) {
        if *first < 0.0 {
            w.iter_mut().for_each(|x| *x = -*x);
        }
    }
}

/// Dominant eigenpair by magnitude together with the second-largest
/// magnitude.
#[derive(Debug, Clone, PartialEq)]
pub struct TopTwo {
    pub lambda1: f64,
    pub w1: Vec<f64>,
    pub lambda2_abs: f64,
}

/// Largest-magnitude eigenvalue with its unit eigenvector and the magnitude
/// of the runner-up. Magnitude ties prefer the positive eigenvalue, then the
/// lower index.
pub fn top_two_eigen(a: &SymmetricMatrix, tol: f64) -> Result<TopTwo, LinalgError> {
    let p = a.dim();
    if p == 0 {
        return Ok(TopTwo {
            lambda1: 0.0,
            w1: Vec::new(),
            lambda2_abs: 0.0,
        });
    }
    let eig = symmetric_eigen(a)?;
    let mut order: Vec<usize> = (0..p).collect();
    order.sort_by(|&x, &y| {
        let (vx, vy) = (eig.values[x], eig.values[y]);
        vy.abs()
            .total_cmp(&vx.abs())
            .then(vy.total_cmp(&vx))
            .then(x.cmp(&y))
    });
    let k1 = order[0];
    let lambda1 = eig.values[k1];
    let mut w1 = eig.vectors[k1].clone();
    canonical_sign(&mut w1);
    let lambda2_abs = order.get(1).map_or(0.0, |&k| eig.values[k].abs());

    let norm_a = lambda1.abs();
    let aw = a.mul_vec(&w1);
    let residual = norm2(
        &aw.iter()
            .zip(&w1)
            .map(|(x, w)| x - lambda1 * w)
            .collect::<Vec<_>>(),
    );
    if residual > tol * norm_a.max(1.0) {
        return Err(LinalgError::NoConvergence { residual });
    }
    Ok(TopTwo {
        lambda1,
        w1,
        lambda2_abs,
    })
}

/// Best rank-1 spectral approximation `s * h * h^T` of a symmetric matrix
/// with its error `r`.
#[derive(Debug, Clone, PartialEq)]
pub struct Rank1Innovation {
    pub sign: f64,
    pub h: Vec<f64>,
    pub error: f64,
}

impl Rank1Innovation {
    pub fn as_matrix(&self) -> SymmetricMatrix {
        SymmetricMatrix::outer(self.sign, &self.h)
    }
}

/// `h = sqrt(|λ1|) w1`, `s = sign(λ1)` (+1 for zero), `r = |λ2|`.
pub fn rank1_truncate(innovation: &SymmetricMatrix, tol: f64) -> Result<Rank1Innovation, LinalgError> {
    let top = top_two_eigen(innovation, tol)?;
    let sign = if top.lambda1 < 0.0 { -1.0 } else { 1.0 };
    let root = top.lambda1.abs().sqrt();
    Ok(Rank1Innovation {
        sign,
        h: top.w1.iter().map(|w| root * w).collect(),
        error: top.lambda2_abs,
    })
}

/// Cholesky factor `L` (lower, row-major dense) with `A = L L^T`.
#[derive(Debug, Clone)]
pub struct Cholesky {
    dim: usize,
    l: Vec<f64>,
}

impl Cholesky {
    pub fn factor(a: &SymmetricMatrix) -> Result<Self, LinalgError> {
        if !a.is_finite() {
            return Err(LinalgError::NonFinite);
        }
        let p = a.dim();
        let mut l = vec![0.0; p * p];
        for j in 0..p {
            let mut d = a.get(j, j);
            for k in 0..j {
                d -= l[j * p + k] * l[j * p + k];
            }
            if d <= 0.0 || !d.is_finite() {
                return Err(LinalgError::NotPositiveDefinite { index: j, value: d });
            }
            let djj = d.sqrt();
            l[j * p + j] = djj;
            for i in (j + 1)..p {
                let mut s = a.get(i, j);
                for k in 0..j {
                    s -= l[i * p + k] * l[j * p + k];
                }
                l[i * p + j] = s / djj;
            }
        }
        Ok(Self { dim: p, l })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn solve(&self, b: &[f64]) -> Result<Vec<f64>, LinalgError> {
        let p = self.dim;
        if b.len() != p {
            return Err(LinalgError::DimensionMismatch {
                expected: p,
                found: b.len(),
            });
        }
        let mut y = b.to_vec();
        for i in 0..p {
            let mut s = y[i];
            for k in 0..i {
                s -= self.l[i * p + k] * y[k];
            }
            y[i] = s / self.l[i * p + i];
        }
        for i in (0..p).rev() {
            let mut s = y[i];
            for k in (i + 1)..p {
                s -= self.l[k * p + i] * y[k];
            }
            y[i] = s / self.l[i * p + i];
        }
        Ok(y)
    }
}

/// Solves `h d = g` for symmetric positive definite `h` via Cholesky.
pub fn spd_solve(h: &SymmetricMatrix, g: &[f64]) -> Result<Vec<f64>, LinalgError> {
    Cholesky::factor(h)?.solve(g)
}

/// One symmetric rank-1 term `s * h * h^T`.
#[derive(Debug, Clone, PartialEq)]
pub struct Rank1Term {
    pub sign: f64,
    pub h: Vec<f64>,
}

/// Solves `(H + Σ s_u h_u h_u^T) d = g` given a Cholesky factor of `H`, by
/// applying the Sherman–Morrison formula once per term. Costs `O(k p^2)`
/// for the initial solves plus `O(k^2 p)` for the updates.
pub fn smw_solve(
    base: &Cholesky,
    updates: &[Rank1Term],
    g: &[f64],
    tol: f64,
) -> Result<Vec<f64>, LinalgError> {
    let mut x = base.solve(g)?;
    // z[u] holds A_{j}^{-1} h_u for the current prefix A_j.
    let mut z: Vec<Vec<f64>> = updates
        .iter()
        .map(|t| base.solve(&t.h))
        .collect::<Result<_, _>>()?;
    for j in 0..updates.len() {
        let (s, h) = (updates[j].sign, &updates[j].h);
        let zj = z[j].clone();
        let denom = 1.0 + s * dot(h, &zj);
        if denom <= tol || !denom.is_finite() {
            return Err(LinalgError::SmwBreakdown {
                index: j,
                denominator: denom,
            });
        }
        let coef = s * dot(h, &x) / denom;
        x.iter_mut().zip(&zj).for_each(|(xi, zi)| *xi -= coef * zi);
        for zu in z.iter_mut().skip(j + 1) {
            let c = s * dot(h, zu) / denom;
            zu.iter_mut().zip(&zj).for_each(|(a, zi)| *a -= c * zi);
        }
    }
    Ok(x)
}
