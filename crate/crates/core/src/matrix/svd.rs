//! Truncated SVD: an exact one-sided Jacobi path and a randomized
//! range-finder path.

use nalgebra::{DMatrix, DVector};
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{ExpectedMatrix, VisitMatrix};
use crate::error::{Error, Result};
use crate::rng::rng_from;

const OVERSAMPLING: usize = 10;
const POWER_ITERATIONS: usize = 2;
const MAX_SWEEPS: usize = 80;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SvdMethod {
    #[default]
    Deterministic,
    Randomized,
}

impl std::str::FromStr for SvdMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "deterministic" => Ok(Self::Deterministic),
            "randomized" => Ok(Self::Randomized),
            other => Err(Error::InvalidParameter(format!("unknown SVD method `{other}`"))),
        }
    }
}

/// Rank-k factors `left · diag(singular_values) · rightᵀ`.
#[derive(Clone, Debug, PartialEq)]
pub struct FactorizedMatrix {
    /// n_rows × k, orthonormal columns.
    pub left: DMatrix<f64>,
    /// Non-increasing, non-negative.
    pub singular_values: DVector<f64>,
    /// n_cols × k, orthonormal columns.
    pub right: DMatrix<f64>,
}

impl FactorizedMatrix {
    pub fn k(&self) -> usize {
        self.singular_values.len()
    }
}

pub fn truncated_svd(matrix: &VisitMatrix, k: usize, method: SvdMethod, seed: u64) -> Result<FactorizedMatrix> {
    truncated_svd_dense(&matrix.to_dense(), k, method, seed)
}

/// Top-`k` singular triplets of a dense matrix.
pub fn truncated_svd_dense(a: &DMatrix<f64>, k: usize, method: SvdMethod, seed: u64) -> Result<FactorizedMatrix> {
    let max = a.nrows().min(a.ncols());
    if k == 0 || k > max {
        return Err(Error::RankOutOfRange { k, max });
    }
    let (u, s, v) = match method {
        SvdMethod::Deterministic => thin_svd(a),
        SvdMethod::Randomized => randomized_svd(a, k, seed),
    };
    Ok(FactorizedMatrix {
        left: u.columns(0, k).into_owned(),
        singular_values: s.rows(0, k).into_owned(),
        right: v.columns(0, k).into_owned(),
    })
}

/// `left · diag(σ) · rightᵀ`.
pub fn reconstruct(factors: &FactorizedMatrix) -> ExpectedMatrix {
    let mut scaled = factors.left.clone();
    for (j, sigma) in factors.singular_values.iter().enumerate() {
        scaled.column_mut(j).scale_mut(*sigma);
    }
    ExpectedMatrix::new(scaled * factors.right.transpose())
}

fn randomized_svd(a: &DMatrix<f64>, k: usize, seed: u64) -> (DMatrix<f64>, DVector<f64>, DMatrix<f64>) {
    let (m, n) = a.shape();
    let l = (k + OVERSAMPLING).min(m.min(n));
    let mut rng = rng_from(seed);
    let omega = DMatrix::from_fn(n, l, |_, _| StandardNormal.sample(&mut rng));

    let mut q = orthonormalize(a * omega);
    for _ in 0..POWER_ITERATIONS {
        let z = orthonormalize(a.transpose() * &q);
        q = orthonormalize(a * z);
    }
    let b = q.transpose() * a;
    let (ub, s, v) = thin_svd(&b);
    (q * ub, s, v)
}

fn orthonormalize(y: DMatrix<f64>) -> DMatrix<f64> {
    y.qr().q()
}

/// Thin SVD `a = U diag(s) Vᵀ` with r = min(m, n) triplets, s descending.
fn thin_svd(a: &DMatrix<f64>) -> (DMatrix<f64>, DVector<f64>, DMatrix<f64>) {
    if a.nrows() < a.ncols() {
        let (u, s, v) = jacobi_tall(&a.transpose());
        return (v, s, u);
    }
    jacobi_tall(a)
}

/// One-sided (Hestenes) Jacobi for m ≥ n.
fn jacobi_tall(a: &DMatrix<f64>) -> (DMatrix<f64>, DVector<f64>, DMatrix<f64>) {
    let (m, n) = a.shape();
    let mut u = a.clone();
    let mut v = DMatrix::<f64>::identity(n, n);

    for _ in 0..MAX_SWEEPS {
        let mut rotated = false;
        for p in 0..n {
            for q in (p + 1)..n {
                let alpha = u.column(p).norm_squared();
                let beta = u.column(q).norm_squared();
                let gamma = u.column(p).dot(&u.column(q));
                if gamma == 0.0 || gamma.abs() <= f64::EPSILON * (alpha * beta).sqrt() {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                rotate(&mut u, p, q, c, s);
                rotate(&mut v, p, q, c, s);
            }
        }
        if !rotated {
            break;
        }
    }

    let norms: Vec<f64> = (0..n).map(|j| u.column(j).norm()).collect();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| norms[j].total_cmp(&norms[i]).then(i.cmp(&j)));

    let sigma_max = norms.iter().copied().fold(0.0, f64::max);
    let negligible = sigma_max * f64::EPSILON * m.max(n) as f64;

    let mut left = DMatrix::zeros(m, n);
    let mut right = DMatrix::zeros(n, n);
    let mut sigma = DVector::zeros(n);
    let mut deficient = Vec::new();
    for (dst, &src) in order.iter().enumerate() {
        sigma[dst] = norms[src];
        right.set_column(dst, &v.column(src));
        if norms[src] > negligible {
            left.set_column(dst, &(u.column(src) / norms[src]));
        } else {
            deficient.push(dst);
        }
    }
    complete_basis(&mut left, &deficient);
    (left, sigma, right)
}

fn rotate(mat: &mut DMatrix<f64>, p: usize, q: usize, c: f64, s: f64) {
    for i in 0..mat.nrows() {
        let xp = mat[(i, p)];
        let xq = mat[(i, q)];
        mat[(i, p)] = c * xp - s * xq;
        mat[(i, q)] = s * xp + c * xq;
    }
}

/// Fills the listed zero columns with unit vectors orthogonal to all others.
fn complete_basis(mat: &mut DMatrix<f64>, columns: &[usize]) {
    let m = mat.nrows();
    let mut candidate = 0;
    for &col in columns {
        loop {
            assert!(candidate < m, "basis completion ran out of candidates");
            let mut x = DVector::<f64>::zeros(m);
            x[candidate] = 1.0;
            candidate += 1;
            // Two Gram-Schmidt passes against every column filled so far.
            for _ in 0..2 {
                for j in 0..mat.ncols() {
                    let proj = mat.column(j).dot(&x);
                    x -= mat.column(j) * proj;
                }
            }
            let norm = x.norm();
            if norm > 0.5 {
                mat.set_column(col, &(x / norm));
                break;
            }
        }
    }
}
