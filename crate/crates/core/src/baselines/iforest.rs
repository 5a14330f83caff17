use std::collections::BTreeMap;

use rand::seq::index::sample;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{check_rows, split_keyed, UserFeatureVector};
use crate::error::{Error, Result};
use crate::rng::{derive_seed, rng_from};

const STREAM_TREES: u64 = 0x1f0e;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct IForestParams {
    pub n_trees: usize,
    /// Capped at the dataset size.
    pub subsample_size: usize,
}

impl Default for IForestParams {
    fn default() -> Self {
        Self {
            n_trees: 100,
            subsample_size: 256,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
enum Node {
    Split {
        dim: usize,
        /// Points with `x[dim] <= value` go left.
        value: f64,
        left: Box<Node>,
        right: Box<Node>,
    },
    Leaf {
        size: usize,
    },
}

impl Node {
    fn height(&self) -> usize {
        match self {
            Node::Leaf { .. } => 0,
            Node::Split { left, right, .. } => 1 + left.height().max(right.height()),
        }
    }

    fn path_length(&self, x: &[f64], depth: usize) -> f64 {
        match self {
            Node::Leaf { size } => depth as f64 + average_path_length(*size),
            Node::Split { dim, value, left, right } => {
                let next = if x[*dim] <= *value { left } else { right };
                next.path_length(x, depth + 1)
            }
        }
    }
}

/// Average path length of an unsuccessful binary-search-tree lookup among
/// `n` points: `2·H(n−1) − 2(n−1)/n`, with 0 for `n ≤ 1`.
pub fn average_path_length(n: usize) -> f64 {
    if n <= 1 {
        return 0.0;
    }
    let harmonic: f64 = (1..n).map(|i| 1.0 / i as f64).sum();
    2.0 * harmonic - 2.0 * (n - 1) as f64 / n as f64
}

fn build(rows: &[Vec<f64>], idx: &mut [usize], depth: usize, limit: usize, rng: &mut impl Rng) -> Node {
    if depth >= limit || idx.len() <= 1 {
        return Node::Leaf { size: idx.len() };
    }
    let dim_count = rows[idx[0]].len();
    let ranges: Vec<(usize, f64, f64)> = (0..dim_count)
        .filter_map(|d| {
            let (lo, hi) = idx
                .iter()
                .map(|&i| rows[i][d])
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
            (hi > lo).then_some((d, lo, hi))
        })
        .collect();
    if ranges.is_empty() {
        return Node::Leaf { size: idx.len() };
    }
    let (dim, lo, hi) = ranges[rng.random_range(0..ranges.len())];
    let value = rng.random_range(lo..hi);
    let mut mid = 0;
    for j in 0..idx.len() {
        if rows[idx[j]][dim] <= value {
            idx.swap(j, mid);
            mid += 1;
        }
    }
    let (l, r) = idx.split_at_mut(mid);
    Node::Split {
        dim,
        value,
        left: Box::new(build(rows, l, depth + 1, limit, rng)),
        right: Box::new(build(rows, r, depth + 1, limit, rng)),
    }
}

/// A fitted forest of random isolation trees.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IsolationForest {
    trees: Vec<Node>,
    subsample_size: usize,
    dim: usize,
}

impl IsolationForest {
    /// Tree `t` draws its subsample and splits from `derive_seed(seed, _, t)`.
    pub fn fit(rows: &[Vec<f64>], params: &IForestParams, seed: u64) -> Result<Self> {
        let dim = check_rows(rows)?;
        if params.n_trees == 0 || params.subsample_size < 2 {
            return Err(Error::InvalidParameter(
                "isolation forest needs n_trees ≥ 1 and subsample_size ≥ 2".into(),
            ));
        }
        let psi = params.subsample_size.min(rows.len());
        let limit = (psi as f64).log2().ceil() as usize;
        let trees = (0..params.n_trees)
            .map(|t| {
                let mut rng = rng_from(derive_seed(seed, STREAM_TREES, t as u64));
                let mut idx = sample(&mut rng, rows.len(), psi).into_vec();
                build(rows, &mut idx, 0, limit, &mut rng)
            })
            .collect();
        Ok(Self {
            trees,
            subsample_size: psi,
            dim,
        })
    }

    pub fn n_trees(&self) -> usize {
        self.trees.len()
    }

    pub fn max_height(&self) -> usize {
        self.trees.iter().map(Node::height).max().unwrap_or(0)
    }

    pub fn subsample_size(&self) -> usize {
        self.subsample_size
    }

    /// Path length of `x` in each tree, leaf-size adjusted.
    pub fn path_lengths(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.dim {
            return Err(Error::ShapeMismatch {
                expected: (1, self.dim),
                actual: (1, x.len()),
            });
        }
        Ok(self.trees.iter().map(|t| t.path_length(x, 0)).collect())
    }

    /// `2^(−E[h(x)] / c(ψ))`, in (0, 1]; higher is more anomalous.
    pub fn score(&self, x: &[f64]) -> Result<f64> {
        let lengths = self.path_lengths(x)?;
        let mean = lengths.iter().sum::<f64>() / lengths.len() as f64;
        Ok(2f64.powf(-mean / average_path_length(self.subsample_size)))
    }
}

/// Fits a forest on all users and scores each of them.
pub fn iforest_fit_score(
    vectors: &BTreeMap<String, UserFeatureVector>,
    params: &IForestParams,
    seed: u64,
) -> Result<BTreeMap<String, f64>> {
    let (users, rows) = split_keyed(vectors);
    let forest = IsolationForest::fit(&rows, params, seed)?;
    users
        .into_iter()
        .zip(&rows)
        .map(|(u, x)| Ok((u, forest.score(x)?)))
        .collect()
}
