//! Sparse user × POI visit matrices and their low-rank factorizations.

mod svd;

use std::collections::{BTreeMap, HashMap};
use std::io::Write;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::trajectory::TrajectoryDataset;

pub use svd::{reconstruct, truncated_svd, truncated_svd_dense, FactorizedMatrix, SvdMethod};

/// Whether cells hold a visited flag or a visit count.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MatrixMode {
    #[default]
    Binary,
    Count,
}

impl std::str::FromStr for MatrixMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "binary" => Ok(Self::Binary),
            "count" => Ok(Self::Count),
            other => Err(Error::InvalidParameter(format!("unknown matrix mode `{other}`"))),
        }
    }
}

/// Bidirectional map between identifiers and dense positions.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Index {
    ids: Vec<String>,
    positions: HashMap<String, usize>,
}

impl Index {
    pub fn new<S: Into<String>>(ids: impl IntoIterator<Item = S>) -> Self {
        let mut index = Self::default();
        for id in ids {
            let id = id.into();
            if !index.positions.contains_key(&id) {
                index.positions.insert(id.clone(), index.ids.len());
                index.ids.push(id);
            }
        }
        index
    }

    pub fn position(&self, id: &str) -> Option<usize> {
        self.positions.get(id).copied()
    }

    pub fn id(&self, position: usize) -> &str {
        &self.ids[position]
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }
}

/// Sparse, row-major user × POI matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct VisitMatrix {
    users: Index,
    pois: Index,
    column_types: Vec<String>,
    /// Per row, `(column, value)` pairs sorted by column; no zeros stored.
    rows: Vec<Vec<(usize, f64)>>,
    mode: MatrixMode,
}

/// Builds the visit matrix of `dataset`.
///
/// Rows are every user of the dataset and columns every POI of its catalog,
/// both in ascending id order, so train and test halves of a split align.
pub fn build_matrix(dataset: &TrajectoryDataset, mode: MatrixMode) -> VisitMatrix {
    let users = Index::new(dataset.user_ids());
    let pois = Index::new(dataset.poi_catalog().keys().cloned());
    let column_types = dataset
        .poi_catalog()
        .values()
        .map(|info| info.venue_type.clone())
        .collect();

    let rows = dataset
        .trajectories()
        .map(|t| {
            let mut counts: BTreeMap<usize, f64> = BTreeMap::new();
            for r in t.records() {
                let col = pois.position(&r.poi_id).expect("record POI in catalog");
                *counts.entry(col).or_default() += 1.0;
            }
            counts
                .into_iter()
                .map(|(c, n)| match mode {
                    MatrixMode::Binary => (c, 1.0),
                    MatrixMode::Count => (c, n),
                })
                .collect()
        })
        .collect();

    VisitMatrix {
        users,
        pois,
        column_types,
        rows,
        mode,
    }
}

impl VisitMatrix {
    /// Builds a matrix from dense values, validating them against `mode`.
    pub fn from_dense(
        users: Index,
        pois: Index,
        column_types: Vec<String>,
        values: &DMatrix<f64>,
        mode: MatrixMode,
    ) -> Result<Self> {
        let shape = (users.len(), pois.len());
        if values.shape() != shape || column_types.len() != pois.len() {
            return Err(Error::ShapeMismatch {
                expected: shape,
                actual: values.shape(),
            });
        }
        let mut rows = vec![Vec::new(); users.len()];
        for (r, row) in rows.iter_mut().enumerate() {
            for c in 0..pois.len() {
                let v = values[(r, c)];
                let valid = match mode {
                    MatrixMode::Binary => v == 0.0 || v == 1.0,
                    MatrixMode::Count => v >= 0.0 && v.fract() == 0.0,
                };
                if !valid {
                    return Err(Error::InvalidParameter(format!(
                        "value {v} at ({r}, {c}) not allowed in {mode:?} mode"
                    )));
                }
                if v != 0.0 {
                    row.push((c, v));
                }
            }
        }
        Ok(Self {
            users,
            pois,
            column_types,
            rows,
            mode,
        })
    }

    /// Same matrix with every stored value replaced by 1.
    pub fn to_binary(&self) -> Self {
        Self {
            rows: self
                .rows
                .iter()
                .map(|row| row.iter().map(|&(c, _)| (c, 1.0)).collect())
                .collect(),
            mode: MatrixMode::Binary,
            ..self.clone()
        }
    }

    pub fn users(&self) -> &Index {
        &self.users
    }

    pub fn pois(&self) -> &Index {
        &self.pois
    }

    pub fn column_types(&self) -> &[String] {
        &self.column_types
    }

    pub fn mode(&self) -> MatrixMode {
        self.mode
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.users.len(), self.pois.len())
    }

    pub fn nnz(&self) -> usize {
        self.rows.iter().map(Vec::len).sum()
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        let entries = &self.rows[row];
        entries
            .binary_search_by_key(&col, |&(c, _)| c)
            .map_or(0.0, |i| entries[i].1)
    }

    /// Non-zero `(column, value)` pairs of a row, by column.
    pub fn row(&self, row: usize) -> &[(usize, f64)] {
        &self.rows[row]
    }

    pub fn row_sum(&self, row: usize) -> f64 {
        self.rows[row].iter().map(|&(_, v)| v).sum()
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let (n, m) = self.shape();
        let mut dense = DMatrix::zeros(n, m);
        for (r, row) in self.rows.iter().enumerate() {
            for &(c, v) in row {
                dense[(r, c)] = v;
            }
        }
        dense
    }

    /// Writes non-zero cells as `row col value` lines.
    pub fn write_coo<W: Write>(&self, mut sink: W) -> std::io::Result<()> {
        for (r, row) in self.rows.iter().enumerate() {
            for &(c, v) in row {
                writeln!(sink, "{r} {c} {v}")?;
            }
        }
        Ok(())
    }

    /// Index maps accompanying [`write_coo`](Self::write_coo).
    pub fn sidecar(&self) -> MatrixSidecar {
        MatrixSidecar {
            mode: self.mode,
            users: self.users.ids.clone(),
            pois: self.pois.ids.clone(),
            column_types: self.column_types.clone(),
        }
    }
}

/// JSON sidecar describing the rows and columns of an exported matrix.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MatrixSidecar {
    pub mode: MatrixMode,
    pub users: Vec<String>,
    pub pois: Vec<String>,
    pub column_types: Vec<String>,
}

/// Dense model expectation for every user-POI cell. Values are unbounded.
#[derive(Clone, Debug, PartialEq)]
pub struct ExpectedMatrix {
    values: DMatrix<f64>,
}

impl ExpectedMatrix {
    pub fn new(values: DMatrix<f64>) -> Self {
        Self { values }
    }

    pub fn zeros(n_users: usize, n_pois: usize) -> Self {
        Self::new(DMatrix::zeros(n_users, n_pois))
    }

    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut DMatrix<f64> {
        &mut self.values
    }

    pub fn shape(&self) -> (usize, usize) {
        self.values.shape()
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.values[(row, col)]
    }
}

/// Train-visit count per venue type for one user.
///
/// Counts visits, not distinct POIs, so the totals equal the user's
/// record count.
pub fn poi_type_histogram(dataset: &TrajectoryDataset, user: &str) -> Result<BTreeMap<String, usize>> {
    let trajectory = dataset
        .trajectory(user)
        .ok_or_else(|| Error::UnknownUser(user.to_string()))?;
    let mut histogram = BTreeMap::new();
    for r in trajectory.records() {
        *histogram.entry(r.venue_type.clone()).or_insert(0) += 1;
    }
    Ok(histogram)
}
