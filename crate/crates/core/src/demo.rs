//! Five users, eight places: a small count matrix for walking through
//! factorization, re-expansion and surprise by hand.
//!
//! User 1 and user 5 live in the same area. In the test period user 1 also
//! visits user 5's house (`house-b`) and a restaurant nobody in their area
//! goes to (`restaurant-b`). The rank-3 reconstruction expects the first
//! visit and not the second.

use std::collections::BTreeMap;
use std::fs;
use std::io::Read;
use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::{reconstruct, truncated_svd, ExpectedMatrix, Index, MatrixMode, SvdMethod, VisitMatrix};
use crate::scoring::{aggregate_sum, surprise, SurpriseMatrix, SurpriseVariant};

pub const DEMO_CSV: &str = include_str!("../data/demo_matrix.csv");
pub const DEMO_RANK: usize = 3;

#[derive(Debug, Deserialize)]
struct Row {
    period: String,
    user_id: String,
    poi_id: String,
    poi_type: String,
    visits: u32,
}

/// Train and test count matrices over a shared index.
#[derive(Clone, Debug)]
pub struct DemoMatrices {
    pub train: VisitMatrix,
    pub test: VisitMatrix,
}

/// Parses `period,user_id,poi_id,poi_type,visits` rows; `period` is `train`
/// or `test`. Users and POIs are indexed in order of first appearance.
pub fn parse_demo<R: Read>(reader: R) -> Result<DemoMatrices> {
    let mut rows = Vec::new();
    for row in csv::Reader::from_reader(reader).deserialize() {
        let row: Row = row?;
        if row.period != "train" && row.period != "test" {
            return Err(Error::Schema(format!("unknown period `{}`", row.period)));
        }
        rows.push(row);
    }
    let users = Index::new(rows.iter().map(|r| r.user_id.clone()));
    let pois = Index::new(rows.iter().map(|r| r.poi_id.clone()));
    let mut types = vec![String::new(); pois.len()];
    let mut train = DMatrix::zeros(users.len(), pois.len());
    let mut test = train.clone();
    for r in &rows {
        let (u, p) = (users.position(&r.user_id).unwrap(), pois.position(&r.poi_id).unwrap());
        if !types[p].is_empty() && types[p] != r.poi_type {
            return Err(Error::Schema(format!("POI `{}` has conflicting types", r.poi_id)));
        }
        types[p] = r.poi_type.clone();
        let target = if r.period == "train" { &mut train } else { &mut test };
        target[(u, p)] += f64::from(r.visits);
    }
    Ok(DemoMatrices {
        train: VisitMatrix::from_dense(users.clone(), pois.clone(), types.clone(), &train, MatrixMode::Count)?,
        test: VisitMatrix::from_dense(users, pois, types, &test, MatrixMode::Count)?,
    })
}

pub fn demo_matrices() -> Result<DemoMatrices> {
    parse_demo(DEMO_CSV.as_bytes())
}

/// Reconstruction and surprise of the bundled matrix.
#[derive(Clone, Debug)]
pub struct DemoResult {
    pub matrices: DemoMatrices,
    pub expected: ExpectedMatrix,
    pub surprise: SurpriseMatrix,
    pub scores: BTreeMap<String, f64>,
}

pub fn run_demo(method: SvdMethod, seed: u64) -> Result<DemoResult> {
    let matrices = demo_matrices()?;
    let expected = reconstruct(&truncated_svd(&matrices.train, DEMO_RANK, method, seed)?);
    let surprise = surprise(&expected, &matrices.test, SurpriseVariant::Abs)?;
    let scores = aggregate_sum(&surprise);
    Ok(DemoResult {
        matrices,
        expected,
        surprise,
        scores,
    })
}

#[derive(Serialize)]
struct DemoDocument<'a> {
    users: &'a [String],
    pois: &'a [String],
    train: Vec<Vec<f64>>,
    test: Vec<Vec<f64>>,
    expected: Vec<Vec<f64>>,
    surprise: Vec<Vec<f64>>,
    scores: &'a BTreeMap<String, f64>,
}

fn rows_of(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

impl DemoResult {
    /// Fixed-width tables of the four matrices.
    pub fn render(&self) -> String {
        let users = self.matrices.train.users().ids();
        let pois = self.matrices.train.pois().ids();
        let mut out = String::new();
        let tables = [
            ("train visits", self.matrices.train.to_dense()),
            ("expected visits (rank 3)", self.expected.values().clone()),
            ("test visits", self.matrices.test.to_dense()),
            ("surprise |test - expected|", self.surprise.values().clone()),
        ];
        for (title, m) in tables {
            out.push_str(title);
            out.push('\n');
            out.push_str(&format!("{:<8}", ""));
            for p in pois {
                out.push_str(&format!("{p:>13}"));
            }
            out.push('\n');
            for (r, u) in users.iter().enumerate() {
                out.push_str(&format!("{u:<8}"));
                for c in 0..pois.len() {
                    out.push_str(&format!("{:>13.2}", m[(r, c)]));
                }
                out.push('\n');
            }
            out.push('\n');
        }
        out.push_str("user scores\n");
        for (u, s) in &self.scores {
            out.push_str(&format!("{u:<8}{s:>13.2}\n"));
        }
        out
    }

    /// Writes `demo.json` and `demo.txt` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let doc = DemoDocument {
            users: self.matrices.train.users().ids(),
            pois: self.matrices.train.pois().ids(),
            train: rows_of(&self.matrices.train.to_dense()),
            test: rows_of(&self.matrices.test.to_dense()),
            expected: rows_of(self.expected.values()),
            surprise: rows_of(self.surprise.values()),
            scores: &self.scores,
        };
        let json = dir.join("demo.json");
        fs::write(&json, serde_json::to_string_pretty(&doc)? + "\n").map_err(|e| Error::io(&json, e))?;
        let txt = dir.join("demo.txt");
        fs::write(&txt, self.render()).map_err(|e| Error::io(&txt, e))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cell(m: &ExpectedMatrix, d: &DemoMatrices, user: &str, poi: &str) -> f64 {
        m.get(d.train.users().position(user).unwrap(), d.train.pois().position(poi).unwrap())
    }

    #[test]
    fn bundled_matrix_shape() {
        let d = demo_matrices().unwrap();
        assert_eq!(d.train.shape(), (5, 8));
        let row: Vec<f64> = d.train.row(0).iter().map(|&(_, v)| v).collect();
        assert_eq!(row, vec![34.0, 20.0, 8.0, 3.0]);
    }

    #[test]
    fn shared_house_is_expected_new_restaurant_is_not() {
        for method in [SvdMethod::Deterministic, SvdMethod::Randomized] {
            let r = run_demo(method, 7).unwrap();
            let d = &r.matrices;
            assert_eq!(d.train.get(0, d.train.pois().position("house-b").unwrap()), 0.0);
            let house = cell(&r.expected, d, "user-1", "house-b");
            let restaurant = cell(&r.expected, d, "user-1", "restaurant-b");
            assert!(house > 0.0, "{house}");
            assert!(restaurant < house);
            assert!(restaurant.abs() < 0.5);
        }
    }

    #[test]
    fn demo_matches_independent_svd() {
        let r = run_demo(SvdMethod::Deterministic, 0).unwrap();
        let svd = r.matrices.train.to_dense().svd(true, true);
        let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
        order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));
        let (u, vt) = (svd.u.unwrap(), svd.v_t.unwrap());
        let mut oracle = DMatrix::zeros(5, 8);
        for &i in &order[..DEMO_RANK] {
            oracle += svd.singular_values[i] * u.column(i) * vt.row(i);
        }
        assert!((r.expected.values() - oracle).amax() < 1e-8);
    }

    #[test]
    fn conflicting_types_rejected() {
        let text = "period,user_id,poi_id,poi_type,visits\ntrain,u,p,A,1\ntest,u,p,B,1\n";
        assert!(matches!(parse_demo(text.as_bytes()), Err(Error::Schema(_))));
        let text = "period,user_id,poi_id,poi_type,visits\nlater,u,p,A,1\n";
        assert!(parse_demo(text.as_bytes()).is_err());
    }
}
