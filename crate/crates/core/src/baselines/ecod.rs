use std::collections::BTreeMap;

use super::{check_rows, split_keyed, UserFeatureVector};
use crate::error::Result;

/// Skewness magnitudes below this count as symmetric.
const SYMMETRIC: f64 = 1e-9;

fn skewness(column: &[f64]) -> f64 {
    let n = column.len() as f64;
    let mean = column.iter().sum::<f64>() / n;
    let m2 = column.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    if m2 == 0.0 {
        return 0.0;
    }
    let m3 = column.iter().map(|x| (x - mean).powi(3)).sum::<f64>() / n;
    m3 / m2.powf(1.5)
}

/// Per-dimension outlier score of every entry of `column`.
///
/// Left tail `#{x_j ≤ x}/n` and right tail `#{x_j ≥ x}/n` are empirical
/// CDF values, never below `1/n` for in-sample points. Left-skewed
/// dimensions use the left tail, right-skewed the right tail, and
/// symmetric ones the mean of both negative logs.
fn column_scores(column: &[f64]) -> Vec<f64> {
    let n = column.len();
    let mut sorted = column.to_vec();
    sorted.sort_by(f64::total_cmp);
    let skew = skewness(column);
    column
        .iter()
        .map(|&x| {
            let below_or_eq = sorted.partition_point(|&v| v <= x);
            let at_or_above = n - sorted.partition_point(|&v| v < x);
            let left = -(below_or_eq as f64 / n as f64).ln();
            let right = -(at_or_above as f64 / n as f64).ln();
            if skew < -SYMMETRIC {
                left
            } else if skew > SYMMETRIC {
                right
            } else {
                0.5 * (left + right)
            }
        })
        .collect()
}

/// ECOD score of each row: the sum of its per-dimension tail scores.
pub fn ecod_scores(rows: &[Vec<f64>]) -> Result<Vec<f64>> {
    let dim = check_rows(rows)?;
    let mut total = vec![0.0; rows.len()];
    for d in 0..dim {
        let column: Vec<f64> = rows.iter().map(|r| r[d]).collect();
        for (t, s) in total.iter_mut().zip(column_scores(&column)) {
            *t += s;
        }
    }
    Ok(total)
}

/// ECOD scores keyed by user.
pub fn ecod_score(vectors: &BTreeMap<String, UserFeatureVector>) -> Result<BTreeMap<String, f64>> {
    let (users, rows) = split_keyed(vectors);
    Ok(users.into_iter().zip(ecod_scores(&rows)?).collect())
}
