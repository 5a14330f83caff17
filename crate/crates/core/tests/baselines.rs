mod common;

use std::collections::BTreeSet;

use proptest::prelude::*;
use trajcf_core::baselines::{
    average_path_length, ecod_scores, featurize_users, iforest_fit_score, IForestParams, IsolationForest,
    FEATURE_NAMES, N_FEATURES,
};
use trajcf_core::trajectory::split_train_test;

fn skew_side(column: &[f64]) -> i8 {
    let n = column.len() as f64;
    let mean = column.iter().sum::<f64>() / n;
    let m2 = column.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    if m2 == 0.0 {
        return 0;
    }
    let skew = column.iter().map(|x| (x - mean).powi(3)).sum::<f64>() / n / m2.powf(1.5);
    if skew < -1e-9 {
        -1
    } else if skew > 1e-9 {
        1
    } else {
        0
    }
}

fn columns(rows: &[Vec<f64>]) -> Vec<Vec<f64>> {
    (0..rows[0].len()).map(|d| rows.iter().map(|r| r[d]).collect()).collect()
}

fn rows_strategy() -> impl Strategy<Value = Vec<Vec<f64>>> {
    (1..4usize).prop_flat_map(|dim| proptest::collection::vec(proptest::collection::vec(-5i32..6, dim), 2..30))
        .prop_map(|rows| rows.into_iter().map(|r| r.into_iter().map(f64::from).collect()).collect())
}

fn close(a: &[f64], b: &[f64]) -> bool {
    a.iter().zip(b).all(|(x, y)| (x - y).abs() <= 1e-12 * x.abs().max(1.0))
}

proptest! {
    #[test]
    fn ecod_ignores_affine_rescaling(rows in rows_strategy(), scale in 0.1..10.0f64, shift in -100.0..100.0f64, flip in any::<bool>()) {
        let sign = if flip { -1.0 } else { 1.0 };
        let moved: Vec<Vec<f64>> = rows.iter().map(|r| r.iter().map(|x| sign * scale * x + shift).collect()).collect();
        // Skewness flips with the sign and the chosen tail flips with it; only
        // near-symmetric columns can disagree numerically.
        let sides_agree = columns(&rows).iter().zip(columns(&moved).iter()).all(|(a, b)| skew_side(a) == sign as i8 * skew_side(b));
        prop_assume!(sides_agree);
        prop_assert!(close(&ecod_scores(&rows).unwrap(), &ecod_scores(&moved).unwrap()));
    }

    #[test]
    fn ecod_ignores_monotone_maps_that_keep_the_tail(rows in rows_strategy()) {
        let moved: Vec<Vec<f64>> = rows.iter().map(|r| r.iter().map(|x| x.powi(3) + 2.0 * x).collect()).collect();
        let sides_agree = columns(&rows).iter().zip(columns(&moved).iter()).all(|(a, b)| skew_side(a) == skew_side(b));
        prop_assume!(sides_agree);
        prop_assert!(close(&ecod_scores(&rows).unwrap(), &ecod_scores(&moved).unwrap()));
    }

    #[test]
    fn duplicating_the_median_bounds_the_change(values in proptest::collection::vec(0i32..10, 3..15)) {
        let values: Vec<f64> = values.into_iter().map(f64::from).collect();
        let n = values.len();
        let mut sorted = values.clone();
        sorted.sort_by(f64::total_cmp);
        let median = sorted[n / 2];
        let mut grown = values.clone();
        grown.push(median);
        prop_assume!(skew_side(&values) == skew_side(&grown));
        let one_d = |v: &[f64]| ecod_scores(&v.iter().map(|&x| vec![x]).collect::<Vec<_>>()).unwrap();
        let (before, after) = (one_d(&values), one_d(&grown));
        let at = values.iter().position(|&x| x == median).unwrap();
        prop_assert!(after[at] <= before[at] + 1e-12);
        let max = |s: &[f64]| s.iter().copied().fold(f64::MIN, f64::max);
        prop_assert!(max(&after) <= max(&before) + ((n + 1) as f64 / n as f64).ln() + 1e-12);
    }

    #[test]
    fn iforest_scores_lie_in_unit_interval(rows in rows_strategy(), seed in any::<u64>()) {
        let params = IForestParams { n_trees: 20, subsample_size: 16 };
        let forest = IsolationForest::fit(&rows, &params, seed).unwrap();
        prop_assert!(forest.max_height() <= (forest.subsample_size() as f64).log2().ceil() as usize);
        for r in &rows {
            let s = forest.score(r).unwrap();
            prop_assert!(s > 0.0 && s <= 1.0, "{}", s);
        }
    }

    #[test]
    fn unseen_poi_count_is_a_set_difference(ds in common::dataset(), t in 0i64..1_000_000) {
        let split = split_train_test(&ds, t);
        let features = featurize_users(&split).unwrap();
        for (user, v) in &features {
            prop_assert_eq!(v.values.len(), N_FEATURES);
            prop_assert!(v.values.iter().all(|x| x.is_finite() && *x >= 0.0));
            let pois = |d: &trajcf_core::trajectory::TrajectoryDataset| -> BTreeSet<String> {
                d.trajectory(user).map(|t| t.records().iter().map(|r| r.poi_id.clone()).collect()).unwrap_or_default()
            };
            let train = pois(&split.train);
            let expected = if v.cold_start { 0 } else { pois(&split.test).difference(&train).count() };
            prop_assert_eq!(v.values[8], expected as f64);
            prop_assert_eq!(v.cold_start, train.is_empty());
        }
    }
}

/// Appending a copy of the median to this column raises the largest score:
/// the most extreme point's tail share shrinks from 1/11 to 1/12.
#[test]
fn duplicated_median_can_raise_the_maximum() {
    let values = [6.0, 5.0, 2.0, 3.0, 0.0, 0.0, 0.0, 1.0, 8.0, 6.0, 9.0];
    let one_d = |v: &[f64]| ecod_scores(&v.iter().map(|&x| vec![x]).collect::<Vec<_>>()).unwrap();
    let before = one_d(&values);
    let mut grown = values.to_vec();
    grown.push(3.0);
    let after = one_d(&grown);
    let max = |s: &[f64]| s.iter().copied().fold(f64::MIN, f64::max);
    assert!((max(&before) - 11f64.ln()).abs() < 1e-12);
    assert!((max(&after) - 12f64.ln()).abs() < 1e-12);
}

#[test]
fn iforest_report_is_keyed_by_user() {
    let mut features = std::collections::BTreeMap::new();
    for i in 0..30 {
        let mut values = [0.0; N_FEATURES];
        values[0] = (i % 5) as f64;
        values[8] = if i == 7 { 40.0 } else { 1.0 };
        features.insert(format!("u{i:02}"), trajcf_core::baselines::UserFeatureVector { values, cold_start: false });
    }
    let scores = iforest_fit_score(&features, &IForestParams::default(), 3).unwrap();
    assert_eq!(scores.len(), 30);
    let top = scores.iter().max_by(|a, b| a.1.total_cmp(b.1)).unwrap().0;
    assert_eq!(top, "u07");
    assert_eq!(FEATURE_NAMES.len(), N_FEATURES);
    for n in [2usize, 3, 10, 256] {
        let harmonic: f64 = (1..n).map(|i| 1.0 / i as f64).sum();
        let oracle = 2.0 * harmonic - 2.0 * (n - 1) as f64 / n as f64;
        assert!((average_path_length(n) - oracle).abs() < 1e-12);
    }
}
