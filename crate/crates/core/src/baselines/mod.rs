//! Unsupervised per-user baselines: a tabular featurization of each user's
//! test-period behavior, scored by Isolation Forest or ECOD.

mod ecod;
mod iforest;

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scoring::type_profile;
use crate::trajectory::{derive_features, SplitDataset};

pub use ecod::{ecod_score, ecod_scores};
pub use iforest::{average_path_length, iforest_fit_score, IForestParams, IsolationForest};

pub const FEATURE_NAMES: [&str; 9] = [
    "visits",
    "distinct_pois",
    "distinct_types",
    "mean_travel_km",
    "max_travel_km",
    "mean_stay_minutes",
    "night_fraction",
    "off_type_fraction",
    "unseen_pois",
];

pub const N_FEATURES: usize = FEATURE_NAMES.len();

/// Test-period behavior summary of one user, in [`FEATURE_NAMES`] order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UserFeatureVector {
    pub values: [f64; N_FEATURES],
    /// Set for users without train visits; their values are all zero.
    pub cold_start: bool,
}

fn is_night(hour: u8) -> bool {
    !(6..22).contains(&hour)
}

/// Features for every user of the split.
pub fn featurize_users(split: &SplitDataset) -> Result<BTreeMap<String, UserFeatureVector>> {
    let mut out = BTreeMap::new();
    for user in split.test.user_ids() {
        let cold_start = split.cold_start.contains(user);
        let mut values = [0.0; N_FEATURES];
        let test = split
            .test
            .trajectory(user)
            .ok_or_else(|| Error::UnknownUser(user.to_string()))?;
        if !cold_start && !test.is_empty() {
            let records = test.records();
            let features = derive_features(test);
            let n = records.len() as f64;
            let train_pois: BTreeSet<&str> = split
                .train
                .trajectory(user)
                .map(|t| t.records().iter().map(|r| r.poi_id.as_str()).collect())
                .unwrap_or_default();
            let test_pois: BTreeSet<&str> = records.iter().map(|r| r.poi_id.as_str()).collect();
            let types: BTreeSet<&str> = records.iter().map(|r| r.venue_type.as_str()).collect();
            let most_likely = type_profile(&split.train, user)?.most_likely;

            values[0] = n;
            values[1] = test_pois.len() as f64;
            values[2] = types.len() as f64;
            values[3] = features.iter().map(|f| f.travel_km).sum::<f64>() / n;
            values[4] = features.iter().map(|f| f.travel_km).fold(0.0, f64::max);
            values[5] = features.iter().map(|f| f.stay_minutes).sum::<f64>() / n;
            values[6] = features.iter().filter(|f| is_night(f.hour)).count() as f64 / n;
            values[7] = match most_likely {
                Some(t) => records.iter().filter(|r| r.venue_type != t).count() as f64 / n,
                None => 0.0,
            };
            values[8] = test_pois.difference(&train_pois).count() as f64;
        }
        out.insert(user.to_string(), UserFeatureVector { values, cold_start });
    }
    Ok(out)
}

/// Checks that `rows` holds at least two vectors of one common dimension.
fn check_rows(rows: &[Vec<f64>]) -> Result<usize> {
    if rows.len() < 2 {
        return Err(Error::InvalidParameter("baselines need at least two users".into()));
    }
    let dim = rows[0].len();
    if let Some(bad) = rows.iter().find(|r| r.len() != dim) {
        return Err(Error::ShapeMismatch {
            expected: (rows.len(), dim),
            actual: (rows.len(), bad.len()),
        });
    }
    if rows.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::InvalidParameter("feature values must be finite".into()));
    }
    Ok(dim)
}

fn split_keyed(vectors: &BTreeMap<String, UserFeatureVector>) -> (Vec<String>, Vec<Vec<f64>>) {
    vectors
        .iter()
        .map(|(u, v)| (u.clone(), v.values.to_vec()))
        .unzip()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trajectory::{GeoPoint, StaypointRecord, TrajectoryDataset};

    fn rec(user: &str, lat: f64, t: i64, venue: &str) -> StaypointRecord {
        StaypointRecord::new(user, GeoPoint::new(lat, 116.0).unwrap(), t, t + 600, venue, None).unwrap()
    }

    fn split() -> SplitDataset {
        let h = 3600;
        TrajectoryDataset::builder()
            .records([
                rec("a", 40.0, 0, "Home"),
                rec("a", 40.1, h, "Home"),
                rec("a", 40.2, 2 * h, "Work"),
                rec("a", 40.0, 100 * h, "Home"),
                rec("a", 40.3, 101 * h, "Bar"),
                rec("a", 40.4, 102 * h, "Bar"),
                rec("b", 40.0, 100 * h, "Home"),
                rec("c", 40.0, 0, "Home"),
            ])
            .build()
            .split(50 * h)
    }

    #[test]
    fn features_by_hand() {
        let f = featurize_users(&split()).unwrap();
        let a = &f["a"];
        assert!(!a.cold_start);
        assert_eq!(a.values[0], 3.0);
        assert_eq!(a.values[1], 3.0);
        assert_eq!(a.values[2], 2.0);
        assert_eq!(a.values[5], 10.0);
        // Test check-ins at 04:00, 05:00 and 06:00.
        assert_eq!(a.values[6], 2.0 / 3.0);
        assert_eq!(a.values[7], 2.0 / 3.0);
        assert_eq!(a.values[8], 2.0);
        assert!(a.values[4] >= a.values[3]);

        assert!(f["b"].cold_start);
        assert_eq!(f["b"].values, [0.0; N_FEATURES]);
        assert!(!f["c"].cold_start);
        assert_eq!(f["c"].values[0], 0.0);
    }

    #[test]
    fn identical_trajectories_identical_vectors() {
        let h = 3600;
        let recs = |u: &str| vec![rec(u, 40.0, 0, "Home"), rec(u, 40.1, 100 * h, "Gym"), rec(u, 40.2, 101 * h, "Bar")];
        let ds = TrajectoryDataset::from_records(recs("x").into_iter().chain(recs("y")));
        let f = featurize_users(&ds.split(50 * h)).unwrap();
        assert_eq!(f["x"], f["y"]);
    }

    #[test]
    fn check_rows_errors() {
        assert!(check_rows(&[vec![1.0]]).is_err());
        assert!(check_rows(&[vec![1.0], vec![1.0, 2.0]]).is_err());
        assert!(check_rows(&[vec![1.0], vec![f64::NAN]]).is_err());
        assert_eq!(check_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap(), 2);
    }
}
