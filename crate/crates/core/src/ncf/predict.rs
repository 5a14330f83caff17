use std::collections::BTreeMap;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::model::{forward, ModelState, Workspace};
use super::train::sigmoid;
use super::{distance_bucket, Catalogs, ExpectedScale, InputTuple};
use crate::error::Result;
use crate::matrix::ExpectedMatrix;
use crate::trajectory::{derive_features, TrajectoryDataset};

/// Feature values used when scoring a hypothetical visit.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureContext {
    pub hour: usize,
    pub day: usize,
    pub distance: usize,
}

impl Default for FeatureContext {
    /// Context for users without train visits.
    fn default() -> Self {
        Self {
            hour: 12,
            day: 0,
            distance: 0,
        }
    }
}

fn mode(values: impl Iterator<Item = usize>, len: usize) -> usize {
    let mut counts = vec![0usize; len];
    for v in values {
        counts[v] += 1;
    }
    // First index attaining the maximum: ties go to the smaller value.
    counts
        .iter()
        .enumerate()
        .fold((0, 0), |best, (i, &c)| if c > best.1 { (i, c) } else { best })
        .0
}

fn median(mut values: Vec<f64>) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

impl FeatureContext {
    /// Modal check-in hour and weekday plus the bucket of the median travel
    /// distance over each user's train visits.
    pub fn per_user(train: &TrajectoryDataset, distance_buckets: usize) -> BTreeMap<String, FeatureContext> {
        train
            .trajectories()
            .map(|t| {
                let context = if t.is_empty() {
                    FeatureContext::default()
                } else {
                    let features = derive_features(t);
                    FeatureContext {
                        hour: mode(features.iter().map(|f| usize::from(f.hour)), super::HOURS),
                        day: mode(features.iter().map(|f| usize::from(f.day_of_week)), super::DAYS),
                        distance: distance_bucket(
                            median(features.iter().map(|f| f.travel_km).collect()),
                            distance_buckets,
                        ),
                    }
                };
                (t.user_id().to_string(), context)
            })
            .collect()
    }
}

/// Fused score for every (catalog user, catalog POI) cell, on the scale
/// chosen by `expected_scale`.
///
/// Users missing from `contexts` are scored with the default context.
pub fn predict_expected_matrix(
    state: &ModelState,
    catalogs: &Catalogs,
    column_types: &[String],
    contexts: &BTreeMap<String, FeatureContext>,
) -> Result<ExpectedMatrix> {
    let (n_users, n_pois) = (catalogs.users.len(), catalogs.pois.len());
    let mut values = DMatrix::zeros(n_users, n_pois);
    let mut ws = Workspace::new(state);
    let types: Vec<usize> = column_types.iter().map(|t| catalogs.type_index(t)).collect();

    for (u, user) in catalogs.users.ids().iter().enumerate() {
        let context = contexts.get(user).copied().unwrap_or_default();
        for (p, &poi_type) in types.iter().enumerate() {
            let z = InputTuple {
                user: u,
                hour: context.hour,
                day: context.day,
                distance: context.distance,
                poi: p,
                poi_type,
            };
            state.check_input(&z)?;
            forward(state, &z, &mut ws);
            values[(u, p)] = match state.hp.expected_scale {
                ExpectedScale::Probability => sigmoid(ws.score),
                ExpectedScale::Logit => ws.score,
            };
        }
    }
    Ok(ExpectedMatrix::new(values))
}
