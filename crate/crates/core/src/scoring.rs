//! Surprise between expected and observed visits, POI-type surprise, and
//! the combined per-user anomaly score.

use std::collections::{BTreeMap, BTreeSet};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::{build_matrix, ExpectedMatrix, VisitMatrix};
use crate::trajectory::{SplitDataset, TrajectoryDataset};

/// Which discrepancies count as surprise.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SurpriseVariant {
    /// `|φ − T|`: both unexpected visits and unexpected absences.
    #[default]
    Abs,
    /// `max(0, T − φ)`: only visits the model did not expect.
    NewPoi,
    /// `max(0, φ − T)`: only expected visits that did not happen.
    MissingPoi,
}

impl std::str::FromStr for SurpriseVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "abs" => Ok(Self::Abs),
            "new_poi" => Ok(Self::NewPoi),
            "missing_poi" => Ok(Self::MissingPoi),
            other => Err(Error::InvalidParameter(format!("unknown surprise variant `{other}`"))),
        }
    }
}

/// How per-POI surprises roll up to a user.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Aggregation {
    #[default]
    Sum,
    Max,
}

impl std::str::FromStr for Aggregation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "sum" => Ok(Self::Sum),
            "max" => Ok(Self::Max),
            other => Err(Error::InvalidParameter(format!("unknown aggregation `{other}`"))),
        }
    }
}

/// Non-negative per-cell surprise, rows labelled by user.
#[derive(Clone, Debug, PartialEq)]
pub struct SurpriseMatrix {
    users: Vec<String>,
    values: DMatrix<f64>,
    variant: SurpriseVariant,
}

impl SurpriseMatrix {
    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }

    pub fn users(&self) -> &[String] {
        &self.users
    }

    pub fn variant(&self) -> SurpriseVariant {
        self.variant
    }
}

/// Cell-wise surprise of `observed` against `expected`.
pub fn surprise(expected: &ExpectedMatrix, observed: &VisitMatrix, variant: SurpriseVariant) -> Result<SurpriseMatrix> {
    if expected.shape() != observed.shape() {
        return Err(Error::ShapeMismatch {
            expected: observed.shape(),
            actual: expected.shape(),
        });
    }
    let observed_dense = observed.to_dense();
    let cell: fn(f64, f64) -> f64 = match variant {
        SurpriseVariant::Abs => |phi, t| (phi - t).abs(),
        SurpriseVariant::NewPoi => |phi, t| (t - phi).max(0.0),
        SurpriseVariant::MissingPoi => |phi, t| (phi - t).max(0.0),
    };
    let values = expected.values().zip_map(&observed_dense, cell);
    Ok(SurpriseMatrix {
        users: observed.users().ids().to_vec(),
        values,
        variant,
    })
}

pub fn surprise_abs(expected: &ExpectedMatrix, observed: &VisitMatrix) -> Result<SurpriseMatrix> {
    surprise(expected, observed, SurpriseVariant::Abs)
}

pub fn surprise_new_poi(expected: &ExpectedMatrix, observed: &VisitMatrix) -> Result<SurpriseMatrix> {
    surprise(expected, observed, SurpriseVariant::NewPoi)
}

pub fn surprise_missing_poi(expected: &ExpectedMatrix, observed: &VisitMatrix) -> Result<SurpriseMatrix> {
    surprise(expected, observed, SurpriseVariant::MissingPoi)
}

/// Row sums.
pub fn aggregate_sum(s: &SurpriseMatrix) -> BTreeMap<String, f64> {
    s.users
        .iter()
        .enumerate()
        .map(|(r, u)| (u.clone(), s.values.row(r).iter().sum()))
        .collect()
}

/// Row maxima; 0 for rows without columns.
pub fn aggregate_max(s: &SurpriseMatrix) -> BTreeMap<String, f64> {
    s.users
        .iter()
        .enumerate()
        .map(|(r, u)| (u.clone(), s.values.row(r).iter().copied().fold(0.0, f64::max)))
        .collect()
}

pub fn aggregate(s: &SurpriseMatrix, aggregation: Aggregation) -> BTreeMap<String, f64> {
    match aggregation {
        Aggregation::Sum => aggregate_sum(s),
        Aggregation::Max => aggregate_max(s),
    }
}

/// A user's train-period venue-type distribution.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TypeProfile {
    pub user_id: String,
    pub probs: BTreeMap<String, f64>,
    /// `None` for a user without train visits.
    pub most_likely: Option<String>,
}

/// Venue-type probabilities of `user`'s train visits.
///
/// Ties for the most likely type go to the lexicographically smallest label.
pub fn type_profile(train: &TrajectoryDataset, user: &str) -> Result<TypeProfile> {
    let histogram = crate::matrix::poi_type_histogram(train, user)?;
    let total: usize = histogram.values().sum();
    // BTreeMap iterates ascending, and max_by keeps the last maximum, so
    // iterate in reverse to keep the smallest label among ties.
    let most_likely = histogram
        .iter()
        .rev()
        .max_by_key(|(_, &n)| n)
        .map(|(t, _)| t.clone());
    let probs = histogram
        .into_iter()
        .map(|(t, n)| (t, n as f64 / total as f64))
        .collect();
    Ok(TypeProfile {
        user_id: user.to_string(),
        probs,
        most_likely,
    })
}

/// Number of `user`'s test visits whose venue type differs from the
/// profile's most likely type. Zero when the profile has none.
pub fn poi_type_surprise(test: &TrajectoryDataset, profile: &TypeProfile, user: &str) -> Result<f64> {
    let trajectory = test
        .trajectory(user)
        .ok_or_else(|| Error::UnknownUser(user.to_string()))?;
    let Some(most_likely) = profile.most_likely.as_deref() else {
        return Ok(0.0);
    };
    Ok(trajectory
        .records()
        .iter()
        .filter(|r| r.venue_type != most_likely)
        .count() as f64)
}

/// Venue-type distribution of `user`'s row of a visit matrix. Each column
/// weighs by its entry, so a binary matrix counts distinct POIs and a count
/// matrix counts visits.
pub fn matrix_type_profile(train: &VisitMatrix, user: &str) -> Result<TypeProfile> {
    let row = train
        .users()
        .position(user)
        .ok_or_else(|| Error::UnknownUser(user.to_string()))?;
    let mut weights: BTreeMap<String, f64> = BTreeMap::new();
    for &(col, v) in train.row(row) {
        *weights.entry(train.column_types()[col].clone()).or_default() += v;
    }
    let total: f64 = weights.values().sum();
    let most_likely = weights
        .iter()
        .rev()
        .max_by(|a, b| a.1.total_cmp(b.1))
        .map(|(t, _)| t.clone());
    Ok(TypeProfile {
        user_id: user.to_string(),
        probs: weights.into_iter().map(|(t, w)| (t, w / total)).collect(),
        most_likely,
    })
}

/// Sum of `user`'s test-matrix entries in columns whose type differs from
/// the profile's most likely type.
pub fn matrix_type_surprise(test: &VisitMatrix, profile: &TypeProfile, user: &str) -> Result<f64> {
    let row = test
        .users()
        .position(user)
        .ok_or_else(|| Error::UnknownUser(user.to_string()))?;
    let Some(most_likely) = profile.most_likely.as_deref() else {
        return Ok(0.0);
    };
    Ok(test
        .row(row)
        .iter()
        .filter(|&&(col, _)| test.column_types()[col] != most_likely)
        .map(|&(_, v)| v)
        .sum())
}

pub fn anomaly_score(matrix_surprise: f64, type_surprise: f64) -> f64 {
    matrix_surprise + type_surprise
}

/// Surprise components of one user.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UserScore {
    pub user_id: String,
    pub matrix_surprise: f64,
    pub type_surprise: f64,
    pub total: f64,
    pub aggregation: Aggregation,
    pub cold_start: bool,
}

/// A user's position in a ranking; `rank` is 1-based.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RankedUser {
    pub user_id: String,
    pub score: f64,
    pub rank: usize,
}

/// Orders users by descending score, ties by ascending user id.
pub fn rank_users<'a, I>(scores: I) -> Vec<RankedUser>
where
    I: IntoIterator<Item = (&'a String, &'a f64)>,
{
    let mut entries: Vec<(&String, f64)> = scores.into_iter().map(|(u, s)| (u, *s)).collect();
    entries.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(b.0)));
    entries
        .into_iter()
        .enumerate()
        .map(|(i, (u, score))| RankedUser {
            user_id: u.clone(),
            score,
            rank: i + 1,
        })
        .collect()
}

/// Scores and ranking for every user.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnomalyReport {
    pub method: String,
    pub scores: Vec<UserScore>,
    pub ranking: Vec<RankedUser>,
}

impl AnomalyReport {
    /// Builds a report from bare per-user scores (baseline detectors).
    pub fn from_scores(method: &str, scores: &BTreeMap<String, f64>, cold_start: &BTreeSet<String>) -> Self {
        let user_scores = scores
            .iter()
            .map(|(u, &s)| UserScore {
                user_id: u.clone(),
                matrix_surprise: s,
                type_surprise: 0.0,
                total: s,
                aggregation: Aggregation::Sum,
                cold_start: cold_start.contains(u),
            })
            .collect();
        Self {
            method: method.to_string(),
            scores: user_scores,
            ranking: rank_users(scores),
        }
    }

    pub fn totals(&self) -> BTreeMap<String, f64> {
        self.scores.iter().map(|s| (s.user_id.clone(), s.total)).collect()
    }
}

/// Full scoring pass: matrix surprise of the test visits against
/// `expected`, plus POI-type surprise of the test matrix against the type
/// profile of the train matrix built in the same mode, for every user.
///
/// Cold-start users are scored against a zero expectation row and get no
/// type surprise.
pub fn score_users(
    split: &SplitDataset,
    expected: &ExpectedMatrix,
    observed: &VisitMatrix,
    variant: SurpriseVariant,
    aggregation: Aggregation,
    method: &str,
) -> Result<AnomalyReport> {
    let mut expected = expected.clone();
    for user in &split.cold_start {
        if let Some(r) = observed.users().position(user) {
            expected.values_mut().row_mut(r).fill(0.0);
        }
    }
    let cells = surprise(&expected, observed, variant)?;
    let matrix = aggregate(&cells, aggregation);

    let train = build_matrix(&split.train, observed.mode());
    let mut scores = Vec::with_capacity(matrix.len());
    for (user, &matrix_surprise) in &matrix {
        let type_surprise = if split.cold_start.contains(user) {
            0.0
        } else {
            matrix_type_surprise(observed, &matrix_type_profile(&train, user)?, user)?
        };
        scores.push(UserScore {
            user_id: user.clone(),
            matrix_surprise,
            type_surprise,
            total: anomaly_score(matrix_surprise, type_surprise),
            aggregation,
            cold_start: split.cold_start.contains(user),
        });
    }
    let totals: BTreeMap<String, f64> = scores.iter().map(|s| (s.user_id.clone(), s.total)).collect();
    Ok(AnomalyReport {
        method: method.to_string(),
        scores,
        ranking: rank_users(&totals),
    })
}
