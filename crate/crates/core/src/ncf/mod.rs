//! Neural collaborative filtering over user-POI visits.
//!
//! Each visit is encoded as a tuple of embedding indices (user, check-in
//! hour, weekday, travel-distance bucket, POI, POI type). Two towers score
//! the tuple:
//!
//! * an MLP over the concatenated embeddings, with activated hidden layers
//!   and a linear scalar output;
//! * generalized matrix factorization: the user·POI dot product plus one
//!   learned weight per auxiliary feature (hour, weekday, distance, type),
//!   each feature reduced to the mean of its embedding.
//!
//! The fused score `α·gmf + (1−α)·mlp` is trained as a logit with binary
//! cross-entropy against observed visits and sampled negatives. Raw fused
//! scores, not probabilities, form the expected visit matrix.

mod checkpoint;
mod model;
mod predict;
mod train;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::{Index, VisitMatrix};
use crate::trajectory::{StaypointRecord, TrajectoryDataset, VisitFeatures};

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, CHECKPOINT_FORMAT};
pub use model::{forward_gmf, forward_mlp, fuse, init_model, Dense, Gradients, ModelState, Params};
pub use predict::{predict_expected_matrix, FeatureContext};
pub use train::{build_training_set, loss, loss_and_gradient, sample_negatives, train, TrainingExample, TrainingReport};

pub const HOURS: usize = 24;
pub const DAYS: usize = 7;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    #[default]
    Relu,
    Tanh,
}

impl Activation {
    #[inline]
    pub(crate) fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Relu => x.max(0.0),
            Activation::Tanh => x.tanh(),
        }
    }

    /// Derivative expressed through the pre-activation `x` and output `y`.
    #[inline]
    pub(crate) fn derivative(self, x: f64, y: f64) -> f64 {
        match self {
            Activation::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => 1.0 - y * y,
        }
    }
}

impl std::str::FromStr for Activation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "relu" => Ok(Self::Relu),
            "tanh" => Ok(Self::Tanh),
            other => Err(Error::InvalidParameter(format!("unknown activation `{other}`"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "kind")]
pub enum Optimizer {
    /// Mini-batch SGD; `momentum` 0 is the plain update.
    Sgd { momentum: f64 },
    Adam { beta1: f64, beta2: f64, epsilon: f64 },
}

impl Default for Optimizer {
    fn default() -> Self {
        Optimizer::Sgd { momentum: 0.0 }
    }
}

impl Optimizer {
    pub fn adam() -> Self {
        Optimizer::Adam {
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// Context features given to sampled negatives.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NegativeContext {
    /// Copy hour, weekday and distance bucket from the paired positive.
    #[default]
    Paired,
    /// Uniform hour and weekday, distance bucket 0.
    Uniform,
}

/// How a batch's per-example losses combine into the objective the
/// optimizer steps on.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossReduction {
    /// Sum over the batch. Each example moves its own embedding rows by
    /// the same amount whatever the batch size.
    #[default]
    Sum,
    Mean,
}

/// Scale of the predicted expected-visit matrix.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ExpectedScale {
    /// `sigmoid` of the fused score: a visit probability in (0, 1),
    /// comparable with binary observations.
    #[default]
    Probability,
    /// The fused score itself.
    Logit,
}

/// Model and training settings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HyperParams {
    pub embed_dim: usize,
    /// Widths of the activated hidden layers; a linear scalar output follows.
    pub mlp_layers: Vec<usize>,
    pub activation: Activation,
    /// Weight of the GMF tower in the fused score.
    pub fusion_alpha: f64,
    pub negatives_per_positive: usize,
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub distance_buckets: usize,
    pub optimizer: Optimizer,
    pub negative_context: NegativeContext,
    /// L2 penalty added to every gradient before the optimizer step.
    pub weight_decay: f64,
    pub loss_reduction: LossReduction,
    pub expected_scale: ExpectedScale,
}

impl Default for HyperParams {
    fn default() -> Self {
        Self {
            embed_dim: 16,
            mlp_layers: vec![64, 32],
            activation: Activation::Relu,
            fusion_alpha: 0.5,
            negatives_per_positive: 4,
            learning_rate: 0.01,
            epochs: 20,
            batch_size: 256,
            seed: 0,
            distance_buckets: 10,
            optimizer: Optimizer::default(),
            negative_context: NegativeContext::default(),
            weight_decay: 0.0,
            loss_reduction: LossReduction::default(),
            expected_scale: ExpectedScale::default(),
        }
    }
}

impl HyperParams {
    pub fn validate(&self) -> Result<()> {
        let fail = |msg: &str| Err(Error::InvalidParameter(msg.to_string()));
        if self.embed_dim == 0 {
            return fail("embed_dim must be positive");
        }
        if self.mlp_layers.contains(&0) {
            return fail("MLP layer widths must be positive");
        }
        if !(0.0..=1.0).contains(&self.fusion_alpha) {
            return fail("fusion_alpha must lie in [0, 1]");
        }
        if self.negatives_per_positive == 0 {
            return fail("negatives_per_positive must be positive");
        }
        if !(self.learning_rate >= 0.0) || !self.learning_rate.is_finite() {
            return fail("learning_rate must be finite and non-negative");
        }
        if !(self.weight_decay >= 0.0) || !self.weight_decay.is_finite() {
            return fail("weight_decay must be finite and non-negative");
        }
        if self.epochs == 0 || self.batch_size == 0 || self.distance_buckets == 0 {
            return fail("epochs, batch_size and distance_buckets must be positive");
        }
        match self.optimizer {
            Optimizer::Sgd { momentum } if !(0.0..1.0).contains(&momentum) => fail("momentum must lie in [0, 1)"),
            Optimizer::Adam { beta1, beta2, epsilon }
                if !(0.0..1.0).contains(&beta1) || !(0.0..1.0).contains(&beta2) || !(epsilon > 0.0) =>
            {
                fail("invalid Adam parameters")
            }
            _ => Ok(()),
        }
    }
}

/// Embedding indices of one (user, POI, context) visit.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct InputTuple {
    pub user: usize,
    pub hour: usize,
    pub day: usize,
    pub distance: usize,
    pub poi: usize,
    pub poi_type: usize,
}

/// Identifier catalogs mapping users, POIs and venue types to embedding rows.
///
/// Every table reserves one extra row, at index `len()`, for identifiers
/// unseen at training time.
#[derive(Clone, Debug, PartialEq)]
pub struct Catalogs {
    pub users: Index,
    pub pois: Index,
    pub types: Index,
}

impl Catalogs {
    /// Catalogs aligned with the rows and columns of `matrix`.
    pub fn from_matrix(matrix: &VisitMatrix, dataset: &TrajectoryDataset) -> Self {
        Self {
            users: matrix.users().clone(),
            pois: matrix.pois().clone(),
            types: Index::new(dataset.type_catalog().iter().cloned()),
        }
    }

    pub fn unseen_user(&self) -> usize {
        self.users.len()
    }

    pub fn unseen_poi(&self) -> usize {
        self.pois.len()
    }

    pub fn unknown_type(&self) -> usize {
        self.types.len()
    }

    /// Type index of a POI column, by its venue label.
    pub fn type_index(&self, venue: &str) -> usize {
        self.types.position(venue).unwrap_or(self.unknown_type())
    }
}

/// `clamp(floor(log2(1 + km)), 0, buckets − 1)`.
pub fn distance_bucket(travel_km: f64, buckets: usize) -> usize {
    let raw = (1.0 + travel_km.max(0.0)).log2().floor();
    if raw.is_finite() {
        (raw as usize).min(buckets - 1)
    } else {
        buckets - 1
    }
}

/// Whether identifiers missing from the catalogs are errors or map to the
/// reserved unseen rows.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Lookup {
    Strict,
    Lenient,
}

/// Encodes one record with its derived features.
pub fn encode_input(
    record: &StaypointRecord,
    features: &VisitFeatures,
    catalogs: &Catalogs,
    distance_buckets: usize,
    lookup: Lookup,
) -> Result<InputTuple> {
    let user = match (catalogs.users.position(&record.user_id), lookup) {
        (Some(i), _) => i,
        (None, Lookup::Lenient) => catalogs.unseen_user(),
        (None, Lookup::Strict) => return Err(Error::UnknownUser(record.user_id.clone())),
    };
    let poi = match (catalogs.pois.position(&record.poi_id), lookup) {
        (Some(i), _) => i,
        (None, Lookup::Lenient) => catalogs.unseen_poi(),
        (None, Lookup::Strict) => return Err(Error::UnknownPoi(record.poi_id.clone())),
    };
    Ok(InputTuple {
        user,
        hour: usize::from(features.hour),
        day: usize::from(features.day_of_week),
        distance: distance_bucket(features.travel_km, distance_buckets),
        poi,
        poi_type: catalogs.type_index(&record.venue_type),
    })
}
