use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::model::{backward, forward, Gradients, ModelState, Workspace};
use super::{
    encode_input, Catalogs, HyperParams, InputTuple, Lookup, LossReduction, NegativeContext, Optimizer, DAYS, HOURS,
};
use crate::error::{Error, Result};
use crate::matrix::{build_matrix, MatrixMode, VisitMatrix};
use crate::rng::{derive_seed, rng_from};
use crate::trajectory::{derive_features, TrajectoryDataset};

const STREAM_NEGATIVES: u64 = 0x6e65_6761;
const STREAM_SHUFFLE: u64 = 0x7368_7566;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrainingExample {
    pub input: InputTuple,
    /// 1 for an observed visit, 0 for a sampled negative.
    pub label: u8,
}

/// Samples `k_per_positive` unobserved cells for every observed visit.
///
/// A count-mode matrix contributes one positive per visit, a binary one
/// per visited cell. Negatives keep the positive's user and draw a POI
/// uniformly among that user's unvisited columns (any unvisited cell if the
/// user's row is full). Their hour and weekday are uniform; their distance
/// bucket is 0.
pub fn sample_negatives(
    train: &VisitMatrix,
    catalogs: &Catalogs,
    k_per_positive: usize,
    seed: u64,
) -> Result<Vec<TrainingExample>> {
    let (n_users, n_pois) = train.shape();
    if n_users == 0 || n_pois == 0 || train.nnz() == n_users * n_pois {
        return Err(Error::DenseMatrix);
    }
    let types: Vec<usize> = train
        .column_types()
        .iter()
        .map(|t| catalogs.type_index(t))
        .collect();

    let mut rng = rng_from(seed);
    let mut out = Vec::new();
    for user in 0..n_users {
        let units: usize = train
            .row(user)
            .iter()
            .map(|&(_, v)| match train.mode() {
                MatrixMode::Binary => 1,
                MatrixMode::Count => v as usize,
            })
            .sum();
        for _ in 0..units * k_per_positive {
            let (u, poi) = unvisited_cell(train, user, &mut rng);
            out.push(TrainingExample {
                input: InputTuple {
                    user: u,
                    hour: rng.random_range(0..HOURS),
                    day: rng.random_range(0..DAYS),
                    distance: 0,
                    poi,
                    poi_type: types[poi],
                },
                label: 0,
            });
        }
    }
    Ok(out)
}

/// Draws a POI column with a zero entry in `user`'s row, falling back to
/// another user when the row is full.
fn unvisited_cell(train: &VisitMatrix, user: usize, rng: &mut impl Rng) -> (usize, usize) {
    let (n_users, n_pois) = train.shape();
    let row_full = train.row(user).len() == n_pois;
    loop {
        let u = if row_full { rng.random_range(0..n_users) } else { user };
        let poi = rng.random_range(0..n_pois);
        if train.get(u, poi) == 0.0 {
            return (u, poi);
        }
    }
}

/// Observed train visits (with their real context) plus
/// `negatives_per_positive` sampled negatives per visit.
///
/// With [`NegativeContext::Paired`] each negative copies the user, hour,
/// weekday and distance bucket of its positive and swaps in an unvisited
/// POI, so only the POI separates the classes. [`NegativeContext::Uniform`]
/// delegates to [`sample_negatives`].
pub fn build_training_set(
    train: &TrajectoryDataset,
    catalogs: &Catalogs,
    hp: &HyperParams,
) -> Result<Vec<TrainingExample>> {
    let k = hp.negatives_per_positive;
    let mut positives = Vec::with_capacity(train.n_records());
    for trajectory in train.trajectories() {
        let features = derive_features(trajectory);
        for (record, f) in trajectory.records().iter().zip(&features) {
            positives.push(TrainingExample {
                input: encode_input(record, f, catalogs, hp.distance_buckets, Lookup::Strict)?,
                label: 1,
            });
        }
    }
    let counts = build_matrix(train, MatrixMode::Count);
    if counts.users() != &catalogs.users || counts.pois() != &catalogs.pois {
        return Err(Error::InvalidParameter(
            "catalogs are not aligned with the training dataset".into(),
        ));
    }
    let seed = derive_seed(hp.seed, STREAM_NEGATIVES, 0);
    let negatives = match hp.negative_context {
        NegativeContext::Uniform => sample_negatives(&counts, catalogs, k, seed)?,
        NegativeContext::Paired => {
            let (n_users, n_pois) = counts.shape();
            if n_users == 0 || n_pois == 0 || counts.nnz() == n_users * n_pois {
                return Err(Error::DenseMatrix);
            }
            let types: Vec<usize> = counts.column_types().iter().map(|t| catalogs.type_index(t)).collect();
            let mut rng = rng_from(seed);
            let mut out = Vec::with_capacity(positives.len() * k);
            for p in &positives {
                for _ in 0..k {
                    let (user, poi) = unvisited_cell(&counts, p.input.user, &mut rng);
                    out.push(TrainingExample {
                        input: InputTuple {
                            user,
                            poi,
                            poi_type: types[poi],
                            ..p.input
                        },
                        label: 0,
                    });
                }
            }
            out
        }
    };
    positives.extend(negatives);
    Ok(positives)
}

/// Per-epoch mean binary cross-entropy.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingReport {
    pub epoch_loss: Vec<f64>,
}

/// `log(1 + e^s) − y·s`, the cross-entropy of `sigmoid(s)` against `y`.
#[inline]
pub(crate) fn bce_with_logit(score: f64, label: f64) -> f64 {
    score.max(0.0) - score * label + (-score.abs()).exp().ln_1p()
}

#[inline]
pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Mean loss and its gradient over `batch`, accumulated into `grads`.
pub(crate) fn batch_gradient(
    state: &ModelState,
    batch: &[TrainingExample],
    ws: &mut Workspace,
    grads: &mut Gradients,
) -> f64 {
    grads.fill_zero();
    let scale = 1.0 / batch.len() as f64;
    let mut loss = 0.0;
    for ex in batch {
        forward(state, &ex.input, ws);
        let y = f64::from(ex.label);
        loss += bce_with_logit(ws.score, y);
        backward(state, &ex.input, ws, (sigmoid(ws.score) - y) * scale, grads);
    }
    loss * scale
}

/// Mean cross-entropy of `batch` and its analytic gradient.
pub fn loss_and_gradient(state: &ModelState, batch: &[TrainingExample]) -> Result<(f64, Gradients)> {
    if batch.is_empty() {
        return Err(Error::InvalidParameter("empty batch".into()));
    }
    for ex in batch {
        state.check_input(&ex.input)?;
    }
    let mut ws = Workspace::new(state);
    let mut grads = state.params.clone();
    let loss = batch_gradient(state, batch, &mut ws, &mut grads);
    Ok((loss, grads))
}

/// Mean cross-entropy of `batch`, forward passes only.
pub fn loss(state: &ModelState, batch: &[TrainingExample]) -> Result<f64> {
    if batch.is_empty() {
        return Err(Error::InvalidParameter("empty batch".into()));
    }
    let mut total = 0.0;
    for ex in batch {
        let score = super::fuse(
            super::forward_mlp(state, &ex.input)?,
            super::forward_gmf(state, &ex.input)?,
            state.hp.fusion_alpha,
        );
        total += bce_with_logit(score, f64::from(ex.label));
    }
    Ok(total / batch.len() as f64)
}

enum OptimizerState {
    Sgd { momentum: f64, velocity: Option<Gradients> },
    Adam { beta1: f64, beta2: f64, epsilon: f64, m: Gradients, v: Gradients, step: i32 },
}

impl OptimizerState {
    fn new(optimizer: Optimizer, shape: &Gradients) -> Self {
        let zeros = || {
            let mut g = shape.clone();
            g.fill_zero();
            g
        };
        match optimizer {
            Optimizer::Sgd { momentum } => OptimizerState::Sgd {
                momentum,
                velocity: (momentum > 0.0).then(zeros),
            },
            Optimizer::Adam { beta1, beta2, epsilon } => OptimizerState::Adam {
                beta1,
                beta2,
                epsilon,
                m: zeros(),
                v: zeros(),
                step: 0,
            },
        }
    }

    fn apply(&mut self, params: &mut Gradients, grads: &Gradients, lr: f64) {
        match self {
            OptimizerState::Sgd { velocity: None, .. } => {
                for ((_, p), (_, g)) in params.groups_mut().into_iter().zip(grads.groups()) {
                    for (p, g) in p.iter_mut().zip(g) {
                        *p -= lr * g;
                    }
                }
            }
            OptimizerState::Sgd { momentum, velocity: Some(vel) } => {
                let mu = *momentum;
                for (((_, p), (_, g)), (_, v)) in params
                    .groups_mut()
                    .into_iter()
                    .zip(grads.groups())
                    .zip(vel.groups_mut())
                {
                    for ((p, g), v) in p.iter_mut().zip(g).zip(v.iter_mut()) {
                        *v = mu * *v + g;
                        *p -= lr * *v;
                    }
                }
            }
            OptimizerState::Adam { beta1, beta2, epsilon, m, v, step } => {
                *step += 1;
                let (b1, b2, eps) = (*beta1, *beta2, *epsilon);
                let c1 = 1.0 - b1.powi(*step);
                let c2 = 1.0 - b2.powi(*step);
                for ((((_, p), (_, g)), (_, m)), (_, v)) in params
                    .groups_mut()
                    .into_iter()
                    .zip(grads.groups())
                    .zip(m.groups_mut())
                    .zip(v.groups_mut())
                {
                    for (((p, g), m), v) in p.iter_mut().zip(g).zip(m.iter_mut()).zip(v.iter_mut()) {
                        *m = b1 * *m + (1.0 - b1) * g;
                        *v = b2 * *v + (1.0 - b2) * g * g;
                        *p -= lr * (*m / c1) / ((*v / c2).sqrt() + eps);
                    }
                }
            }
        }
    }
}

/// Mini-batch training of the fused score under binary cross-entropy.
///
/// Example order is reshuffled every epoch from a stream derived from the
/// model seed, so identical inputs give bit-identical results.
pub fn train(mut state: ModelState, data: &[TrainingExample]) -> Result<(ModelState, TrainingReport)> {
    state.hp.validate()?;
    if data.is_empty() {
        return Err(Error::InvalidParameter("training set is empty".into()));
    }
    for ex in data {
        state.check_input(&ex.input)?;
    }

    let hp = state.hp.clone();
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut rng = rng_from(derive_seed(hp.seed, STREAM_SHUFFLE, 0));
    let mut ws = Workspace::new(&state);
    let mut grads = state.params.clone();
    let mut optimizer = OptimizerState::new(hp.optimizer, &grads);
    let mut batch = Vec::with_capacity(hp.batch_size);
    let mut report = TrainingReport::default();

    for epoch in 0..hp.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for (b, chunk) in order.chunks(hp.batch_size).enumerate() {
            batch.clear();
            batch.extend(chunk.iter().map(|&i| data[i]));
            let loss = batch_gradient(&state, &batch, &mut ws, &mut grads);
            if !loss.is_finite() {
                return Err(Error::NonFiniteLoss { epoch, batch: b });
            }
            total += loss * batch.len() as f64;
            if hp.loss_reduction == LossReduction::Sum {
                let n = batch.len() as f64;
                for (_, g) in grads.groups_mut() {
                    g.iter_mut().for_each(|g| *g *= n);
                }
            }
            if hp.weight_decay > 0.0 {
                for ((_, g), (_, p)) in grads.groups_mut().into_iter().zip(state.params.groups()) {
                    for (g, p) in g.iter_mut().zip(p.iter()) {
                        *g += hp.weight_decay * p;
                    }
                }
            }
            optimizer.apply(&mut state.params, &grads, hp.learning_rate);
        }
        report.epoch_loss.push(total / data.len() as f64);
    }
    if !state.params.all_finite() {
        return Err(Error::NonFiniteLoss {
            epoch: hp.epochs,
            batch: 0,
        });
    }
    Ok((state, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::matrix::Index;
    use crate::ncf::{init_model, HyperParams};
    use nalgebra::DMatrix;

    fn catalogs(n_users: usize, n_pois: usize) -> Catalogs {
        Catalogs {
            users: Index::new((0..n_users).map(|i| format!("u{i}"))),
            pois: Index::new((0..n_pois).map(|i| format!("p{i}"))),
            types: Index::new(["t"]),
        }
    }

    fn matrix(values: DMatrix<f64>, mode: MatrixMode) -> VisitMatrix {
        let (n, m) = values.shape();
        let c = catalogs(n, m);
        VisitMatrix::from_dense(c.users, c.pois, vec!["t".into(); m], &values, mode).unwrap()
    }

    #[test]
    fn bce_matches_direct_formula() {
        for s in [-3.0, -0.2, 0.0, 0.7, 4.0] {
            let p = 1.0 / (1.0 + f64::exp(-s));
            assert!((bce_with_logit(s, 1.0) + p.ln()).abs() < 1e-12);
            assert!((bce_with_logit(s, 0.0) + (1.0 - p).ln()).abs() < 1e-12);
        }
    }

    #[test]
    fn negatives_avoid_positives() {
        // 10 positives spread over 5 users × 8 POIs.
        let mut values = DMatrix::zeros(5, 8);
        for k in 0..10 {
            values[(k % 5, (k * 3) % 8)] = 1.0;
        }
        let m = matrix(values, MatrixMode::Binary);
        assert_eq!(m.nnz(), 10);
        let neg = sample_negatives(&m, &catalogs(5, 8), 4, 7).unwrap();
        assert_eq!(neg.len(), 40);
        assert!(neg.iter().all(|e| e.label == 0 && m.get(e.input.user, e.input.poi) == 0.0));
        assert!(neg.iter().all(|e| e.input.distance == 0 && e.input.hour < 24 && e.input.day < 7));
        assert_eq!(neg, sample_negatives(&m, &catalogs(5, 8), 4, 7).unwrap());
    }

    #[test]
    fn count_mode_weights_positives() {
        let values = DMatrix::from_row_slice(1, 3, &[3.0, 0.0, 0.0]);
        let m = matrix(values, MatrixMode::Count);
        assert_eq!(sample_negatives(&m, &catalogs(1, 3), 2, 0).unwrap().len(), 6);
    }

    #[test]
    fn full_row_falls_back_to_other_users() {
        let values = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 0.0, 1.0]);
        let m = matrix(values, MatrixMode::Binary);
        let neg = sample_negatives(&m, &catalogs(2, 2), 3, 1).unwrap();
        assert!(neg.iter().all(|e| (e.input.user, e.input.poi) == (1, 0)));
    }

    #[test]
    fn dense_matrix_is_an_error() {
        let m = matrix(DMatrix::from_element(2, 2, 1.0), MatrixMode::Binary);
        assert!(matches!(sample_negatives(&m, &catalogs(2, 2), 1, 0), Err(Error::DenseMatrix)));
    }

    #[test]
    fn zero_learning_rate_leaves_parameters() {
        let hp = HyperParams {
            embed_dim: 4,
            mlp_layers: vec![8, 4],
            learning_rate: 0.0,
            epochs: 3,
            batch_size: 4,
            ..HyperParams::default()
        };
        let state = init_model(&hp, 3, 4, 1).unwrap();
        let data: Vec<_> = (0..12)
            .map(|i| TrainingExample {
                input: InputTuple {
                    user: i % 3,
                    hour: i,
                    day: i % 7,
                    distance: 0,
                    poi: i % 4,
                    poi_type: 0,
                },
                label: (i % 2) as u8,
            })
            .collect();
        let (trained, report) = train(state.clone(), &data).unwrap();
        assert_eq!(trained.params, state.params);
        assert_eq!(report.epoch_loss.len(), 3);
    }

    #[test]
    fn empty_training_set_rejected() {
        let state = init_model(&HyperParams::default(), 1, 1, 1).unwrap();
        assert!(train(state, &[]).is_err());
    }
}
