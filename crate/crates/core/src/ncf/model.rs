use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{HyperParams, InputTuple, DAYS, HOURS};
use crate::error::{Error, Result};
use crate::rng::rng_from;

const EMBED_SCALE: f64 = 0.5;
const AUX_RANGE: f64 = 0.05;

/// Fully connected layer, `y = W x + b` with `W` stored row-major as
/// `outputs × inputs`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Dense {
    pub inputs: usize,
    pub outputs: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Dense {
    fn zeros(inputs: usize, outputs: usize) -> Self {
        Self {
            inputs,
            outputs,
            weights: vec![0.0; inputs * outputs],
            bias: vec![0.0; outputs],
        }
    }

    #[inline]
    fn forward(&self, x: &[f64], y: &mut [f64]) {
        for (o, out) in y.iter_mut().enumerate() {
            let row = &self.weights[o * self.inputs..(o + 1) * self.inputs];
            *out = self.bias[o] + row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>();
        }
    }
}

/// All trainable parameters. Embedding tables are row-major `rows × dim`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Params {
    pub user: Vec<f64>,
    pub poi: Vec<f64>,
    pub hour: Vec<f64>,
    pub day: Vec<f64>,
    pub distance: Vec<f64>,
    pub poi_type: Vec<f64>,
    /// Hidden layers followed by the scalar output layer.
    pub layers: Vec<Dense>,
    /// GMF weights for hour, weekday, distance and type features.
    pub aux: [f64; 4],
}

/// Gradients share the parameter layout.
pub type Gradients = Params;

impl Params {
    fn zeros(hp: &HyperParams, n_users: usize, n_pois: usize, n_types: usize) -> Self {
        let d = hp.embed_dim;
        let mut layers = Vec::with_capacity(hp.mlp_layers.len() + 1);
        let mut width = 6 * d;
        for &w in &hp.mlp_layers {
            layers.push(Dense::zeros(width, w));
            width = w;
        }
        layers.push(Dense::zeros(width, 1));
        Self {
            user: vec![0.0; (n_users + 1) * d],
            poi: vec![0.0; (n_pois + 1) * d],
            hour: vec![0.0; HOURS * d],
            day: vec![0.0; DAYS * d],
            distance: vec![0.0; hp.distance_buckets * d],
            poi_type: vec![0.0; (n_types + 1) * d],
            layers,
            aux: [0.0; 4],
        }
    }

    /// Named parameter groups in a fixed order.
    pub fn groups(&self) -> Vec<(String, &[f64])> {
        let mut out: Vec<(String, &[f64])> = vec![
            ("user".into(), &self.user),
            ("poi".into(), &self.poi),
            ("hour".into(), &self.hour),
            ("day".into(), &self.day),
            ("distance".into(), &self.distance),
            ("poi_type".into(), &self.poi_type),
        ];
        for (i, layer) in self.layers.iter().enumerate() {
            out.push((format!("layer{i}.weights"), &layer.weights));
            out.push((format!("layer{i}.bias"), &layer.bias));
        }
        out.push(("aux".into(), &self.aux));
        out
    }

    pub fn groups_mut(&mut self) -> Vec<(String, &mut [f64])> {
        let mut out: Vec<(String, &mut [f64])> = vec![
            ("user".into(), &mut self.user),
            ("poi".into(), &mut self.poi),
            ("hour".into(), &mut self.hour),
            ("day".into(), &mut self.day),
            ("distance".into(), &mut self.distance),
            ("poi_type".into(), &mut self.poi_type),
        ];
        for (i, layer) in self.layers.iter_mut().enumerate() {
            out.push((format!("layer{i}.weights"), &mut layer.weights));
            out.push((format!("layer{i}.bias"), &mut layer.bias));
        }
        out.push(("aux".into(), &mut self.aux));
        out
    }

    pub(crate) fn fill_zero(&mut self) {
        for (_, g) in self.groups_mut() {
            g.fill(0.0);
        }
    }

    pub fn len(&self) -> usize {
        self.groups().iter().map(|(_, g)| g.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn all_finite(&self) -> bool {
        self.groups().iter().all(|(_, g)| g.iter().all(|v| v.is_finite()))
    }
}

/// Trainable model state plus the settings that shaped it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelState {
    pub hp: HyperParams,
    pub n_users: usize,
    pub n_pois: usize,
    pub n_types: usize,
    pub params: Params,
}

/// Dense weights start Glorot-uniform, embedding entries uniform in
/// `±EMBED_SCALE/√dim`, the auxiliary GMF weights in `±AUX_RANGE`; biases
/// start at zero.
pub fn init_model(hp: &HyperParams, n_users: usize, n_pois: usize, n_types: usize) -> Result<ModelState> {
    hp.validate()?;
    if n_users == 0 || n_pois == 0 || n_types == 0 {
        return Err(Error::InvalidParameter("model needs at least one user, POI and type".into()));
    }
    let mut params = Params::zeros(hp, n_users, n_pois, n_types);
    let mut rng = rng_from(hp.seed);
    let embed = EMBED_SCALE / (hp.embed_dim as f64).sqrt();
    let fans: Vec<(usize, usize)> = params.layers.iter().map(|l| (l.inputs, l.outputs)).collect();
    for (name, group) in params.groups_mut() {
        let range = if name.ends_with(".bias") {
            continue;
        } else if let Some(i) = name.strip_prefix("layer").and_then(|n| n.strip_suffix(".weights")) {
            let (fan_in, fan_out) = fans[i.parse::<usize>().unwrap()];
            (6.0 / (fan_in + fan_out) as f64).sqrt()
        } else if name == "aux" {
            AUX_RANGE
        } else {
            embed
        };
        for v in group.iter_mut() {
            *v = rng.random_range(-range..=range);
        }
    }
    Ok(ModelState {
        hp: hp.clone(),
        n_users,
        n_pois,
        n_types,
        params,
    })
}

impl ModelState {
    /// Zero-filled state with the shapes implied by `hp`.
    pub fn zeros(hp: &HyperParams, n_users: usize, n_pois: usize, n_types: usize) -> Result<Self> {
        hp.validate()?;
        Ok(Self {
            hp: hp.clone(),
            n_users,
            n_pois,
            n_types,
            params: Params::zeros(hp, n_users, n_pois, n_types),
        })
    }

    pub fn embed_dim(&self) -> usize {
        self.hp.embed_dim
    }

    /// Rejects tuples with an index outside its table.
    pub fn check_input(&self, z: &InputTuple) -> Result<()> {
        let bounds = [
            ("user", z.user, self.n_users + 1),
            ("hour", z.hour, HOURS),
            ("day", z.day, DAYS),
            ("distance", z.distance, self.hp.distance_buckets),
            ("poi", z.poi, self.n_pois + 1),
            ("poi_type", z.poi_type, self.n_types + 1),
        ];
        for (name, index, len) in bounds {
            if index >= len {
                return Err(Error::InvalidParameter(format!(
                    "{name} index {index} outside table of {len} rows"
                )));
            }
        }
        Ok(())
    }

    /// Checks that every parameter array matches the declared dimensions.
    pub fn check_shapes(&self) -> Result<()> {
        let expected = Params::zeros(&self.hp, self.n_users, self.n_pois, self.n_types);
        let ours = self.params.groups();
        let theirs = expected.groups();
        if ours.len() != theirs.len() {
            return Err(Error::Checkpoint("layer count does not match hyperparameters".into()));
        }
        for ((name, a), (_, b)) in ours.iter().zip(&theirs) {
            if a.len() != b.len() {
                return Err(Error::Checkpoint(format!(
                    "parameter group `{name}` has {} values, expected {}",
                    a.len(),
                    b.len()
                )));
            }
        }
        for (layer, reference) in self.params.layers.iter().zip(&expected.layers) {
            if (layer.inputs, layer.outputs) != (reference.inputs, reference.outputs) {
                return Err(Error::Checkpoint("layer dimensions do not match hyperparameters".into()));
            }
        }
        Ok(())
    }

    #[inline]
    fn row<'a>(&self, table: &'a [f64], index: usize) -> &'a [f64] {
        let d = self.hp.embed_dim;
        &table[index * d..(index + 1) * d]
    }
}

/// Intermediate values of one forward pass, reused across calls.
#[derive(Clone, Debug)]
pub(crate) struct Workspace {
    z: Vec<f64>,
    /// Pre- and post-activation values of each layer.
    pre: Vec<Vec<f64>>,
    post: Vec<Vec<f64>>,
    /// `[0]` is ∂/∂z, `[l + 1]` is ∂/∂(output of layer l).
    grad_post: Vec<Vec<f64>>,
    feature_means: [f64; 4],
    pub mlp: f64,
    pub gmf: f64,
    pub score: f64,
}

impl Workspace {
    pub fn new(state: &ModelState) -> Self {
        let widths: Vec<usize> = state.params.layers.iter().map(|l| l.outputs).collect();
        let input = 6 * state.hp.embed_dim;
        let mut grad_post: Vec<Vec<f64>> = widths.iter().map(|&w| vec![0.0; w]).collect();
        grad_post.insert(0, vec![0.0; input]);
        Self {
            z: vec![0.0; input],
            pre: widths.iter().map(|&w| vec![0.0; w]).collect(),
            post: widths.iter().map(|&w| vec![0.0; w]).collect(),
            grad_post,
            feature_means: [0.0; 4],
            mlp: 0.0,
            gmf: 0.0,
            score: 0.0,
        }
    }
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn embeddings<'a>(state: &'a ModelState, z: &InputTuple) -> [&'a [f64]; 6] {
    let p = &state.params;
    [
        state.row(&p.user, z.user),
        state.row(&p.hour, z.hour),
        state.row(&p.day, z.day),
        state.row(&p.distance, z.distance),
        state.row(&p.poi, z.poi),
        state.row(&p.poi_type, z.poi_type),
    ]
}

/// Forward pass through both towers, caching activations for backprop.
pub(crate) fn forward(state: &ModelState, z: &InputTuple, ws: &mut Workspace) {
    let d = state.hp.embed_dim;
    let parts = embeddings(state, z);
    for (k, part) in parts.iter().enumerate() {
        ws.z[k * d..(k + 1) * d].copy_from_slice(part);
    }

    // MLP tower.
    let layers = &state.params.layers;
    let n_hidden = layers.len() - 1;
    for l in 0..n_hidden {
        let input = if l == 0 { &ws.z[..] } else { &ws.post[l - 1][..] };
        layers[l].forward(input, &mut ws.pre[l]);
        for (y, &x) in ws.post[l].iter_mut().zip(&ws.pre[l]) {
            *y = state.hp.activation.apply(x);
        }
    }
    let last_input = if n_hidden == 0 { &ws.z[..] } else { &ws.post[n_hidden - 1][..] };
    let mut out = [0.0];
    layers[n_hidden].forward(last_input, &mut out);
    ws.mlp = out[0];

    // GMF tower.
    let dot: f64 = parts[0].iter().zip(parts[4]).map(|(a, b)| a * b).sum();
    ws.feature_means = [mean(parts[1]), mean(parts[2]), mean(parts[3]), mean(parts[5])];
    let aux = &state.params.aux;
    ws.gmf = dot + (0..4).map(|k| aux[k] * ws.feature_means[k]).sum::<f64>();

    ws.score = fuse(ws.mlp, ws.gmf, state.hp.fusion_alpha);
}

/// Accumulates `d_score · ∂score/∂θ` into `grads`, using the activations
/// left in `ws` by [`forward`] on the same input.
pub(crate) fn backward(state: &ModelState, z: &InputTuple, ws: &mut Workspace, d_score: f64, grads: &mut Gradients) {
    let d = state.hp.embed_dim;
    let alpha = state.hp.fusion_alpha;
    let d_gmf = alpha * d_score;
    let d_mlp = (1.0 - alpha) * d_score;
    let p = &state.params;

    // GMF.
    if d_gmf != 0.0 {
        let user = state.row(&p.user, z.user);
        let poi = state.row(&p.poi, z.poi);
        let gu = &mut grads.user[z.user * d..(z.user + 1) * d];
        for (g, v) in gu.iter_mut().zip(poi) {
            *g += d_gmf * v;
        }
        let gp = &mut grads.poi[z.poi * d..(z.poi + 1) * d];
        for (g, v) in gp.iter_mut().zip(user) {
            *g += d_gmf * v;
        }
        for k in 0..4 {
            grads.aux[k] += d_gmf * ws.feature_means[k];
        }
        let share = |k: usize| d_gmf * p.aux[k] / d as f64;
        add_scalar(&mut grads.hour[z.hour * d..(z.hour + 1) * d], share(0));
        add_scalar(&mut grads.day[z.day * d..(z.day + 1) * d], share(1));
        add_scalar(&mut grads.distance[z.distance * d..(z.distance + 1) * d], share(2));
        add_scalar(&mut grads.poi_type[z.poi_type * d..(z.poi_type + 1) * d], share(3));
    }

    // MLP.
    if d_mlp != 0.0 {
        let layers = &p.layers;
        let n_hidden = layers.len() - 1;
        // Output layer: a single unit.
        let out = &layers[n_hidden];
        let input: &[f64] = if n_hidden == 0 { &ws.z } else { &ws.post[n_hidden - 1] };
        let g_out = &mut grads.layers[n_hidden];
        g_out.bias[0] += d_mlp;
        for (g, x) in g_out.weights.iter_mut().zip(input) {
            *g += d_mlp * x;
        }
        {
            let target = &mut ws.grad_post[n_hidden];
            for (t, w) in target.iter_mut().zip(&out.weights) {
                *t = d_mlp * w;
            }
        }
        for l in (0..n_hidden).rev() {
            let layer = &layers[l];
            let (lower, upper) = ws.grad_post.split_at_mut(l + 1);
            let g_y = &mut upper[0];
            // ∂/∂pre-activation, in place.
            for ((g, &x), &y) in g_y.iter_mut().zip(&ws.pre[l]).zip(&ws.post[l]) {
                *g *= state.hp.activation.derivative(x, y);
            }
            let input: &[f64] = if l == 0 { &ws.z } else { &ws.post[l - 1] };
            let g_layer = &mut grads.layers[l];
            let g_in = &mut lower[l];
            g_in.fill(0.0);
            for (o, &delta) in g_y.iter().enumerate() {
                if delta == 0.0 {
                    continue;
                }
                g_layer.bias[o] += delta;
                let row = o * layer.inputs..(o + 1) * layer.inputs;
                for ((gw, x), (w, gi)) in g_layer.weights[row.clone()]
                    .iter_mut()
                    .zip(input)
                    .zip(layer.weights[row].iter().zip(g_in.iter_mut()))
                {
                    *gw += delta * x;
                    *gi += delta * w;
                }
            }
        }
        let g_z = &ws.grad_post[0];
        let targets: [(&mut Vec<f64>, usize); 6] = [
            (&mut grads.user, z.user),
            (&mut grads.hour, z.hour),
            (&mut grads.day, z.day),
            (&mut grads.distance, z.distance),
            (&mut grads.poi, z.poi),
            (&mut grads.poi_type, z.poi_type),
        ];
        for (k, (table, index)) in targets.into_iter().enumerate() {
            for (g, v) in table[index * d..(index + 1) * d].iter_mut().zip(&g_z[k * d..(k + 1) * d]) {
                *g += v;
            }
        }
    }
}

fn add_scalar(slice: &mut [f64], v: f64) {
    for x in slice {
        *x += v;
    }
}

/// MLP tower score for one input.
pub fn forward_mlp(state: &ModelState, z: &InputTuple) -> Result<f64> {
    state.check_input(z)?;
    let mut ws = Workspace::new(state);
    forward(state, z, &mut ws);
    Ok(ws.mlp)
}

/// GMF tower score for one input.
pub fn forward_gmf(state: &ModelState, z: &InputTuple) -> Result<f64> {
    state.check_input(z)?;
    let mut ws = Workspace::new(state);
    forward(state, z, &mut ws);
    Ok(ws.gmf)
}

/// `alpha · gmf + (1 − alpha) · mlp`.
pub fn fuse(mlp_score: f64, gmf_score: f64, alpha: f64) -> f64 {
    alpha * gmf_score + (1.0 - alpha) * mlp_score
}
