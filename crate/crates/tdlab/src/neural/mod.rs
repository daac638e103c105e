//! Minimal fully-connected network stack with exact backpropagation.
//!
//! Supports exactly two head families: dueling multi-horizon Q heads and a
//! shared policy + value head. Hidden layers use the rectifier nonlinearity.
//! Everything runs in double precision; parameters live in flat vectors so
//! snapshot exchange between workers is a single memcpy.

mod snapshot;

pub use snapshot::{load_params, save_params, SnapshotError};

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum NeuralError {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("invalid topology: {0}")]
    InvalidTopology(String),
    #[error("non-finite value produced in layer {layer}")]
    Numeric { layer: usize },
    #[error("invalid freeze mask: {0}")]
    BadFreezeMask(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HeadSpec {
    /// One expectation output and one advantage row per prediction horizon.
    DuelingQ {
        horizons: Vec<usize>,
        n_actions: usize,
    },
    /// Softmax policy logits plus a scalar value, sharing the last hidden layer.
    PolicyValue { n_actions: usize },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetTopology {
    pub input_dim: usize,
    pub hidden: Vec<usize>,
    pub head: HeadSpec,
}

#[derive(Debug, Clone, Copy)]
struct LayerShape {
    inp: usize,
    out: usize,
    w_off: usize,
    b_off: usize,
}

impl NetTopology {
    pub fn new(input_dim: usize, hidden: Vec<usize>, head: HeadSpec) -> Result<Self, NeuralError> {
        let t = NetTopology {
            input_dim,
            hidden,
            head,
        };
        t.validate()?;
        Ok(t)
    }

    pub fn validate(&self) -> Result<(), NeuralError> {
        if self.input_dim == 0 {
            return Err(NeuralError::InvalidTopology("input_dim must be >= 1".into()));
        }
        if self.hidden.is_empty() || self.hidden.contains(&0) {
            return Err(NeuralError::InvalidTopology(
                "hidden widths must be non-empty and >= 1".into(),
            ));
        }
        match &self.head {
            HeadSpec::DuelingQ { horizons, n_actions } => {
                if horizons.is_empty() || *n_actions == 0 {
                    return Err(NeuralError::InvalidTopology(
                        "dueling head needs horizons and actions".into(),
                    ));
                }
                if horizons.windows(2).any(|w| w[0] >= w[1]) {
                    return Err(NeuralError::InvalidTopology(
                        "horizons must be sorted ascending and distinct".into(),
                    ));
                }
            }
            HeadSpec::PolicyValue { n_actions } => {
                if *n_actions == 0 {
                    return Err(NeuralError::InvalidTopology("need at least one action".into()));
                }
            }
        }
        Ok(())
    }

    pub fn n_actions(&self) -> usize {
        match &self.head {
            HeadSpec::DuelingQ { n_actions, .. } => *n_actions,
            HeadSpec::PolicyValue { n_actions } => *n_actions,
        }
    }

    pub fn horizons(&self) -> &[usize] {
        match &self.head {
            HeadSpec::DuelingQ { horizons, .. } => horizons,
            HeadSpec::PolicyValue { .. } => &[],
        }
    }

    /// Hidden layers plus the two head layers.
    pub fn n_layers(&self) -> usize {
        self.hidden.len() + 2
    }

    fn head_dims(&self) -> (usize, usize) {
        match &self.head {
            HeadSpec::DuelingQ { horizons, n_actions } => {
                (horizons.len(), horizons.len() * n_actions)
            }
            HeadSpec::PolicyValue { n_actions } => (*n_actions, 1),
        }
    }

    fn layers(&self) -> Vec<LayerShape> {
        let mut shapes = Vec::with_capacity(self.n_layers());
        let mut off = 0;
        let mut inp = self.input_dim;
        let push = |inp: usize, out: usize, off: &mut usize| {
            let shape = LayerShape {
                inp,
                out,
                w_off: *off,
                b_off: *off + inp * out,
            };
            *off += inp * out + out;
            shape
        };
        for &width in &self.hidden {
            shapes.push(push(inp, width, &mut off));
            inp = width;
        }
        let (head_a, head_b) = self.head_dims();
        shapes.push(push(inp, head_a, &mut off));
        shapes.push(push(inp, head_b, &mut off));
        shapes
    }

    /// Contiguous parameter range (weights then biases) of each layer, in
    /// the same order `FreezeMask` indexes them.
    pub fn layer_spans(&self) -> Vec<std::ops::Range<usize>> {
        self.layers()
            .iter()
            .map(|l| l.w_off..l.b_off + l.out)
            .collect()
    }

    pub fn param_count(&self) -> usize {
        self.layers()
            .iter()
            .map(|l| l.inp * l.out + l.out)
            .sum()
    }
}

/// Flat parameter set of one network plus its layer topology.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamVector {
    pub topology: NetTopology,
    pub data: Vec<f64>,
    pub version: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradVector {
    pub data: Vec<f64>,
}

impl GradVector {
    pub fn zeros(n: usize) -> Self {
        GradVector { data: vec![0.0; n] }
    }

    pub fn global_norm(&self) -> f64 {
        self.data.iter().map(|g| g * g).sum::<f64>().sqrt()
    }

    /// Rescale so the global norm does not exceed `max_norm`.
    pub fn clip_global_norm(&mut self, max_norm: f64) {
        let norm = self.global_norm();
        if norm > max_norm {
            let scale = max_norm / norm;
            for g in &mut self.data {
                *g *= scale;
            }
        }
    }
}

/// Per-layer freeze flags; frozen layers receive exactly zero gradient.
#[derive(Debug, Clone, PartialEq)]
pub struct FreezeMask {
    frozen: Vec<bool>,
}

impl FreezeMask {
    pub fn new(frozen: Vec<bool>, topology: &NetTopology) -> Result<Self, NeuralError> {
        if frozen.len() != topology.n_layers() {
            return Err(NeuralError::BadFreezeMask(format!(
                "mask has {} entries, network has {} layers",
                frozen.len(),
                topology.n_layers()
            )));
        }
        if frozen.iter().all(|&f| f) {
            return Err(NeuralError::BadFreezeMask(
                "at least one layer must stay trainable".into(),
            ));
        }
        Ok(FreezeMask { frozen })
    }

    pub fn frozen_layers(&self) -> &[bool] {
        &self.frozen
    }
}

/// Fan-balanced uniform weights, zero biases, deterministic per seed.
pub fn init_params(topology: &NetTopology, seed: u64) -> Result<ParamVector, NeuralError> {
    topology.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut data = vec![0.0; topology.param_count()];
    for layer in topology.layers() {
        let bound = (6.0 / (layer.inp + layer.out) as f64).sqrt();
        for w in &mut data[layer.w_off..layer.w_off + layer.inp * layer.out] {
            *w = rng.random_range(-bound..bound);
        }
        // biases stay zero
    }
    Ok(ParamVector {
        topology: topology.clone(),
        data,
        version: 0,
    })
}

/// Huber loss: quadratic within `delta` of zero, linear outside.
pub fn huber(x: f64, delta: f64) -> f64 {
    debug_assert!(delta > 0.0);
    let a = x.abs();
    if a <= delta {
        0.5 * x * x
    } else {
        delta * (a - 0.5 * delta)
    }
}

fn huber_grad(x: f64, delta: f64) -> f64 {
    if x.abs() <= delta {
        x
    } else {
        delta * x.signum()
    }
}

pub const HUBER_DELTA: f64 = 1.0;

// 8-accumulator dot product; the hot loop of every forward and backward pass.
#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [0.0f64; 8];
    let chunks = a.len() / 8;
    for i in 0..chunks {
        let ai = &a[i * 8..i * 8 + 8];
        let bi = &b[i * 8..i * 8 + 8];
        for j in 0..8 {
            acc[j] += ai[j] * bi[j];
        }
    }
    let mut sum = acc.iter().sum::<f64>();
    for i in chunks * 8..a.len() {
        sum += a[i] * b[i];
    }
    sum
}

#[inline]
fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

struct ForwardCache {
    /// acts[0] is the input; acts[i + 1] the rectified output of hidden layer i.
    acts: Vec<Vec<f64>>,
    /// Raw outputs of the two head layers.
    head_a: Vec<f64>,
    head_b: Vec<f64>,
}

fn forward_cache(params: &ParamVector, obs: &[f64]) -> Result<ForwardCache, NeuralError> {
    let topo = &params.topology;
    if obs.len() != topo.input_dim {
        return Err(NeuralError::Shape(format!(
            "observation has dim {}, network expects {}",
            obs.len(),
            topo.input_dim
        )));
    }
    let layers = topo.layers();
    let n_hidden = topo.hidden.len();
    let mut acts: Vec<Vec<f64>> = Vec::with_capacity(n_hidden + 1);
    acts.push(obs.to_vec());
    for (i, layer) in layers[..n_hidden].iter().enumerate() {
        let inp = &acts[i];
        let w = &params.data[layer.w_off..layer.b_off];
        let b = &params.data[layer.b_off..layer.b_off + layer.out];
        let mut out = vec![0.0; layer.out];
        for (o, (row, bias)) in out
            .iter_mut()
            .zip(w.chunks_exact(layer.inp).zip(b.iter()))
        {
            let z = dot(inp, row) + bias;
            if !z.is_finite() {
                return Err(NeuralError::Numeric { layer: i });
            }
            *o = if z > 0.0 { z } else { 0.0 };
        }
        acts.push(out);
    }
    let last = acts.last().unwrap();
    let head_out = |layer: &LayerShape, idx: usize| -> Result<Vec<f64>, NeuralError> {
        let w = &params.data[layer.w_off..layer.b_off];
        let b = &params.data[layer.b_off..layer.b_off + layer.out];
        let mut out = vec![0.0; layer.out];
        for (o, (row, bias)) in out
            .iter_mut()
            .zip(w.chunks_exact(layer.inp).zip(b.iter()))
        {
            let z = dot(last, row) + bias;
            if !z.is_finite() {
                return Err(NeuralError::Numeric { layer: idx });
            }
            *o = z;
        }
        Ok(out)
    };
    let head_a = head_out(&layers[n_hidden], n_hidden)?;
    let head_b = head_out(&layers[n_hidden + 1], n_hidden + 1)?;
    Ok(ForwardCache {
        acts,
        head_a,
        head_b,
    })
}

/// Pre-rectifier activations of every hidden layer, one vector per layer.
/// Diagnostic surface; gradient checks use it to keep finite differences
/// away from the rectifier kink.
pub fn hidden_preactivations(
    params: &ParamVector,
    obs: &[f64],
) -> Result<Vec<Vec<f64>>, NeuralError> {
    let topo = &params.topology;
    if obs.len() != topo.input_dim {
        return Err(NeuralError::Shape(format!(
            "observation has dim {}, network expects {}",
            obs.len(),
            topo.input_dim
        )));
    }
    let layers = topo.layers();
    let mut out = Vec::with_capacity(topo.hidden.len());
    let mut act = obs.to_vec();
    for layer in &layers[..topo.hidden.len()] {
        let w = &params.data[layer.w_off..layer.b_off];
        let b = &params.data[layer.b_off..layer.b_off + layer.out];
        let mut z = vec![0.0; layer.out];
        for (zi, (row, bias)) in z.iter_mut().zip(w.chunks_exact(layer.inp).zip(b.iter())) {
            *zi = dot(&act, row) + bias;
        }
        act = z.iter().map(|&v| if v > 0.0 { v } else { 0.0 }).collect();
        out.push(z);
    }
    Ok(out)
}

/// Dueling Q values: `Q^(k)(a) = E^(k) + A^(k)(a) - mean_a' A^(k)(a')`,
/// returned as one row per horizon.
pub fn forward_q(params: &ParamVector, obs: &[f64]) -> Result<Vec<Vec<f64>>, NeuralError> {
    let cache = forward_cache(params, obs)?;
    dueling_q_from_heads(&params.topology, &cache.head_a, &cache.head_b)
}

fn dueling_q_from_heads(
    topo: &NetTopology,
    expectation: &[f64],
    advantage: &[f64],
) -> Result<Vec<Vec<f64>>, NeuralError> {
    let (horizons, l) = match &topo.head {
        HeadSpec::DuelingQ { horizons, n_actions } => (horizons.len(), *n_actions),
        HeadSpec::PolicyValue { .. } => {
            return Err(NeuralError::Shape(
                "forward_q called on a policy-value network".into(),
            ))
        }
    };
    let mut q = Vec::with_capacity(horizons);
    for k in 0..horizons {
        let adv = &advantage[k * l..(k + 1) * l];
        let mean = adv.iter().sum::<f64>() / l as f64;
        q.push(adv.iter().map(|a| expectation[k] + a - mean).collect());
    }
    Ok(q)
}

/// Softmax policy and scalar value from a policy-value network.
pub fn forward_policy_value(
    params: &ParamVector,
    obs: &[f64],
) -> Result<(Vec<f64>, f64), NeuralError> {
    let cache = forward_cache(params, obs)?;
    match &params.topology.head {
        HeadSpec::PolicyValue { .. } => {
            Ok((softmax(&cache.head_a), cache.head_b[0]))
        }
        HeadSpec::DuelingQ { .. } => Err(NeuralError::Shape(
            "forward_policy_value called on a dueling-Q network".into(),
        )),
    }
}

fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|z| (z - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// One batch sample for the masked multi-horizon Huber loss: per-horizon
/// (return, terminal-mask) targets for the action actually executed.
#[derive(Debug, Clone)]
pub struct QmcSample {
    pub obs: Vec<f64>,
    pub action: usize,
    pub targets: Vec<(f64, bool)>,
}

#[derive(Debug, Clone)]
pub struct ScalarSample {
    pub obs: Vec<f64>,
    pub action: usize,
    pub target: f64,
}

/// One actor-critic sample. `advantage` is the stop-gradient coefficient of
/// the policy term, precomputed by the agent as `R - V(s)`; baking it in as a
/// constant keeps the loss a true potential of the emitted gradient.
#[derive(Debug, Clone)]
pub struct PolicySample {
    pub obs: Vec<f64>,
    pub action: usize,
    pub target: f64,
    pub advantage: f64,
}

/// The three loss families the stack differentiates.
#[derive(Debug, Clone)]
pub enum LossSpec {
    /// Sum over samples and horizons of `(1 - T_k) * Huber(Q^(k)(s, a) - R_k)`.
    MaskedMultiHorizon { samples: Vec<QmcSample> },
    /// Sum over samples of `Huber(Q(s, a) - R)` on a single-horizon head.
    ScalarHuber { samples: Vec<ScalarSample> },
    /// Policy gradient with value baseline and entropy bonus:
    /// `-log pi(a|s) * advantage + 0.5 (V(s) - R)^2 - beta * H(pi)`.
    ActorCritic {
        samples: Vec<PolicySample>,
        entropy_beta: f64,
    },
}

#[derive(Debug, Clone)]
pub struct BackwardOut {
    pub loss: f64,
    pub grads: GradVector,
    /// Policy probabilities clamped at the log-floor while computing the loss.
    pub clamp_events: u32,
}

const LOG_PROB_FLOOR: f64 = 1e-8;

/// Exact gradient of the scalar total loss w.r.t. every trainable parameter.
pub fn backward(
    params: &ParamVector,
    spec: &LossSpec,
    freeze: Option<&FreezeMask>,
) -> Result<BackwardOut, NeuralError> {
    let topo = &params.topology;
    let mut grads = GradVector::zeros(topo.param_count());
    let mut loss = 0.0;
    let mut clamp_events = 0u32;

    match spec {
        LossSpec::MaskedMultiHorizon { samples } => {
            let (horizons, l) = match &topo.head {
                HeadSpec::DuelingQ { horizons, n_actions } => (horizons.len(), *n_actions),
                _ => {
                    return Err(NeuralError::Shape(
                        "multi-horizon loss requires a dueling-Q head".into(),
                    ))
                }
            };
            for sample in samples {
                if sample.targets.len() != horizons || sample.action >= l {
                    return Err(NeuralError::Shape("sample does not match head".into()));
                }
                let cache = forward_cache(params, &sample.obs)?;
                let q = dueling_q_from_heads(topo, &cache.head_a, &cache.head_b)?;
                let mut dq = vec![0.0; horizons * l];
                for (k, &(target, masked)) in sample.targets.iter().enumerate() {
                    if masked {
                        continue;
                    }
                    let diff = q[k][sample.action] - target;
                    loss += huber(diff, HUBER_DELTA);
                    dq[k * l + sample.action] = huber_grad(diff, HUBER_DELTA);
                }
                accumulate_dueling(params, &cache, &dq, horizons, l, &mut grads);
            }
        }
        LossSpec::ScalarHuber { samples } => {
            let (horizons, l) = match &topo.head {
                HeadSpec::DuelingQ { horizons, n_actions } => (horizons.len(), *n_actions),
                _ => {
                    return Err(NeuralError::Shape(
                        "scalar Huber loss requires a dueling-Q head".into(),
                    ))
                }
            };
            if horizons != 1 {
                return Err(NeuralError::Shape(
                    "scalar Huber loss expects a single-horizon head".into(),
                ));
            }
            for sample in samples {
                if sample.action >= l {
                    return Err(NeuralError::Shape("action index out of range".into()));
                }
                let cache = forward_cache(params, &sample.obs)?;
                let q = dueling_q_from_heads(topo, &cache.head_a, &cache.head_b)?;
                let diff = q[0][sample.action] - sample.target;
                loss += huber(diff, HUBER_DELTA);
                let mut dq = vec![0.0; l];
                dq[sample.action] = huber_grad(diff, HUBER_DELTA);
                accumulate_dueling(params, &cache, &dq, 1, l, &mut grads);
            }
        }
        LossSpec::ActorCritic {
            samples,
            entropy_beta,
        } => {
            let l = match &topo.head {
                HeadSpec::PolicyValue { n_actions } => *n_actions,
                _ => {
                    return Err(NeuralError::Shape(
                        "actor-critic loss requires a policy-value head".into(),
                    ))
                }
            };
            for sample in samples {
                if sample.action >= l {
                    return Err(NeuralError::Shape("action index out of range".into()));
                }
                let cache = forward_cache(params, &sample.obs)?;
                let pi = softmax(&cache.head_a);
                let v = cache.head_b[0];
                let advantage = sample.advantage;
                let mut p_a = pi[sample.action];
                if p_a < LOG_PROB_FLOOR {
                    p_a = LOG_PROB_FLOOR;
                    clamp_events += 1;
                }
                let entropy: f64 = pi
                    .iter()
                    .filter(|&&p| p > 0.0)
                    .map(|&p| -p * p.ln())
                    .sum();
                loss += -p_a.ln() * advantage;
                loss += 0.5 * (v - sample.target) * (v - sample.target);
                loss -= entropy_beta * entropy;

                let mut dlogits = vec![0.0; l];
                for j in 0..l {
                    // policy-gradient term
                    let indicator = if j == sample.action { 1.0 } else { 0.0 };
                    dlogits[j] = advantage * (pi[j] - indicator);
                    // entropy bonus
                    if pi[j] > 0.0 {
                        dlogits[j] += entropy_beta * pi[j] * (pi[j].ln() + entropy);
                    }
                }
                let dv = v - sample.target;
                accumulate_heads(params, &cache, &dlogits, &[dv], &mut grads);
            }
        }
    }

    if let Some(mask) = freeze {
        zero_frozen(topo, mask, &mut grads)?;
    }
    if let Some(layer) = first_nonfinite_layer(topo, &grads) {
        return Err(NeuralError::Numeric { layer });
    }
    Ok(BackwardOut {
        loss,
        grads,
        clamp_events,
    })
}

// Translate dQ into gradients on the expectation and advantage heads, then
// backprop through the trunk. dQ/dE_k = sum_a dQ[k][a]; dQ/dA_{k,b} =
// dQ[k][b] - mean_a dQ[k][a] (the centering term).
fn accumulate_dueling(
    params: &ParamVector,
    cache: &ForwardCache,
    dq: &[f64],
    horizons: usize,
    l: usize,
    grads: &mut GradVector,
) {
    let mut d_e = vec![0.0; horizons];
    let mut d_a = vec![0.0; horizons * l];
    for k in 0..horizons {
        let row = &dq[k * l..(k + 1) * l];
        let sum: f64 = row.iter().sum();
        d_e[k] = sum;
        let mean = sum / l as f64;
        for b in 0..l {
            d_a[k * l + b] = row[b] - mean;
        }
    }
    accumulate_heads(params, cache, &d_e, &d_a, grads);
}

// Shared trunk backprop given gradients at the two head outputs.
fn accumulate_heads(
    params: &ParamVector,
    cache: &ForwardCache,
    d_head_a: &[f64],
    d_head_b: &[f64],
    grads: &mut GradVector,
) {
    let topo = &params.topology;
    let layers = topo.layers();
    let n_hidden = topo.hidden.len();
    let last_act = cache.acts.last().unwrap();
    let mut d_act = vec![0.0; last_act.len()];

    for (layer, d_out) in [
        (&layers[n_hidden], d_head_a),
        (&layers[n_hidden + 1], d_head_b),
    ] {
        let w = &params.data[layer.w_off..layer.b_off];
        let gw = &mut grads.data[layer.w_off..layer.b_off];
        for (o, d) in d_out.iter().enumerate() {
            if *d != 0.0 {
                let row = &w[o * layer.inp..(o + 1) * layer.inp];
                let grow = &mut gw[o * layer.inp..(o + 1) * layer.inp];
                axpy(*d, last_act, grow);
                axpy(*d, row, &mut d_act);
            }
        }
        let gb = &mut grads.data[layer.b_off..layer.b_off + layer.out];
        for (g, d) in gb.iter_mut().zip(d_out) {
            *g += *d;
        }
    }

    // hidden layers, back to front
    for i in (0..n_hidden).rev() {
        let layer = &layers[i];
        let act_out = &cache.acts[i + 1];
        let act_in = &cache.acts[i];
        // rectifier derivative
        for (d, a) in d_act.iter_mut().zip(act_out) {
            if *a <= 0.0 {
                *d = 0.0;
            }
        }
        let w = &params.data[layer.w_off..layer.b_off];
        let mut d_in = vec![0.0; layer.inp];
        {
            let gw = &mut grads.data[layer.w_off..layer.b_off];
            for (o, d) in d_act.iter().enumerate() {
                if *d != 0.0 {
                    let row = &w[o * layer.inp..(o + 1) * layer.inp];
                    let grow = &mut gw[o * layer.inp..(o + 1) * layer.inp];
                    axpy(*d, act_in, grow);
                    axpy(*d, row, &mut d_in);
                }
            }
        }
        let gb = &mut grads.data[layer.b_off..layer.b_off + layer.out];
        for (g, d) in gb.iter_mut().zip(&d_act) {
            *g += *d;
        }
        d_act = d_in;
    }
}

fn zero_frozen(
    topo: &NetTopology,
    mask: &FreezeMask,
    grads: &mut GradVector,
) -> Result<(), NeuralError> {
    if mask.frozen.len() != topo.n_layers() {
        return Err(NeuralError::BadFreezeMask(
            "mask does not match topology".into(),
        ));
    }
    for (layer, &frozen) in topo.layers().iter().zip(&mask.frozen) {
        if frozen {
            for g in &mut grads.data[layer.w_off..layer.b_off + layer.out] {
                *g = 0.0;
            }
        }
    }
    Ok(())
}

fn first_nonfinite_layer(topo: &NetTopology, grads: &GradVector) -> Option<usize> {
    for (i, layer) in topo.layers().iter().enumerate() {
        if grads.data[layer.w_off..layer.b_off + layer.out]
            .iter()
            .any(|g| !g.is_finite())
        {
            return Some(i);
        }
    }
    None
}

/// Shared RMSProp accumulator state.
#[derive(Debug, Clone, PartialEq)]
pub struct RMSPropState {
    pub g: Vec<f64>,
    pub decay: f64,
    pub epsilon: f64,
}

impl RMSPropState {
    pub fn new(param_count: usize) -> Self {
        RMSPropState {
            g: vec![0.0; param_count],
            decay: 0.99,
            epsilon: 0.1,
        }
    }
}

/// `g <- decay*g + (1-decay)*grad^2; param <- param - lr*grad/sqrt(g + eps)`.
pub fn rmsprop_apply(
    opt: &mut RMSPropState,
    params: &mut ParamVector,
    grads: &GradVector,
    lr: f64,
) -> Result<(), NeuralError> {
    if opt.g.len() != params.data.len() || grads.data.len() != params.data.len() {
        return Err(NeuralError::Shape(format!(
            "rmsprop shapes differ: g={}, params={}, grads={}",
            opt.g.len(),
            params.data.len(),
            grads.data.len()
        )));
    }
    let decay = opt.decay;
    let eps = opt.epsilon;
    for ((g, p), &grad) in opt.g.iter_mut().zip(&mut params.data).zip(&grads.data) {
        *g = decay * *g + (1.0 - decay) * grad * grad;
        *p -= lr * grad / (*g + eps).sqrt();
    }
    params.version += 1;
    Ok(())
}

#[cfg(test)]
mod tests;
