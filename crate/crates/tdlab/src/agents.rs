//! The three learning algorithms as pure experience-in, gradients-out
//! policies: multi-horizon Monte Carlo Q regression, asynchronous n-step Q,
//! and advantage actor-critic.
//!
//! Agents own no shared state; they read parameter snapshots and emit
//! gradient bundles. The Q agents share topology, optimizer and schedules —
//! the only difference between them is how targets are constructed.

use crate::neural::{
    backward, forward_policy_value, forward_q, FreezeMask, GradVector, HeadSpec, LossSpec,
    NetTopology, NeuralError, ParamVector, PolicySample, QmcSample, ScalarSample,
};
use crate::returns::{self, ReturnsError};
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::collections::VecDeque;
use std::fmt;
use std::str::FromStr;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum AgentError {
    #[error("{0}")]
    Neural(#[from] NeuralError),
    #[error("{0}")]
    Returns(#[from] ReturnsError),
    #[error("experience window holds {have} transitions, need {need} for a full batch")]
    WindowNotReady { have: usize, need: usize },
    #[error("rollout is empty")]
    EmptyRollout,
    #[error("non-terminal rollout needs a bootstrap observation")]
    MissingBootstrap,
    #[error("objective references horizon {0}, absent from the network head")]
    UnknownHorizon(usize),
    #[error("objective has no nonzero coefficient")]
    EmptyObjective,
    #[error("unknown algorithm selector `{0}`")]
    BadAlgorithm(String),
}

/// Algorithm selector, parsed from strings like `qmc`, `nstepq:20`, `a3c:5`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum Algorithm {
    Qmc,
    NstepQ { n: usize },
    A3c { n: usize },
}

pub const QMC_HORIZONS: [usize; 6] = [1, 2, 4, 8, 16, 32];

impl Algorithm {
    pub fn head_spec(&self, n_actions: usize) -> HeadSpec {
        match self {
            Algorithm::Qmc => HeadSpec::DuelingQ {
                horizons: QMC_HORIZONS.to_vec(),
                n_actions,
            },
            Algorithm::NstepQ { .. } => HeadSpec::DuelingQ {
                horizons: vec![1],
                n_actions,
            },
            Algorithm::A3c { .. } => HeadSpec::PolicyValue { n_actions },
        }
    }

    pub fn default_gamma(&self) -> f64 {
        match self {
            Algorithm::Qmc => 1.0,
            _ => 0.99,
        }
    }

    pub fn rollout_len(&self) -> Option<usize> {
        match self {
            Algorithm::Qmc => None,
            Algorithm::NstepQ { n } | Algorithm::A3c { n } => Some(*n),
        }
    }

    pub fn uses_epsilon(&self) -> bool {
        !matches!(self, Algorithm::A3c { .. })
    }
}

impl FromStr for Algorithm {
    type Err = AgentError;

    fn from_str(s: &str) -> Result<Self, AgentError> {
        let bad = || AgentError::BadAlgorithm(s.to_string());
        match s.split_once(':') {
            None if s == "qmc" => Ok(Algorithm::Qmc),
            Some(("nstepq", n)) => Ok(Algorithm::NstepQ {
                n: n.parse().map_err(|_| bad())?,
            }),
            Some(("a3c", n)) => Ok(Algorithm::A3c {
                n: n.parse().map_err(|_| bad())?,
            }),
            _ => Err(bad()),
        }
    }
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Algorithm::Qmc => write!(f, "qmc"),
            Algorithm::NstepQ { n } => write!(f, "nstepq:{n}"),
            Algorithm::A3c { n } => write!(f, "a3c:{n}"),
        }
    }
}

impl TryFrom<String> for Algorithm {
    type Error = AgentError;
    fn try_from(s: String) -> Result<Self, AgentError> {
        s.parse()
    }
}

impl From<Algorithm> for String {
    fn from(a: Algorithm) -> String {
        a.to_string()
    }
}

/// One environment transition as the agent saw it.
#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub obs: Vec<f64>,
    pub action: usize,
    pub reward: f64,
    pub terminal: bool,
}

/// Per-worker rolling buffer of the most recent transitions.
///
/// Capacity is `horizon_max + batch + 1`: batch positions `0..batch` each
/// need inclusive lookahead up to `m + horizon_max`, one more than the
/// window arithmetic of a naive `horizon_max + batch` sizing provides.
#[derive(Debug, Clone)]
pub struct ExperienceWindow {
    buf: VecDeque<Transition>,
    capacity: usize,
}

impl ExperienceWindow {
    pub fn new(horizon_max: usize, batch: usize) -> Self {
        let capacity = horizon_max + batch + 1;
        ExperienceWindow {
            buf: VecDeque::with_capacity(capacity),
            capacity,
        }
    }

    pub fn push(&mut self, t: Transition) {
        if self.buf.len() == self.capacity {
            self.buf.pop_front();
        }
        self.buf.push_back(t);
    }

    pub fn len(&self) -> usize {
        self.buf.len()
    }

    pub fn is_empty(&self) -> bool {
        self.buf.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn is_full(&self) -> bool {
        self.buf.len() == self.capacity
    }

    pub fn get(&self, i: usize) -> &Transition {
        &self.buf[i]
    }

    fn rewards_and_flags(&self) -> (Vec<f64>, Vec<bool>) {
        let rewards = self.buf.iter().map(|t| t.reward).collect();
        let flags = self.buf.iter().map(|t| t.terminal).collect();
        (rewards, flags)
    }
}

/// Linear combination of Q heads used for action selection,
/// `sum_k c_k * Q^(k)(s, a)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActionObjective {
    /// (horizon, coefficient) pairs; horizons must exist in the network head.
    pub coefficients: Vec<(usize, f64)>,
}

impl Default for ActionObjective {
    fn default() -> Self {
        ActionObjective {
            coefficients: vec![(8, 0.5), (16, 0.5), (32, 1.0)],
        }
    }
}

impl ActionObjective {
    /// Combine per-horizon Q rows into one score per action.
    pub fn combine(&self, topology: &NetTopology, q: &[Vec<f64>]) -> Result<Vec<f64>, AgentError> {
        if self.coefficients.iter().all(|&(_, c)| c == 0.0) {
            return Err(AgentError::EmptyObjective);
        }
        let horizons = topology.horizons();
        let n_actions = topology.n_actions();
        let mut scores = vec![0.0; n_actions];
        for &(h, c) in &self.coefficients {
            let k = horizons
                .iter()
                .position(|&hh| hh == h)
                .ok_or(AgentError::UnknownHorizon(h))?;
            for (s, qv) in scores.iter_mut().zip(&q[k]) {
                *s += c * qv;
            }
        }
        Ok(scores)
    }
}

/// Lowest index wins ties, so runs replay bit-for-bit.
pub fn argmax_lowest(scores: &[f64]) -> usize {
    let mut best = 0;
    for (i, &s) in scores.iter().enumerate().skip(1) {
        if s > scores[best] {
            best = i;
        }
    }
    best
}

/// Epsilon-greedy action under the multi-horizon objective.
pub fn qmc_act<R: Rng>(
    params: &ParamVector,
    obs: &[f64],
    eps: f64,
    objective: &ActionObjective,
    rng: &mut R,
) -> Result<usize, AgentError> {
    let n_actions = params.topology.n_actions();
    if eps > 0.0 && rng.random_range(0.0..1.0) < eps {
        return Ok(rng.random_range(0..n_actions));
    }
    let q = forward_q(params, obs)?;
    let scores = objective.combine(&params.topology, &q)?;
    Ok(argmax_lowest(&scores))
}

/// Epsilon-greedy action on a single-horizon Q head.
pub fn nstepq_act<R: Rng>(
    params: &ParamVector,
    obs: &[f64],
    eps: f64,
    rng: &mut R,
) -> Result<usize, AgentError> {
    let n_actions = params.topology.n_actions();
    if eps > 0.0 && rng.random_range(0.0..1.0) < eps {
        return Ok(rng.random_range(0..n_actions));
    }
    let q = forward_q(params, obs)?;
    Ok(argmax_lowest(&q[0]))
}

/// Sample an action from the softmax policy.
pub fn a3c_act<R: Rng>(
    params: &ParamVector,
    obs: &[f64],
    rng: &mut R,
) -> Result<usize, AgentError> {
    let (pi, _) = forward_policy_value(params, obs)?;
    let mut u = rng.random_range(0.0..1.0);
    for (a, p) in pi.iter().enumerate() {
        if u < *p {
            return Ok(a);
        }
        u -= p;
    }
    Ok(pi.len() - 1)
}

#[derive(Debug, Clone)]
pub struct LossBundle {
    pub loss: f64,
    pub grads: GradVector,
    /// Per-position targets, exposed for inspection and oracle tests.
    pub targets: Vec<Vec<(f64, bool)>>,
    pub clamp_events: u32,
}

/// Masked multi-horizon Huber loss over the batch positions of a full window.
///
/// Batch positions are the oldest `batch` entries; each has the full
/// `horizon_max` lookahead inside the window. Predictions are taken at the
/// action actually executed; positions where an episode boundary falls within
/// horizon k contribute nothing at that horizon.
pub fn qmc_loss(
    window: &ExperienceWindow,
    params: &ParamVector,
    batch: usize,
    freeze: Option<&FreezeMask>,
) -> Result<LossBundle, AgentError> {
    let horizons = params.topology.horizons().to_vec();
    let horizon_max = *horizons.last().expect("dueling head has horizons");
    let need = horizon_max + batch + 1;
    if window.len() < need {
        return Err(AgentError::WindowNotReady {
            have: window.len(),
            need,
        });
    }
    let (rewards, flags) = window.rewards_and_flags();
    let mut samples = Vec::with_capacity(batch);
    let mut all_targets = Vec::with_capacity(batch);
    for m in 0..batch {
        let targets = returns::multi_horizon_targets(&rewards, &flags, m, &horizons)?;
        let t = window.get(m);
        samples.push(QmcSample {
            obs: t.obs.clone(),
            action: t.action,
            targets: targets.clone(),
        });
        all_targets.push(targets);
    }
    let out = backward(params, &LossSpec::MaskedMultiHorizon { samples }, freeze)?;
    Ok(LossBundle {
        loss: out.loss,
        grads: out.grads,
        targets: all_targets,
        clamp_events: 0,
    })
}

// Recursive to-rollout-end targets: R <- r_i + gamma * R starting from the
// bootstrap value. Equivalent to giving position i an (L - i)-step target.
fn rollout_targets(rollout: &[Transition], gamma: f64, bootstrap: f64) -> Vec<f64> {
    let mut targets = vec![0.0; rollout.len()];
    let mut acc = bootstrap;
    for (i, t) in rollout.iter().enumerate().rev() {
        acc = t.reward + gamma * acc;
        targets[i] = acc;
    }
    targets
}

/// n-step Q loss over one rollout.
///
/// Bootstrap is `0` when the rollout ends an episode, otherwise
/// `max_a Q(s_end, a; target_params)` on the state after the last transition.
pub fn nstepq_loss(
    rollout: &[Transition],
    bootstrap_obs: Option<&[f64]>,
    params: &ParamVector,
    target_params: &ParamVector,
    gamma: f64,
    freeze: Option<&FreezeMask>,
) -> Result<LossBundle, AgentError> {
    let last = rollout.last().ok_or(AgentError::EmptyRollout)?;
    let bootstrap = if last.terminal {
        0.0
    } else {
        let obs = bootstrap_obs.ok_or(AgentError::MissingBootstrap)?;
        let q = forward_q(target_params, obs)?;
        q[0].iter().cloned().fold(f64::NEG_INFINITY, f64::max)
    };
    let targets = rollout_targets(rollout, gamma, bootstrap);
    let samples = rollout
        .iter()
        .zip(&targets)
        .map(|(t, &target)| ScalarSample {
            obs: t.obs.clone(),
            action: t.action,
            target,
        })
        .collect();
    let out = backward(params, &LossSpec::ScalarHuber { samples }, freeze)?;
    Ok(LossBundle {
        loss: out.loss,
        grads: out.grads,
        targets: targets.into_iter().map(|t| vec![(t, false)]).collect(),
        clamp_events: 0,
    })
}

/// Advantage actor-critic loss over one rollout.
///
/// Targets bootstrap from `V(s_end; params)`; the policy term uses the
/// advantage `R_i - V(s_i)` as a stop-gradient coefficient.
pub fn a3c_loss(
    rollout: &[Transition],
    bootstrap_obs: Option<&[f64]>,
    params: &ParamVector,
    gamma: f64,
    entropy_beta: f64,
    freeze: Option<&FreezeMask>,
) -> Result<LossBundle, AgentError> {
    let last = rollout.last().ok_or(AgentError::EmptyRollout)?;
    let bootstrap = if last.terminal {
        0.0
    } else {
        let obs = bootstrap_obs.ok_or(AgentError::MissingBootstrap)?;
        forward_policy_value(params, obs)?.1
    };
    let targets = rollout_targets(rollout, gamma, bootstrap);
    let mut samples = Vec::with_capacity(rollout.len());
    for (t, &target) in rollout.iter().zip(&targets) {
        let (_, v) = forward_policy_value(params, &t.obs)?;
        samples.push(PolicySample {
            obs: t.obs.clone(),
            action: t.action,
            target,
            advantage: target - v,
        });
    }
    let out = backward(
        params,
        &LossSpec::ActorCritic {
            samples,
            entropy_beta,
        },
        freeze,
    )?;
    Ok(LossBundle {
        loss: out.loss,
        grads: out.grads,
        targets: targets.into_iter().map(|t| vec![(t, false)]).collect(),
        clamp_events: out.clamp_events,
    })
}

/// Linear exploration schedule, constant after the anneal window.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EpsSchedule {
    pub eps_start: f64,
    pub eps_end: f64,
    /// Fraction of total training steps spent annealing.
    pub anneal_fraction: f64,
}

impl Default for EpsSchedule {
    fn default() -> Self {
        EpsSchedule {
            eps_start: 1.0,
            eps_end: 0.01,
            anneal_fraction: 50.0 / 60.0,
        }
    }
}

pub fn eps_at(schedule: &EpsSchedule, global_step: u64, total_steps: u64) -> f64 {
    let anneal_steps = schedule.anneal_fraction * total_steps as f64;
    if anneal_steps <= 0.0 || global_step as f64 >= anneal_steps {
        return schedule.eps_end;
    }
    let frac = global_step as f64 / anneal_steps;
    schedule.eps_start + (schedule.eps_end - schedule.eps_start) * frac
}
