//! Python bindings for the core types and operations: return arithmetic,
//! the gridworld environment, and network forward passes.

use pyo3::exceptions::{PyIOError, PyValueError};
use pyo3::prelude::*;
use std::path::PathBuf;
use tdlab::agents::{Algorithm, EpsSchedule};
use tdlab::gridworld::{reset, Action, GridConfig, GridState, N_ACTIONS};
use tdlab::neural::{
    forward_policy_value, forward_q, huber as huber_rs, init_params, load_params, save_params,
    NetTopology, ParamVector,
};
use tdlab::returns::{self, EpisodeTrace};
use tdlab::trainer::{self, greedy_action, lr_at as lr_at_rs, LrSchedule};

fn value_err<E: std::fmt::Display>(e: E) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn trace(rewards: Vec<f64>, terminals: Vec<bool>) -> PyResult<EpisodeTrace> {
    EpisodeTrace::new(rewards, terminals).map_err(value_err)
}

/// Huber loss with knee `delta`.
#[pyfunction]
#[pyo3(signature = (x, delta = 1.0))]
fn huber(x: f64, delta: f64) -> f64 {
    huber_rs(x, delta)
}

/// Discounted return from step `t` of a recorded episode.
#[pyfunction]
fn discounted_return(rewards: Vec<f64>, terminals: Vec<bool>, t: usize, gamma: f64) -> PyResult<f64> {
    returns::discounted_return(&trace(rewards, terminals)?, t, gamma).map_err(value_err)
}

/// Finite-horizon (inclusive) return from step `t`.
#[pyfunction]
fn finite_horizon_return(
    rewards: Vec<f64>,
    terminals: Vec<bool>,
    t: usize,
    tau: usize,
) -> PyResult<f64> {
    returns::finite_horizon_return(&trace(rewards, terminals)?, t, tau).map_err(value_err)
}

/// n-step TD target from a reward window and a bootstrap value.
#[pyfunction]
fn td_target(rewards_window: Vec<f64>, gamma: f64, bootstrap: f64, terminal: bool) -> f64 {
    returns::td_target(&rewards_window, gamma, bootstrap, terminal)
}

/// Per-horizon (target, masked) pairs for sample position `m`.
#[pyfunction]
fn multi_horizon_targets(
    rewards: Vec<f64>,
    terminals: Vec<bool>,
    m: usize,
    horizons: Vec<usize>,
) -> PyResult<Vec<(f64, bool)>> {
    returns::multi_horizon_targets(&rewards, &terminals, m, &horizons).map_err(value_err)
}

/// Linearly annealed exploration rate.
#[pyfunction]
#[pyo3(signature = (global_step, total_steps, eps_start = 1.0, eps_end = 0.01, anneal_fraction = 50.0 / 60.0))]
fn eps_at(
    global_step: u64,
    total_steps: u64,
    eps_start: f64,
    eps_end: f64,
    anneal_fraction: f64,
) -> f64 {
    let s = EpsSchedule {
        eps_start,
        eps_end,
        anneal_fraction,
    };
    tdlab::agents::eps_at(&s, global_step, total_steps)
}

/// Linearly annealed learning rate.
#[pyfunction]
#[pyo3(signature = (global_step, total_steps, lr_start = 7e-4, lr_end = 1e-8))]
fn lr_at(global_step: u64, total_steps: u64, lr_start: f64, lr_end: f64) -> f64 {
    lr_at_rs(&LrSchedule { lr_start, lr_end }, global_step, total_steps)
}

/// Mean and stddev of the uniform-random policy's episode score.
#[pyfunction]
#[pyo3(signature = (spec, episodes = 100, seed = 0))]
fn random_baseline(spec: &str, episodes: usize, seed: u64) -> PyResult<(f64, f64)> {
    let cfg = GridConfig::from_spec(spec).map_err(value_err)?;
    let stats = trainer::random_baseline(&cfg, episodes, seed).map_err(value_err)?;
    Ok((stats.mean, stats.std))
}

/// The health-gathering gridworld, built from a spec string such as
/// `grid-coord+delay:8`. Call `reset(seed)` before stepping.
#[pyclass]
struct GridEnv {
    config: GridConfig,
    state: Option<GridState>,
    spec: String,
}

#[pymethods]
impl GridEnv {
    #[new]
    fn new(spec: &str) -> PyResult<Self> {
        let config = GridConfig::from_spec(spec).map_err(value_err)?;
        Ok(GridEnv {
            config,
            state: None,
            spec: spec.to_string(),
        })
    }

    /// Start a fresh episode; returns the initial observation.
    fn reset(&mut self, seed: u64) -> PyResult<Vec<f64>> {
        let (state, obs) = reset(&self.config, seed).map_err(value_err)?;
        self.state = Some(state);
        Ok(obs)
    }

    /// Advance one step; returns (observation, reward, terminal, kits, health).
    fn step(&mut self, action: usize) -> PyResult<(Vec<f64>, f64, bool, u32, f64)> {
        let state = self
            .state
            .as_mut()
            .ok_or_else(|| PyValueError::new_err("call reset() first"))?;
        let a = Action::from_index(action)
            .ok_or_else(|| PyValueError::new_err(format!("action {action} out of range")))?;
        let r = state.step(a).map_err(value_err)?;
        Ok((r.observation, r.reward, r.terminal, r.kits_collected, r.health))
    }

    #[getter]
    fn obs_dim(&self) -> usize {
        self.config.obs_dim()
    }

    #[getter]
    fn n_actions(&self) -> usize {
        N_ACTIONS
    }

    #[getter]
    fn spec(&self) -> &str {
        &self.spec
    }

    fn __repr__(&self) -> String {
        format!("GridEnv({:?})", self.spec)
    }
}

fn infer_algo(topology: &NetTopology) -> Algorithm {
    match &topology.head {
        tdlab::neural::HeadSpec::DuelingQ { horizons, .. } if horizons.len() > 1 => Algorithm::Qmc,
        tdlab::neural::HeadSpec::DuelingQ { .. } => Algorithm::NstepQ { n: 1 },
        tdlab::neural::HeadSpec::PolicyValue { .. } => Algorithm::A3c { n: 1 },
    }
}

/// A flat MLP parameter vector with its topology; supports forward passes,
/// greedy action selection, and snapshot round-trips.
#[pyclass]
struct Params {
    inner: ParamVector,
    algo: Algorithm,
}

#[pymethods]
impl Params {
    /// Fresh Xavier-initialized network for `algo` ("qmc", "nstepq:<n>",
    /// "a3c:<n>") with the given input width and hidden sizes.
    #[staticmethod]
    #[pyo3(signature = (algo, obs_dim, hidden, seed = 0))]
    fn init(algo: &str, obs_dim: usize, hidden: Vec<usize>, seed: u64) -> PyResult<Self> {
        let algo: Algorithm = algo.parse().map_err(value_err)?;
        let topo =
            NetTopology::new(obs_dim, hidden, algo.head_spec(N_ACTIONS)).map_err(value_err)?;
        let inner = init_params(&topo, seed).map_err(value_err)?;
        Ok(Params { inner, algo })
    }

    /// Load a binary snapshot written by the trainer.
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        let inner = load_params(&path).map_err(|e| PyIOError::new_err(e.to_string()))?;
        let algo = infer_algo(&inner.topology);
        Ok(Params { inner, algo })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        save_params(&path, &self.inner).map_err(|e| PyIOError::new_err(e.to_string()))
    }

    /// Dueling-head Q values: one row per horizon, one column per action.
    fn forward_q(&self, obs: Vec<f64>) -> PyResult<Vec<Vec<f64>>> {
        forward_q(&self.inner, &obs).map_err(value_err)
    }

    /// Softmax policy probabilities and state value.
    fn forward_policy_value(&self, obs: Vec<f64>) -> PyResult<(Vec<f64>, f64)> {
        forward_policy_value(&self.inner, &obs).map_err(value_err)
    }

    /// Exploitation action under this network's own head type.
    fn greedy_action(&self, obs: Vec<f64>) -> PyResult<usize> {
        greedy_action(&self.inner, self.algo, &Default::default(), &obs).map_err(value_err)
    }

    #[getter]
    fn param_count(&self) -> usize {
        self.inner.data.len()
    }

    #[getter]
    fn algo(&self) -> String {
        self.algo.to_string()
    }

    fn __repr__(&self) -> String {
        format!(
            "Params(algo={:?}, params={})",
            self.algo.to_string(),
            self.inner.data.len()
        )
    }
}

#[pymodule]
fn tdlab_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(huber, m)?)?;
    m.add_function(wrap_pyfunction!(discounted_return, m)?)?;
    m.add_function(wrap_pyfunction!(finite_horizon_return, m)?)?;
    m.add_function(wrap_pyfunction!(td_target, m)?)?;
    m.add_function(wrap_pyfunction!(multi_horizon_targets, m)?)?;
    m.add_function(wrap_pyfunction!(eps_at, m)?)?;
    m.add_function(wrap_pyfunction!(lr_at, m)?)?;
    m.add_function(wrap_pyfunction!(random_baseline, m)?)?;
    m.add_class::<GridEnv>()?;
    m.add_class::<Params>()?;
    Ok(())
}
