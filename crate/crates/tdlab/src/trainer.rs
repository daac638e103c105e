//! Shared parameter store, asynchronous and sequential training loops,
//! greedy evaluation, and the freeze-retrain protocol.
//!
//! The [`ParamStore`] is the single shared-mutable object: workers snapshot
//! it, act for one update unit, and apply gradients under an exclusive
//! section. Everything else is worker-private, which is what makes the
//! sequential mode bit-reproducible.

use crate::agents::{
    a3c_act, a3c_loss, argmax_lowest, eps_at, nstepq_act, nstepq_loss, qmc_act, qmc_loss,
    ActionObjective, AgentError, Algorithm, EpsSchedule, ExperienceWindow, Transition,
};
use crate::gridworld::{reset, Action, GridConfig, GridError, GridState};
use crate::neural::{
    forward_policy_value, forward_q, init_params, rmsprop_apply, save_params, FreezeMask,
    GradVector, NetTopology, NeuralError, ParamVector, RMSPropState, SnapshotError,
};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::fs::{self, File};
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Mutex;
use std::time::Duration;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("config error: {0}")]
    Config(String),
    #[error("{0}")]
    Grid(#[from] GridError),
    #[error("{0}")]
    Neural(#[from] NeuralError),
    #[error("{0}")]
    Agent(#[from] AgentError),
    #[error("{0}")]
    Snapshot(#[from] SnapshotError),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("too many numerically invalid updates ({skipped} skipped vs {applied} applied)")]
    NumericAbort { skipped: u64, applied: u64 },
    #[error("worker {0} panicked")]
    WorkerPanic(usize),
}

/// Linear learning-rate anneal indexed by the global step counter.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LrSchedule {
    pub lr_start: f64,
    pub lr_end: f64,
}

impl Default for LrSchedule {
    fn default() -> Self {
        LrSchedule {
            lr_start: 7e-4,
            lr_end: 1e-8,
        }
    }
}

pub fn lr_at(schedule: &LrSchedule, global_step: u64, total_steps: u64) -> f64 {
    if total_steps == 0 || global_step >= total_steps {
        return schedule.lr_end;
    }
    let frac = global_step as f64 / total_steps as f64;
    schedule.lr_start + (schedule.lr_end - schedule.lr_start) * frac
}

/// Globally shared network parameters, optimizer statistics, and step
/// counter. Snapshot reads return a consistent full copy; updates are
/// serialized.
pub struct ParamStore {
    inner: Mutex<StoreInner>,
}

struct StoreInner {
    params: ParamVector,
    opt: RMSPropState,
    steps: u64,
}

impl ParamStore {
    pub fn new(params: ParamVector) -> Self {
        let opt = RMSPropState::new(params.data.len());
        ParamStore {
            inner: Mutex::new(StoreInner {
                params,
                opt,
                steps: 0,
            }),
        }
    }

    /// Atomic copy of the current parameters and step counter.
    pub fn snapshot(&self) -> (ParamVector, u64) {
        let inner = self.inner.lock().unwrap();
        (inner.params.clone(), inner.steps)
    }

    pub fn steps(&self) -> u64 {
        self.inner.lock().unwrap().steps
    }

    /// Count environment steps without a parameter update (warmup batches).
    pub fn add_steps(&self, delta: u64) -> u64 {
        let mut inner = self.inner.lock().unwrap();
        inner.steps += delta;
        inner.steps
    }

    /// Apply one gradient bundle. The learning rate is read from the anneal
    /// schedule at the counter value current inside the exclusive section.
    pub fn apply(
        &self,
        grads: &GradVector,
        delta_steps: u64,
        schedule: &LrSchedule,
        total_steps: u64,
    ) -> Result<u64, NeuralError> {
        let mut inner = self.inner.lock().unwrap();
        let lr = lr_at(schedule, inner.steps, total_steps);
        let StoreInner { params, opt, steps } = &mut *inner;
        rmsprop_apply(opt, params, grads, lr)?;
        *steps += delta_steps;
        Ok(*steps)
    }
}

fn default_workers() -> usize {
    16
}
fn default_batch() -> usize {
    20
}
fn default_total_steps() -> u64 {
    60_000_000
}
fn default_hidden() -> Vec<usize> {
    vec![512, 512, 512]
}
fn default_grad_clip() -> Option<f64> {
    Some(40.0)
}
fn default_target_sync() -> Option<u64> {
    Some(10_000)
}
fn default_entropy_beta() -> f64 {
    0.01
}
fn default_eval_episodes() -> usize {
    500
}
fn default_replicas() -> usize {
    3
}

/// Full training configuration; unset fields take the reference defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub algo: Algorithm,
    /// Environment spec string, e.g. `grid-coord+delay:8`.
    pub env: String,
    pub workers: usize,
    pub batch: usize,
    pub total_steps: u64,
    pub lr: LrSchedule,
    pub eps: EpsSchedule,
    /// Discount; `None` selects the per-algorithm default.
    pub gamma: Option<f64>,
    pub hidden: Vec<usize>,
    pub grad_clip: Option<f64>,
    /// Target-network sync interval for n-step Q; `None` disables it.
    pub target_sync: Option<u64>,
    pub entropy_beta: f64,
    pub objective: ActionObjective,
    /// Checkpoint cadence in steps; `None` means total_steps / 24.
    pub eval_interval: Option<u64>,
    pub eval_episodes: usize,
    pub replicas: usize,
    pub seed: u64,
    pub sequential: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            algo: Algorithm::Qmc,
            env: String::new(),
            workers: default_workers(),
            batch: default_batch(),
            total_steps: default_total_steps(),
            lr: LrSchedule::default(),
            eps: EpsSchedule::default(),
            gamma: None,
            hidden: default_hidden(),
            grad_clip: default_grad_clip(),
            target_sync: default_target_sync(),
            entropy_beta: default_entropy_beta(),
            objective: ActionObjective::default(),
            eval_interval: None,
            eval_episodes: default_eval_episodes(),
            replicas: default_replicas(),
            seed: 0,
            sequential: false,
        }
    }
}

impl TrainConfig {
    pub fn new(algo: Algorithm, env: &str) -> Self {
        TrainConfig {
            algo,
            env: env.to_string(),
            ..TrainConfig::default()
        }
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        if self.env.is_empty() {
            return Err(TrainError::Config("missing required key: env".into()));
        }
        GridConfig::from_spec(&self.env)?;
        if self.workers < 1 {
            return Err(TrainError::Config("workers must be >= 1".into()));
        }
        if self.batch < 1 {
            return Err(TrainError::Config("batch must be >= 1".into()));
        }
        if self.total_steps == 0 {
            return Err(TrainError::Config("total_steps must be > 0".into()));
        }
        if self.eval_episodes == 0 {
            return Err(TrainError::Config("eval_episodes must be > 0".into()));
        }
        if !(0.0..=1.0).contains(&self.eps.eps_end)
            || self.eps.eps_end > self.eps.eps_start
            || self.eps.eps_start > 1.0
        {
            return Err(TrainError::Config(
                "eps schedule must satisfy 0 <= eps_end <= eps_start <= 1".into(),
            ));
        }
        Ok(())
    }

    pub fn grid_config(&self) -> Result<GridConfig, TrainError> {
        Ok(GridConfig::from_spec(&self.env)?)
    }

    pub fn gamma(&self) -> f64 {
        self.gamma.unwrap_or_else(|| self.algo.default_gamma())
    }

    pub fn eval_interval(&self) -> u64 {
        self.eval_interval
            .unwrap_or(self.total_steps / 24)
            .max(1)
    }

    pub fn topology(&self) -> Result<NetTopology, TrainError> {
        let grid = self.grid_config()?;
        let head = self.algo.head_spec(crate::gridworld::N_ACTIONS);
        Ok(NetTopology::new(grid.obs_dim(), self.hidden.clone(), head)?)
    }
}

/// Resolved quantities recorded next to the raw config in the run manifest.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ResolvedConfig {
    pub gamma: f64,
    pub eval_interval: u64,
    pub obs_dim: usize,
    pub head: String,
    pub param_count: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Manifest {
    pub code_version: String,
    pub config: TrainConfig,
    pub resolved: ResolvedConfig,
}

pub fn build_manifest(config: &TrainConfig) -> Result<Manifest, TrainError> {
    let topo = config.topology()?;
    Ok(Manifest {
        code_version: env!("CARGO_PKG_VERSION").to_string(),
        resolved: ResolvedConfig {
            gamma: config.gamma(),
            eval_interval: config.eval_interval(),
            obs_dim: topo.input_dim,
            head: format!("{:?}", topo.head),
            param_count: topo.param_count(),
        },
        config: config.clone(),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalStats {
    pub mean: f64,
    pub std: f64,
    pub scores: Vec<f64>,
}

fn stats_of(scores: Vec<f64>) -> EvalStats {
    let n = scores.len() as f64;
    let mean = scores.iter().sum::<f64>() / n;
    let var = scores.iter().map(|s| (s - mean) * (s - mean)).sum::<f64>() / n;
    EvalStats {
        mean,
        std: var.sqrt(),
        scores,
    }
}

/// Greedy (Q heads) or mode (policy head) action, no exploration.
pub fn greedy_action(
    params: &ParamVector,
    algo: Algorithm,
    objective: &ActionObjective,
    obs: &[f64],
) -> Result<usize, TrainError> {
    match algo {
        Algorithm::Qmc => {
            let q = forward_q(params, obs)?;
            let scores = objective.combine(&params.topology, &q)?;
            Ok(argmax_lowest(&scores))
        }
        Algorithm::NstepQ { .. } => {
            let q = forward_q(params, obs)?;
            Ok(argmax_lowest(&q[0]))
        }
        Algorithm::A3c { .. } => {
            let (pi, _) = forward_policy_value(params, obs)?;
            Ok(argmax_lowest(&pi))
        }
    }
}

/// Score a snapshot over `episodes` fresh episodes; score = kits collected.
pub fn evaluate(
    params: &ParamVector,
    algo: Algorithm,
    objective: &ActionObjective,
    env: &GridConfig,
    episodes: usize,
    seed: u64,
) -> Result<EvalStats, TrainError> {
    let mut scores = Vec::with_capacity(episodes);
    for i in 0..episodes {
        let (mut state, mut obs) = reset(env, seed.wrapping_add(i as u64))?;
        loop {
            let a = greedy_action(params, algo, objective, &obs)?;
            let r = state.step(Action::from_index(a).expect("action in range"))?;
            obs = r.observation;
            if r.terminal {
                scores.push(r.kits_collected as f64);
                break;
            }
        }
    }
    Ok(stats_of(scores))
}

/// Mean score of the uniform-random policy, the reference floor for the
/// scaled learning checks.
pub fn random_baseline(env: &GridConfig, episodes: usize, seed: u64) -> Result<EvalStats, TrainError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut scores = Vec::with_capacity(episodes);
    for i in 0..episodes {
        let (mut state, _) = reset(env, seed.wrapping_add(i as u64))?;
        loop {
            let a = rng.random_range(0..crate::gridworld::N_ACTIONS);
            let r = state.step(Action::from_index(a).expect("action in range"))?;
            if r.terminal {
                scores.push(r.kits_collected as f64);
                break;
            }
        }
    }
    Ok(stats_of(scores))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointEval {
    pub step: u64,
    pub mean: f64,
    pub std: f64,
    pub episodes: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub checkpoints: Vec<CheckpointEval>,
}

impl EvalReport {
    /// Best checkpoint by mean score — the per-run aggregate used in reports.
    pub fn best(&self) -> Option<&CheckpointEval> {
        self.checkpoints
            .iter()
            .max_by(|a, b| a.mean.total_cmp(&b.mean))
    }

    pub fn best_mean(&self) -> Option<f64> {
        self.best().map(|c| c.mean)
    }
}

#[derive(Debug)]
pub struct RunOutput {
    pub report: EvalReport,
    pub final_params: ParamVector,
    pub final_steps: u64,
    pub run_dir: PathBuf,
    pub skipped_updates: u64,
    pub applied_updates: u64,
}

#[derive(Debug, Default, Clone, Copy)]
struct WorkerStats {
    applied: u64,
    skipped: u64,
    clamp_events: u64,
}

struct Worker<'a> {
    id: usize,
    algo: Algorithm,
    gamma: f64,
    batch: usize,
    total: u64,
    grad_clip: Option<f64>,
    entropy_beta: f64,
    eps: EpsSchedule,
    lr: LrSchedule,
    objective: ActionObjective,
    target_sync: Option<u64>,
    env_cfg: GridConfig,
    env: GridState,
    obs: Vec<f64>,
    rng: ChaCha8Rng,
    window: ExperienceWindow,
    target: Option<ParamVector>,
    next_sync: u64,
    freeze: Option<FreezeMask>,
    stats: WorkerStats,
    store: &'a ParamStore,
}

impl<'a> Worker<'a> {
    fn new(
        cfg: &TrainConfig,
        id: usize,
        store: &'a ParamStore,
        freeze: Option<FreezeMask>,
    ) -> Result<Self, TrainError> {
        let env_cfg = cfg.grid_config()?;
        let mut rng =
            ChaCha8Rng::seed_from_u64(cfg.seed ^ (id as u64).wrapping_mul(0x9E3779B97F4A7C15));
        let env_seed = rng.random::<u64>();
        let (env, obs) = reset(&env_cfg, env_seed)?;
        let horizon_max = match cfg.algo {
            Algorithm::Qmc => *crate::agents::QMC_HORIZONS.last().unwrap(),
            _ => 1,
        };
        Ok(Worker {
            id,
            algo: cfg.algo,
            gamma: cfg.gamma(),
            batch: cfg.batch,
            total: cfg.total_steps,
            grad_clip: cfg.grad_clip,
            entropy_beta: cfg.entropy_beta,
            eps: cfg.eps,
            lr: cfg.lr,
            objective: cfg.objective.clone(),
            target_sync: cfg.target_sync,
            env_cfg,
            env,
            obs,
            rng,
            window: ExperienceWindow::new(horizon_max, cfg.batch),
            target: None,
            next_sync: 0,
            freeze,
            stats: WorkerStats::default(),
            store,
        })
    }

    /// Take one environment step under `action`, handling episode resets.
    fn env_step(&mut self, action: usize) -> Result<Transition, TrainError> {
        let result = self
            .env
            .step(Action::from_index(action).expect("action in range"))?;
        let t = Transition {
            obs: std::mem::replace(&mut self.obs, result.observation),
            action,
            reward: result.reward,
            terminal: result.terminal,
        };
        if result.terminal {
            let seed = self.rng.random::<u64>();
            let (env, obs) = reset(&self.env_cfg, seed)?;
            self.env = env;
            self.obs = obs;
        }
        Ok(t)
    }

    fn finish_update(&mut self, mut grads: GradVector, delta: u64) -> Result<(), TrainError> {
        let finite = grads.data.iter().all(|g| g.is_finite());
        if !finite {
            self.stats.skipped += 1;
            self.store.add_steps(delta);
            if self.stats.skipped > 100 && self.stats.skipped * 10 > self.stats.applied {
                return Err(TrainError::NumericAbort {
                    skipped: self.stats.skipped,
                    applied: self.stats.applied,
                });
            }
            return Ok(());
        }
        if let Some(max_norm) = self.grad_clip {
            grads.clip_global_norm(max_norm);
        }
        self.store.apply(&grads, delta, &self.lr, self.total)?;
        self.stats.applied += 1;
        Ok(())
    }

    /// One update unit; returns false once the global budget is spent.
    fn step_batch(&mut self) -> Result<bool, TrainError> {
        let (params, n) = self.store.snapshot();
        if n >= self.total {
            return Ok(false);
        }
        let budget = (self.total - n) as usize;
        let eps = eps_at(&self.eps, n, self.total);
        match self.algo {
            Algorithm::Qmc => {
                let take = self.batch.min(budget);
                for _ in 0..take {
                    let a = qmc_act(&params, &self.obs, eps, &self.objective, &mut self.rng)?;
                    let t = self.env_step(a)?;
                    self.window.push(t);
                }
                match qmc_loss(&self.window, &params, self.batch, self.freeze.as_ref()) {
                    Ok(bundle) => self.finish_update(bundle.grads, take as u64)?,
                    Err(AgentError::WindowNotReady { .. }) => {
                        self.store.add_steps(take as u64);
                    }
                    Err(e) => return Err(e.into()),
                }
            }
            Algorithm::NstepQ { n: rollout_n } => {
                if let Some(sync) = self.target_sync {
                    if self.target.is_none() || n >= self.next_sync {
                        self.target = Some(params.clone());
                        self.next_sync = (n / sync + 1) * sync;
                    }
                } else {
                    self.target = None;
                }
                let take = self.batch.max(rollout_n).min(budget);
                let mut acc = GradVector::zeros(params.data.len());
                let mut collected = 0usize;
                while collected < take {
                    let cap = rollout_n.min(take - collected);
                    let mut rollout = Vec::with_capacity(cap);
                    for _ in 0..cap {
                        let a = nstepq_act(&params, &self.obs, eps, &mut self.rng)?;
                        let t = self.env_step(a)?;
                        let terminal = t.terminal;
                        rollout.push(t);
                        if terminal {
                            break;
                        }
                    }
                    collected += rollout.len();
                    let boot = if rollout.last().is_some_and(|t| t.terminal) {
                        None
                    } else {
                        Some(self.obs.clone())
                    };
                    let target = self.target.as_ref().unwrap_or(&params);
                    let out = nstepq_loss(
                        &rollout,
                        boot.as_deref(),
                        &params,
                        target,
                        self.gamma,
                        self.freeze.as_ref(),
                    )?;
                    for (a, g) in acc.data.iter_mut().zip(&out.grads.data) {
                        *a += *g;
                    }
                }
                self.finish_update(acc, collected as u64)?;
            }
            Algorithm::A3c { n: rollout_n } => {
                let take = self.batch.max(rollout_n).min(budget);
                let mut acc = GradVector::zeros(params.data.len());
                let mut collected = 0usize;
                while collected < take {
                    let cap = rollout_n.min(take - collected);
                    let mut rollout = Vec::with_capacity(cap);
                    for _ in 0..cap {
                        let a = a3c_act(&params, &self.obs, &mut self.rng)?;
                        let t = self.env_step(a)?;
                        let terminal = t.terminal;
                        rollout.push(t);
                        if terminal {
                            break;
                        }
                    }
                    collected += rollout.len();
                    let boot = if rollout.last().is_some_and(|t| t.terminal) {
                        None
                    } else {
                        Some(self.obs.clone())
                    };
                    let out = a3c_loss(
                        &rollout,
                        boot.as_deref(),
                        &params,
                        self.gamma,
                        self.entropy_beta,
                        self.freeze.as_ref(),
                    )?;
                    self.stats.clamp_events += out.clamp_events as u64;
                    for (a, g) in acc.data.iter_mut().zip(&out.grads.data) {
                        *a += *g;
                    }
                }
                self.finish_update(acc, collected as u64)?;
            }
        }
        let _ = self.id;
        Ok(true)
    }
}

struct RunFiles {
    eval_csv: File,
    log: File,
    snap_dir: PathBuf,
}

impl RunFiles {
    fn create(run_dir: &Path, manifest: &Manifest) -> Result<RunFiles, TrainError> {
        fs::create_dir_all(run_dir)?;
        let snap_dir = run_dir.join("snapshots");
        fs::create_dir_all(&snap_dir)?;
        fs::write(
            run_dir.join("manifest.json"),
            serde_json::to_string_pretty(manifest)
                .map_err(|e| TrainError::Config(e.to_string()))?,
        )?;
        let mut eval_csv = File::create(run_dir.join("eval.csv"))?;
        writeln!(eval_csv, "step,mean,std,episodes")?;
        let log = File::create(run_dir.join("run.log"))?;
        Ok(RunFiles {
            eval_csv,
            log,
            snap_dir,
        })
    }

    fn checkpoint(
        &mut self,
        store: &ParamStore,
        cfg: &TrainConfig,
        env: &GridConfig,
        report: &mut EvalReport,
    ) -> Result<(), TrainError> {
        let (params, n) = store.snapshot();
        if report.checkpoints.last().map(|c| c.step) == Some(n) {
            return Ok(());
        }
        save_params(&self.snap_dir.join(format!("step_{n}.bin")), &params)?;
        let eval_seed = cfg.seed ^ 0xEBA1u64.wrapping_add(n);
        let stats = evaluate(&params, cfg.algo, &cfg.objective, env, cfg.eval_episodes, eval_seed)?;
        writeln!(
            self.eval_csv,
            "{},{},{},{}",
            n,
            stats.mean,
            stats.std,
            stats.scores.len()
        )?;
        writeln!(
            self.log,
            "checkpoint step={} mean={} std={}",
            n, stats.mean, stats.std
        )?;
        report.checkpoints.push(CheckpointEval {
            step: n,
            mean: stats.mean,
            std: stats.std,
            episodes: stats.scores.len(),
        });
        Ok(())
    }
}

/// Train per `config` into `run_dir`, writing the standard artifact layout.
pub fn run(config: &TrainConfig, run_dir: &Path) -> Result<RunOutput, TrainError> {
    run_with(config, run_dir, None, None)
}

/// `run` with an explicit initial parameter vector and/or freeze mask
/// (the freeze-retrain entry point).
pub fn run_with(
    config: &TrainConfig,
    run_dir: &Path,
    init: Option<ParamVector>,
    freeze: Option<FreezeMask>,
) -> Result<RunOutput, TrainError> {
    config.validate()?;
    let topo = config.topology()?;
    let params = match init {
        Some(p) => {
            if p.topology != topo {
                return Err(TrainError::Config(
                    "initial parameters do not match the configured topology".into(),
                ));
            }
            p
        }
        None => init_params(&topo, config.seed)?,
    };
    let manifest = build_manifest(config)?;
    let mut files = RunFiles::create(run_dir, &manifest)?;
    let env = config.grid_config()?;
    let store = ParamStore::new(params);
    let mut report = EvalReport::default();
    let interval = config.eval_interval();
    let mut next_eval = interval;

    let stats = if config.sequential || config.workers == 1 {
        let mut worker = Worker::new(config, 0, &store, freeze)?;
        loop {
            if !worker.step_batch()? {
                break;
            }
            let n = store.steps();
            if n >= next_eval {
                files.checkpoint(&store, config, &env, &mut report)?;
                next_eval = (n / interval + 1) * interval;
            }
        }
        writeln!(
            files.log,
            "worker 0: applied={} skipped={} clamped={}",
            worker.stats.applied, worker.stats.skipped, worker.stats.clamp_events
        )?;
        worker.stats
    } else {
        run_workers_async(config, &store, freeze, &mut files, &env, &mut report, interval)?
    };

    files.checkpoint(&store, config, &env, &mut report)?;
    let (final_params, final_steps) = store.snapshot();
    writeln!(files.log, "done steps={final_steps}")?;
    Ok(RunOutput {
        report,
        final_params,
        final_steps,
        run_dir: run_dir.to_path_buf(),
        skipped_updates: stats.skipped,
        applied_updates: stats.applied,
    })
}

#[allow(clippy::too_many_arguments)]
fn run_workers_async(
    config: &TrainConfig,
    store: &ParamStore,
    freeze: Option<FreezeMask>,
    files: &mut RunFiles,
    env: &GridConfig,
    report: &mut EvalReport,
    interval: u64,
) -> Result<WorkerStats, TrainError> {
    let abort = AtomicBool::new(false);
    let worker_errors: Mutex<Vec<TrainError>> = Mutex::new(Vec::new());
    let totals: Mutex<WorkerStats> = Mutex::new(WorkerStats::default());
    let mut next_eval = interval;

    std::thread::scope(|scope| -> Result<(), TrainError> {
        let mut handles = Vec::with_capacity(config.workers);
        for id in 0..config.workers {
            let freeze = freeze.clone();
            let abort = &abort;
            let worker_errors = &worker_errors;
            let totals = &totals;
            handles.push(scope.spawn(move || {
                let body = || -> Result<(), TrainError> {
                    let mut worker = Worker::new(config, id, store, freeze)?;
                    while !abort.load(Ordering::Relaxed) {
                        if !worker.step_batch()? {
                            break;
                        }
                    }
                    let mut t = totals.lock().unwrap();
                    t.applied += worker.stats.applied;
                    t.skipped += worker.stats.skipped;
                    t.clamp_events += worker.stats.clamp_events;
                    Ok(())
                };
                if let Err(e) = body() {
                    abort.store(true, Ordering::Relaxed);
                    worker_errors.lock().unwrap().push(e);
                }
            }));
        }
        // monitor: evaluate snapshots off the live store at each boundary
        loop {
            if handles.iter().all(|h| h.is_finished()) {
                break;
            }
            let n = store.steps();
            if n >= next_eval {
                files.checkpoint(store, config, env, report)?;
                next_eval = (n / interval + 1) * interval;
            }
            std::thread::sleep(Duration::from_millis(10));
        }
        for (id, h) in handles.into_iter().enumerate() {
            if h.join().is_err() {
                return Err(TrainError::WorkerPanic(id));
            }
        }
        Ok(())
    })?;

    if let Some(e) = worker_errors.into_inner().unwrap().into_iter().next() {
        return Err(e);
    }
    let stats = totals.into_inner().unwrap();
    writeln!(
        files.log,
        "workers: applied={} skipped={} clamped={}",
        stats.applied, stats.skipped, stats.clamp_events
    )?;
    Ok(stats)
}

/// FNV-1a over each layer's parameter bytes; frozen layers must keep theirs
/// constant through retraining.
pub fn layer_checksums(params: &ParamVector) -> Vec<u64> {
    params
        .topology
        .layer_spans()
        .iter()
        .map(|span| {
            let mut h: u64 = 0xcbf2_9ce4_8422_2325;
            for &v in &params.data[span.clone()] {
                for b in v.to_le_bytes() {
                    h ^= b as u64;
                    h = h.wrapping_mul(0x0000_0100_0000_01b3);
                }
            }
            h
        })
        .collect()
}

#[derive(Debug)]
pub struct FreezeOutcome {
    pub pretrain: RunOutput,
    pub retrain: RunOutput,
    pub frozen_layers: Vec<bool>,
    /// Checksums of the retrain net at its (re)initialization and at the end.
    pub checksums_start: Vec<u64>,
    pub checksums_end: Vec<u64>,
    /// Every frozen layer kept its checksum through retraining.
    pub frozen_intact: bool,
    /// At least one unfrozen layer moved away from its reinitialization.
    pub reinit_moved: bool,
}

/// Phase 1 trains `pretrain` fully; phase 2 copies the frozen layers into a
/// freshly initialized `retrain` net and trains only the rest.
pub fn freeze_retrain(
    pretrain: &TrainConfig,
    retrain: &TrainConfig,
    frozen: &[bool],
    run_dir: &Path,
) -> Result<FreezeOutcome, TrainError> {
    let pre_out = run(pretrain, &run_dir.join("pretrain"))?;

    let topo = retrain.topology()?;
    let mask = FreezeMask::new(frozen.to_vec(), &topo)?;
    let mut init = init_params(&topo, retrain.seed ^ 0x5EED)?;
    let pre_spans = pre_out.final_params.topology.layer_spans();
    let re_spans = topo.layer_spans();
    for (i, &is_frozen) in frozen.iter().enumerate() {
        if !is_frozen {
            continue;
        }
        let (src, dst) = (&pre_spans[i], &re_spans[i]);
        if src.len() != dst.len() {
            return Err(TrainError::Config(format!(
                "frozen layer {i} has incompatible shapes between the two nets"
            )));
        }
        init.data[dst.clone()].copy_from_slice(&pre_out.final_params.data[src.clone()]);
    }
    let checksums_start = layer_checksums(&init);

    let re_out = run_with(retrain, &run_dir.join("retrain"), Some(init), Some(mask))?;
    let checksums_end = layer_checksums(&re_out.final_params);

    let frozen_intact = frozen
        .iter()
        .zip(checksums_start.iter().zip(&checksums_end))
        .all(|(&f, (a, b))| !f || a == b);
    let reinit_moved = frozen
        .iter()
        .zip(checksums_start.iter().zip(&checksums_end))
        .any(|(&f, (a, b))| !f && a != b);

    Ok(FreezeOutcome {
        pretrain: pre_out,
        retrain: re_out,
        frozen_layers: frozen.to_vec(),
        checksums_start,
        checksums_end,
        frozen_intact,
        reinit_moved,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_config(algo: Algorithm) -> TrainConfig {
        TrainConfig {
            algo,
            env: "grid-coord".into(),
            workers: 1,
            batch: 20,
            total_steps: 1_400,
            hidden: vec![8],
            eval_interval: Some(700),
            eval_episodes: 2,
            seed: 5,
            sequential: true,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn lr_schedule_endpoints() {
        let s = LrSchedule::default();
        let total = 60_000_000;
        assert_eq!(lr_at(&s, 0, total), 7e-4);
        assert!(lr_at(&s, total, total) <= 1e-8);
        let mid = lr_at(&s, total / 2, total);
        assert!((mid - (7e-4 + 1e-8) / 2.0).abs() < 1e-12);
        // exact linear interpolation at a sampled point
        let q = lr_at(&s, total / 4, total);
        assert!((q - (7e-4 + 0.25 * (1e-8 - 7e-4))).abs() < 1e-15);
    }

    #[test]
    fn store_counts_and_versions() {
        let cfg = tiny_config(Algorithm::Qmc);
        let params = init_params(&cfg.topology().unwrap(), 0).unwrap();
        let n_params = params.data.len();
        let store = ParamStore::new(params);
        assert_eq!(store.steps(), 0);
        store.add_steps(20);
        let grads = GradVector { data: vec![0.1; n_params] };
        let n = store.apply(&grads, 20, &LrSchedule::default(), 1000).unwrap();
        assert_eq!(n, 40);
        let (p, n) = store.snapshot();
        assert_eq!(n, 40);
        assert_eq!(p.version, 1);
    }

    #[test]
    fn config_validation_names_missing_env() {
        let cfg = TrainConfig::default();
        match cfg.validate() {
            Err(TrainError::Config(msg)) => assert!(msg.contains("env")),
            other => panic!("expected config error, got {other:?}"),
        }
    }

    #[test]
    fn sequential_is_bit_identical_and_exact() {
        let cfg = tiny_config(Algorithm::Qmc);
        let d1 = tempfile::tempdir().unwrap();
        let d2 = tempfile::tempdir().unwrap();
        let a = run(&cfg, d1.path()).unwrap();
        let b = run(&cfg, d2.path()).unwrap();
        assert_eq!(a.final_steps, cfg.total_steps); // single incrementer
        assert_eq!(a.final_params.data, b.final_params.data);
        let csv1 = std::fs::read(d1.path().join("eval.csv")).unwrap();
        let csv2 = std::fs::read(d2.path().join("eval.csv")).unwrap();
        assert_eq!(csv1, csv2);
        assert!(d1.path().join("manifest.json").exists());
        assert!(d1.path().join("run.log").exists());
        assert!(d1
            .path()
            .join("snapshots")
            .join(format!("step_{}.bin", cfg.total_steps))
            .exists());
    }

    #[test]
    fn async_overshoot_bounded() {
        let mut cfg = tiny_config(Algorithm::NstepQ { n: 5 });
        cfg.workers = 3;
        cfg.sequential = false;
        cfg.total_steps = 600;
        cfg.eval_interval = Some(600);
        let dir = tempfile::tempdir().unwrap();
        let out = run(&cfg, dir.path()).unwrap();
        assert!(out.final_steps >= cfg.total_steps);
        assert!(out.final_steps < cfg.total_steps + (cfg.workers * cfg.batch) as u64);
    }

    #[test]
    fn async_single_worker_matches_sequential() {
        let mut seq = tiny_config(Algorithm::A3c { n: 5 });
        seq.total_steps = 400;
        seq.eval_interval = Some(400);
        let mut asy = seq.clone();
        asy.sequential = false;
        asy.workers = 1;
        let d1 = tempfile::tempdir().unwrap();
        let d2 = tempfile::tempdir().unwrap();
        let a = run(&seq, d1.path()).unwrap();
        let b = run(&asy, d2.path()).unwrap();
        assert_eq!(a.final_params.data, b.final_params.data);
    }

    #[test]
    fn evaluate_returns_requested_episode_count() {
        let cfg = tiny_config(Algorithm::Qmc);
        let params = init_params(&cfg.topology().unwrap(), 3).unwrap();
        let env = cfg.grid_config().unwrap();
        let s = evaluate(&params, cfg.algo, &cfg.objective, &env, 7, 11).unwrap();
        assert_eq!(s.scores.len(), 7);
        let s2 = evaluate(&params, cfg.algo, &cfg.objective, &env, 7, 11).unwrap();
        assert_eq!(s.scores, s2.scores); // deterministic policy + seeds
    }

    #[test]
    fn random_baseline_collects_some_kits() {
        let env = GridConfig::from_spec("grid-coord").unwrap();
        let s = random_baseline(&env, 50, 0).unwrap();
        assert!(s.mean > 0.0);
        assert_eq!(s.scores.len(), 50);
    }

    #[test]
    fn manifest_diff_is_target_and_head_only() {
        let a = build_manifest(&tiny_config(Algorithm::Qmc)).unwrap();
        let b = build_manifest(&tiny_config(Algorithm::NstepQ { n: 20 })).unwrap();
        let va = serde_json::to_value(&a).unwrap();
        let vb = serde_json::to_value(&b).unwrap();
        let mut diffs = Vec::new();
        collect_diffs(&va, &vb, String::new(), &mut diffs);
        let allowed = [
            "/config/algo",
            "/resolved/gamma",
            "/resolved/head",
            "/resolved/param_count",
        ];
        for d in &diffs {
            assert!(allowed.contains(&d.as_str()), "unexpected diff at {d}");
        }
        assert!(diffs.contains(&"/config/algo".to_string()));
    }

    fn collect_diffs(
        a: &serde_json::Value,
        b: &serde_json::Value,
        path: String,
        out: &mut Vec<String>,
    ) {
        use serde_json::Value;
        match (a, b) {
            (Value::Object(ma), Value::Object(mb)) => {
                for (k, va) in ma {
                    let vb = &mb[k];
                    collect_diffs(va, vb, format!("{path}/{k}"), out);
                }
            }
            _ if a != b => out.push(path),
            _ => {}
        }
    }

    #[test]
    fn freeze_retrain_keeps_frozen_layers() {
        let mut pre = tiny_config(Algorithm::Qmc);
        pre.total_steps = 200;
        pre.eval_interval = Some(200);
        let mut re = tiny_config(Algorithm::NstepQ { n: 5 });
        re.total_steps = 200;
        re.eval_interval = Some(200);
        let dir = tempfile::tempdir().unwrap();
        // freeze the hidden (perception) layer, retrain the heads
        let out = freeze_retrain(&pre, &re, &[true, false, false], dir.path()).unwrap();
        assert!(out.frozen_intact);
        assert!(out.reinit_moved);
        // the frozen layer really is the pretrained one
        let pre_sums = layer_checksums(&out.pretrain.final_params);
        assert_eq!(out.checksums_start[0], pre_sums[0]);
        assert_eq!(out.checksums_end[0], pre_sums[0]);
    }

    #[test]
    fn nstepq_long_rollout_unit_is_rollout_length() {
        // n > batch: the update unit grows to n, and sequential accounting
        // still lands exactly on the budget
        let mut cfg = tiny_config(Algorithm::NstepQ { n: 40 });
        cfg.total_steps = 400;
        cfg.eval_interval = Some(400);
        let dir = tempfile::tempdir().unwrap();
        let out = run(&cfg, dir.path()).unwrap();
        assert_eq!(out.final_steps, 400);
    }
}
