//! Health-gathering gridworld with composable experimental axes.
//!
//! An agent walks an `size x size` room with five actions (wait, up, down,
//! left, right), collecting health kits that respawn at random empty cells.
//! Wrappers control reward delay, terminal-after-m-kits, kit sparsity, and
//! the reward signal (binary vs. scaled health delta). Environment variants
//! are addressable by string specs like `grid-coord+delay:8+kits:2`.
//!
//! Two instances built from the same (config, seed) and fed the same action
//! sequence produce bit-identical traces.

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::VecDeque;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum GridError {
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("step called on a terminal state")]
    EpisodeFinished,
    #[error("coord observation requires exactly 4 kits, config has {0}")]
    ObsKitMismatch(usize),
    #[error("unknown environment spec `{0}`")]
    BadSpec(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Action {
    Wait,
    Up,
    Down,
    Left,
    Right,
}

pub const N_ACTIONS: usize = 5;

impl Action {
    pub const ALL: [Action; N_ACTIONS] =
        [Action::Wait, Action::Up, Action::Down, Action::Left, Action::Right];

    pub fn from_index(i: usize) -> Option<Action> {
        Action::ALL.get(i).copied()
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ObsMode {
    Coord,
    KHot,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RewardMode {
    Binary,
    HealthDelta,
}

/// Periodic health loss: `amount` units every `period` steps.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HealthDecay {
    pub amount: f64,
    pub period: u32,
}

pub const HEALTH_MAX: f64 = 100.0;
pub const KIT_HEALTH: f64 = 20.0;
pub const HEALTH_DELTA_SCALE: f64 = 30.0;
const BASE_DECAY_AMOUNT: f64 = 6.0;
const BASE_N_KITS: usize = 4;
const BASE_DECAY_PERIOD: u32 = 8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GridConfig {
    pub size: usize,
    pub n_kits: usize,
    pub episode_len: u32,
    pub obs_mode: ObsMode,
    pub reward_mode: RewardMode,
    pub delay_d: u32,
    pub terminal_m: Option<u32>,
    pub health_decay: Option<HealthDecay>,
    pub seed: u64,
}

impl Default for GridConfig {
    fn default() -> Self {
        GridConfig {
            size: 8,
            n_kits: BASE_N_KITS,
            episode_len: 525,
            obs_mode: ObsMode::Coord,
            reward_mode: RewardMode::Binary,
            delay_d: 0,
            terminal_m: None,
            health_decay: Some(HealthDecay {
                amount: BASE_DECAY_AMOUNT,
                period: BASE_DECAY_PERIOD,
            }),
            seed: 0,
        }
    }
}

/// Decay amount scaled with kit density: d proportional to sqrt(#kits),
/// anchored at 6 units for the basic 4-kit room, rounded to whole units.
pub fn scaled_decay_amount(n_kits: usize) -> f64 {
    (BASE_DECAY_AMOUNT * (n_kits as f64 / BASE_N_KITS as f64).sqrt()).round()
}

impl GridConfig {
    pub fn validate(&self) -> Result<(), GridError> {
        if self.size < 2 {
            return Err(GridError::InvalidConfig("size must be >= 2".into()));
        }
        if self.n_kits == 0 || self.n_kits >= self.size * self.size {
            return Err(GridError::InvalidConfig(format!(
                "n_kits must be in 1..size^2, got {}",
                self.n_kits
            )));
        }
        if self.episode_len == 0 {
            return Err(GridError::InvalidConfig("episode_len must be >= 1".into()));
        }
        if self.delay_d >= self.episode_len {
            return Err(GridError::InvalidConfig(format!(
                "delay_d ({}) must be < episode_len ({})",
                self.delay_d, self.episode_len
            )));
        }
        if let Some(m) = self.terminal_m {
            if m == 0 {
                return Err(GridError::InvalidConfig("terminal_m must be >= 1".into()));
            }
        }
        Ok(())
    }

    /// Set the kit count, rescaling the health decay to keep achievable
    /// reward comparable across sparsity levels.
    pub fn with_kits(mut self, n_kits: usize) -> Self {
        self.n_kits = n_kits;
        if let Some(decay) = &mut self.health_decay {
            decay.amount = scaled_decay_amount(n_kits);
        }
        self
    }

    /// Parse an environment spec string: a base key (`grid-coord`,
    /// `grid-khot`) followed by `+`-separated wrappers `delay:<d>`,
    /// `terminal:<m>`, `kits:<n>`, `reward:{binary,health}`.
    pub fn from_spec(spec: &str) -> Result<GridConfig, GridError> {
        let mut parts = spec.split('+');
        let base = parts.next().unwrap_or("");
        let mut config = GridConfig::default();
        match base {
            "grid-coord" => config.obs_mode = ObsMode::Coord,
            "grid-khot" => config.obs_mode = ObsMode::KHot,
            _ => return Err(GridError::BadSpec(spec.to_string())),
        }
        for part in parts {
            let (key, value) = part
                .split_once(':')
                .ok_or_else(|| GridError::BadSpec(spec.to_string()))?;
            let bad = || GridError::BadSpec(spec.to_string());
            match key {
                "delay" => config.delay_d = value.parse().map_err(|_| bad())?,
                "terminal" => config.terminal_m = Some(value.parse().map_err(|_| bad())?),
                "kits" => {
                    let n: usize = value.parse().map_err(|_| bad())?;
                    config = config.with_kits(n);
                }
                "reward" => {
                    config.reward_mode = match value {
                        "binary" => RewardMode::Binary,
                        "health" => RewardMode::HealthDelta,
                        _ => return Err(bad()),
                    }
                }
                _ => return Err(bad()),
            }
        }
        config.validate()?;
        Ok(config)
    }

    /// Observation vector length for this config.
    pub fn obs_dim(&self) -> usize {
        match self.obs_mode {
            ObsMode::Coord => 10,
            ObsMode::KHot => 2 * self.size * self.size,
        }
    }
}

pub type Cell = (usize, usize);

/// Full environment state. Exclusively owned by one worker; independent
/// instances may be sent between threads before use.
#[derive(Debug, Clone)]
pub struct GridState {
    config: GridConfig,
    agent: Cell,
    kits: Vec<Cell>,
    health: f64,
    step: u32,
    kits_collected: u32,
    pending_rewards: VecDeque<(u32, f64)>, // (due step, health gain)
    rng: ChaCha8Rng,
    terminal: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepResult {
    pub observation: Vec<f64>,
    pub reward: f64,
    pub terminal: bool,
    pub kits_collected: u32,
    pub health: f64,
}

/// Place agent and kits uniformly at random in distinct cells.
pub fn reset(config: &GridConfig, seed: u64) -> Result<(GridState, Vec<f64>), GridError> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let size = config.size;
    let mut occupied: Vec<Cell> = Vec::with_capacity(config.n_kits + 1);
    while occupied.len() < config.n_kits + 1 {
        let cell = (rng.random_range(0..size), rng.random_range(0..size));
        if !occupied.contains(&cell) {
            occupied.push(cell);
        }
    }
    let agent = occupied[0];
    let kits = occupied[1..].to_vec();
    let state = GridState {
        config: config.clone(),
        agent,
        kits,
        health: HEALTH_MAX,
        step: 0,
        kits_collected: 0,
        pending_rewards: VecDeque::new(),
        rng,
        terminal: false,
    };
    let obs = state.observe()?;
    Ok((state, obs))
}

impl GridState {
    pub fn config(&self) -> &GridConfig {
        &self.config
    }

    pub fn agent(&self) -> Cell {
        self.agent
    }

    pub fn kits(&self) -> &[Cell] {
        &self.kits
    }

    pub fn health(&self) -> f64 {
        self.health
    }

    pub fn step_count(&self) -> u32 {
        self.step
    }

    pub fn kits_collected(&self) -> u32 {
        self.kits_collected
    }

    pub fn is_terminal(&self) -> bool {
        self.terminal
    }

    pub fn pending_rewards(&self) -> &VecDeque<(u32, f64)> {
        &self.pending_rewards
    }

    /// Advance the environment by one action.
    ///
    /// Resolution order within a step: advance the step counter, move the
    /// agent (wall moves are no-ops that still consume the step), pick up a
    /// kit under the agent (scheduling its effect `delay_d` steps ahead and
    /// respawning a kit elsewhere), apply periodic health decay, release
    /// pending kit effects that are due, then check termination. Pending
    /// effects that have not come due when the episode ends are forfeited.
    pub fn step(&mut self, action: Action) -> Result<StepResult, GridError> {
        if self.terminal {
            return Err(GridError::EpisodeFinished);
        }
        let size = self.config.size;
        let health_prev = self.health;
        self.step += 1;

        let (r, c) = self.agent;
        self.agent = match action {
            Action::Wait => (r, c),
            Action::Up => (r.saturating_sub(1), c),
            Action::Down => ((r + 1).min(size - 1), c),
            Action::Left => (r, c.saturating_sub(1)),
            Action::Right => (r, (c + 1).min(size - 1)),
        };

        if let Some(pos) = self.kits.iter().position(|&k| k == self.agent) {
            self.kits.swap_remove(pos);
            self.kits_collected += 1;
            self.pending_rewards
                .push_back((self.step + self.config.delay_d, KIT_HEALTH));
            self.respawn_kit();
        }

        if let Some(decay) = self.config.health_decay {
            if self.step.is_multiple_of(decay.period) {
                self.health -= decay.amount;
            }
        }

        let mut released = 0u32;
        while let Some(&(due, gain)) = self.pending_rewards.front() {
            if due > self.step {
                break;
            }
            self.pending_rewards.pop_front();
            self.health = (self.health + gain).min(HEALTH_MAX);
            released += 1;
        }

        let reward = match self.config.reward_mode {
            RewardMode::Binary => released as f64,
            RewardMode::HealthDelta => (self.health - health_prev) / HEALTH_DELTA_SCALE,
        };

        if self.step >= self.config.episode_len
            || self.health <= 0.0
            || self.config.terminal_m.is_some_and(|m| self.kits_collected >= m)
        {
            self.terminal = true;
        }

        Ok(StepResult {
            observation: self.observe()?,
            reward,
            terminal: self.terminal,
            kits_collected: self.kits_collected,
            health: self.health,
        })
    }

    // New kit at a uniformly random empty cell; the agent's cell and existing
    // kit cells are excluded, so the kit count stays exact and a fresh kit can
    // never be collected in the same step.
    fn respawn_kit(&mut self) {
        let size = self.config.size;
        loop {
            let cell = (
                self.rng.random_range(0..size),
                self.rng.random_range(0..size),
            );
            if cell != self.agent && !self.kits.contains(&cell) {
                self.kits.push(cell);
                return;
            }
        }
    }

    pub fn observe(&self) -> Result<Vec<f64>, GridError> {
        match self.config.obs_mode {
            ObsMode::Coord => self.observe_coord(),
            ObsMode::KHot => Ok(self.observe_khot()),
        }
    }

    /// 10-dimensional observation: agent (row, col) followed by the four kit
    /// (row, col) pairs sorted ascending by distance to the agent, with
    /// equidistant kits ordered by (row, col). Coordinates normalized to [0, 1].
    pub fn observe_coord(&self) -> Result<Vec<f64>, GridError> {
        if self.config.n_kits != 4 {
            return Err(GridError::ObsKitMismatch(self.config.n_kits));
        }
        let norm = (self.config.size - 1) as f64;
        let dist2 = |k: &Cell| {
            let dr = k.0 as f64 - self.agent.0 as f64;
            let dc = k.1 as f64 - self.agent.1 as f64;
            dr * dr + dc * dc
        };
        let mut kits = self.kits.clone();
        kits.sort_by(|a, b| {
            dist2(a)
                .partial_cmp(&dist2(b))
                .unwrap()
                .then_with(|| a.cmp(b))
        });
        let mut obs = Vec::with_capacity(10);
        obs.push(self.agent.0 as f64 / norm);
        obs.push(self.agent.1 as f64 / norm);
        for kit in &kits {
            obs.push(kit.0 as f64 / norm);
            obs.push(kit.1 as f64 / norm);
        }
        Ok(obs)
    }

    /// One-hot agent block (size^2 entries) followed by a k-hot kit block.
    pub fn observe_khot(&self) -> Vec<f64> {
        let n = self.config.size * self.config.size;
        let mut obs = vec![0.0; 2 * n];
        obs[self.agent.0 * self.config.size + self.agent.1] = 1.0;
        for kit in &self.kits {
            obs[n + kit.0 * self.config.size + kit.1] = 1.0;
        }
        obs
    }
}
