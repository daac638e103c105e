//! `tdlab` command-line interface: train, eval, sweep, report, freeze-retrain.

use clap::{Args, Parser, Subcommand};
use std::path::PathBuf;
use tdlab::agents::Algorithm;
use tdlab::harness::{
    apply_preset, apply_set, freeze_grid, load_config, run_sweep, write_report, ExperimentSpec,
    HarnessError,
};
use tdlab::neural::{load_params, HeadSpec};
use tdlab::trainer::{self, evaluate, freeze_retrain, random_baseline, TrainError};

#[derive(Parser)]
#[command(name = "tdlab", version, about = "Value-learning lab: train and compare MC / n-step TD agents on gridworlds")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct ConfigArgs {
    /// Path to a TOML training config.
    #[arg(long)]
    config: PathBuf,
    /// Dotted-path overrides, e.g. --set algo=nstepq:5 --set lr.lr_start=1e-3
    #[arg(long = "set", value_name = "KEY=VALUE")]
    sets: Vec<String>,
    /// Scale preset (currently: desk).
    #[arg(long)]
    preset: Option<String>,
    /// Force single-threaded deterministic mode.
    #[arg(long)]
    sequential: bool,
    /// Override the config seed.
    #[arg(long)]
    seed: Option<u64>,
}

impl ConfigArgs {
    fn load(&self) -> Result<tdlab::trainer::TrainConfig, HarnessError> {
        let mut cfg = load_config(&self.config, self.preset.as_deref(), &self.sets)?;
        if self.sequential {
            cfg.sequential = true;
        }
        if let Some(seed) = self.seed {
            cfg.seed = seed;
        }
        Ok(cfg)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Train one agent and write a run directory.
    Train {
        #[command(flatten)]
        config: ConfigArgs,
        /// Run directory to create.
        #[arg(long, default_value = "runs/train")]
        out: PathBuf,
    },
    /// Score a parameter snapshot (or the random baseline) on an env.
    Eval {
        /// Parameter snapshot; omit to score the uniform-random policy.
        #[arg(long)]
        snapshot: Option<PathBuf>,
        /// Environment spec, e.g. grid-coord+delay:8
        #[arg(long)]
        env: String,
        #[arg(long, default_value_t = 500)]
        episodes: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Run an experiment sweep spec: all cells x replicas.
    Sweep {
        /// Path to a TOML sweep spec.
        #[arg(long)]
        spec: PathBuf,
        #[arg(long = "set", value_name = "KEY=VALUE")]
        sets: Vec<String>,
        #[arg(long)]
        preset: Option<String>,
        #[arg(long)]
        sequential: bool,
        #[arg(long, default_value = "runs/sweep")]
        out: PathBuf,
    },
    /// Turn a results.csv into per-axis plot series.
    Report {
        #[arg(long)]
        results: PathBuf,
        #[arg(long, default_value = "runs/report")]
        out: PathBuf,
    },
    /// Pretrain, freeze layers, reinitialize the rest, retrain.
    FreezeRetrain {
        #[command(flatten)]
        config: ConfigArgs,
        /// Algorithm for the retrain phase (defaults to the pretrain one).
        #[arg(long)]
        retrain_algo: Option<String>,
        /// Steps for the pretrain phase (defaults to config total_steps).
        #[arg(long)]
        pretrain_steps: Option<u64>,
        /// Steps for the retrain phase (defaults to config total_steps).
        #[arg(long)]
        retrain_steps: Option<u64>,
        /// Per-layer freeze flags, e.g. 1,1,1,0,0 (default: hidden frozen).
        #[arg(long)]
        freeze: Option<String>,
        /// Run the full (pretrain algo x retrain algo) grid over these
        /// comma-separated algorithms instead of a single pair.
        #[arg(long)]
        grid: Option<String>,
        #[arg(long, default_value = "runs/freeze")]
        out: PathBuf,
    },
}

fn main() {
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(()) => {}
        Err(e) => {
            eprintln!("error: {e}");
            std::process::exit(e.exit_code());
        }
    }
}

fn dispatch(command: Command) -> Result<(), HarnessError> {
    match command {
        Command::Train { config, out } => {
            let cfg = config.load()?;
            let result = trainer::run(&cfg, &out)?;
            println!(
                "run complete: steps={} checkpoints={} best={}",
                result.final_steps,
                result.report.checkpoints.len(),
                result
                    .report
                    .best_mean()
                    .map_or("n/a".to_string(), |b| b.to_string())
            );
            Ok(())
        }
        Command::Eval {
            snapshot,
            env,
            episodes,
            seed,
        } => {
            let grid = tdlab::gridworld::GridConfig::from_spec(&env).map_err(TrainError::from)?;
            let stats = match snapshot {
                Some(path) => {
                    let params = load_params(&path).map_err(TrainError::from)?;
                    let algo = infer_algo(&params.topology.head);
                    evaluate(&params, algo, &Default::default(), &grid, episodes, seed)?
                }
                None => random_baseline(&grid, episodes, seed)?,
            };
            println!("mean={} std={} episodes={}", stats.mean, stats.std, stats.scores.len());
            Ok(())
        }
        Command::Sweep {
            spec,
            sets,
            preset,
            sequential,
            out,
        } => {
            let mut spec = ExperimentSpec::from_file(&spec)?;
            if let Some(p) = &preset {
                apply_preset(&mut spec.base, p)?;
            }
            for s in &sets {
                apply_set(&mut spec.base, s)?;
            }
            if sequential {
                apply_set(&mut spec.base, "sequential=true")?;
            }
            let table = run_sweep(&spec, &out)?;
            println!(
                "sweep complete: rows={} failures={}",
                table.rows.len(),
                table.failures.len()
            );
            for (cell, err) in &table.failures {
                eprintln!("cell {cell} failed: {err}");
            }
            Ok(())
        }
        Command::Report { results, out } => {
            let warnings = write_report(&results, &out)?;
            if warnings > 0 {
                eprintln!("skipped {warnings} malformed row(s)");
            }
            println!("report written to {}", out.display());
            Ok(())
        }
        Command::FreezeRetrain {
            config,
            retrain_algo,
            pretrain_steps,
            retrain_steps,
            freeze,
            grid,
            out,
        } => {
            let mut pre = config.load()?;
            if let Some(steps) = pretrain_steps {
                pre.total_steps = steps;
            }
            let mut re = pre.clone();
            if let Some(steps) = retrain_steps {
                re.total_steps = steps;
            }
            if let Some(algo) = &retrain_algo {
                re.algo = algo
                    .parse()
                    .map_err(|e: tdlab::agents::AgentError| HarnessError::Config(e.to_string()))?;
            }
            let frozen = match &freeze {
                Some(s) => parse_freeze(s)?,
                None => default_freeze(pre.hidden.len()),
            };
            if let Some(algos) = &grid {
                let algos = algos
                    .split(',')
                    .map(|a| {
                        a.trim()
                            .parse::<Algorithm>()
                            .map_err(|e| HarnessError::Config(e.to_string()))
                    })
                    .collect::<Result<Vec<_>, _>>()?;
                let cells = freeze_grid(&pre, &algos, &frozen, &out)?;
                for c in &cells {
                    println!(
                        "{} -> {}: pretrain_best={} retrain_best={} frozen_intact={}",
                        c.pretrain, c.retrain, c.pretrain_best, c.retrain_best, c.frozen_intact
                    );
                }
            } else {
                let outcome = freeze_retrain(&pre, &re, &frozen, &out)?;
                println!(
                    "pretrain_best={} retrain_best={} frozen_intact={} reinit_moved={}",
                    outcome.pretrain.report.best_mean().unwrap_or(f64::NAN),
                    outcome.retrain.report.best_mean().unwrap_or(f64::NAN),
                    outcome.frozen_intact,
                    outcome.reinit_moved
                );
                if !outcome.frozen_intact {
                    return Err(HarnessError::Train(TrainError::Config(
                        "frozen layers moved during retraining".into(),
                    )));
                }
            }
            Ok(())
        }
    }
}

fn infer_algo(head: &HeadSpec) -> Algorithm {
    match head {
        HeadSpec::DuelingQ { horizons, .. } if horizons.len() > 1 => Algorithm::Qmc,
        HeadSpec::DuelingQ { .. } => Algorithm::NstepQ { n: 1 },
        HeadSpec::PolicyValue { .. } => Algorithm::A3c { n: 1 },
    }
}

fn parse_freeze(s: &str) -> Result<Vec<bool>, HarnessError> {
    s.split(',')
        .map(|t| match t.trim() {
            "1" | "true" => Ok(true),
            "0" | "false" => Ok(false),
            other => Err(HarnessError::Config(format!(
                "freeze flag `{other}` is not 0/1"
            ))),
        })
        .collect()
}

/// Hidden (perception) layers frozen, both head layers trainable.
fn default_freeze(n_hidden: usize) -> Vec<bool> {
    let mut v = vec![true; n_hidden];
    v.extend([false, false]);
    v
}
