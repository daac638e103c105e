//! Experiment orchestration behind the CLI: config trees with dotted-path
//! overrides, presets, sweep execution over controlled axes, aggregation,
//! and plot-ready report series.

use crate::agents::Algorithm;
use crate::trainer::{self, freeze_retrain, run, TrainConfig, TrainError};
use serde::Deserialize;
use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("config error: {0}")]
    Config(String),
    #[error("{0}")]
    Train(#[from] TrainError),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

impl HarnessError {
    /// Process exit code per the interface contract: 2 for config errors,
    /// 3 for runtime failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            HarnessError::Config(_) | HarnessError::Train(TrainError::Config(_)) => 2,
            _ => 3,
        }
    }
}

/// Parse a config file into a raw TOML tree, ready for overrides.
pub fn parse_config_file(path: &Path) -> Result<toml::Value, HarnessError> {
    let text = fs::read_to_string(path)
        .map_err(|e| HarnessError::Config(format!("cannot read {}: {e}", path.display())))?;
    text.parse::<toml::Value>()
        .map_err(|e| HarnessError::Config(format!("{}: {e}", path.display())))
}

/// Apply one `dotted.path=value` override, creating tables along the path.
/// The value is parsed as TOML; if that fails it is taken as a bare string.
pub fn apply_set(tree: &mut toml::Value, assignment: &str) -> Result<(), HarnessError> {
    let (path, raw) = assignment
        .split_once('=')
        .ok_or_else(|| HarnessError::Config(format!("override `{assignment}` is not key=value")))?;
    let value = parse_toml_scalar(raw);
    let mut node = tree;
    let segments: Vec<&str> = path.split('.').collect();
    for (i, seg) in segments.iter().enumerate() {
        let table = node
            .as_table_mut()
            .ok_or_else(|| HarnessError::Config(format!("`{path}` crosses a non-table value")))?;
        if i + 1 == segments.len() {
            table.insert(seg.to_string(), value);
            return Ok(());
        }
        node = table
            .entry(seg.to_string())
            .or_insert_with(|| toml::Value::Table(Default::default()));
    }
    unreachable!("split('.') yields at least one segment")
}

fn parse_toml_scalar(raw: &str) -> toml::Value {
    let doc = format!("v = {raw}");
    match doc.parse::<toml::Value>() {
        Ok(toml::Value::Table(mut t)) => t.remove("v").expect("key v just parsed"),
        _ => toml::Value::String(raw.to_string()),
    }
}

/// Named scale presets. `desk` shrinks the run to workstation scale while
/// keeping every schedule expressed as a fraction of the total unchanged.
pub fn apply_preset(tree: &mut toml::Value, preset: &str) -> Result<(), HarnessError> {
    match preset {
        "desk" => {
            for set in ["total_steps=2000000", "workers=4", "eval_episodes=100"] {
                apply_set(tree, set)?;
            }
            Ok(())
        }
        other => Err(HarnessError::Config(format!("unknown preset `{other}`"))),
    }
}

/// Deserialize a finished tree into a validated TrainConfig. Unknown or
/// ill-typed fields surface with their field path.
pub fn resolve_config(tree: toml::Value) -> Result<TrainConfig, HarnessError> {
    let cfg: TrainConfig = tree
        .try_into()
        .map_err(|e| HarnessError::Config(e.to_string()))?;
    cfg.validate()?;
    Ok(cfg)
}

/// Convenience path: file + preset + overrides.
pub fn load_config(
    path: &Path,
    preset: Option<&str>,
    sets: &[String],
) -> Result<TrainConfig, HarnessError> {
    let mut tree = parse_config_file(path)?;
    if let Some(p) = preset {
        apply_preset(&mut tree, p)?;
    }
    for s in sets {
        apply_set(&mut tree, s)?;
    }
    resolve_config(tree)
}

fn default_replicas() -> usize {
    3
}

/// One sweep axis: a display name, the config field it varies, and the
/// values it takes. `xs`, when given, are the plot-axis labels (e.g. the
/// delay in steps when the varied field is the whole env string).
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Axis {
    pub name: String,
    pub field: String,
    pub values: Vec<toml::Value>,
    #[serde(default)]
    pub xs: Option<Vec<toml::Value>>,
}

/// A sweep: a base config tree plus independent 1-D axes, each run with
/// `replicas` seeds.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSpec {
    pub name: String,
    #[serde(default = "default_replicas")]
    pub replicas: usize,
    pub base: toml::Value,
    pub axes: Vec<Axis>,
}

impl ExperimentSpec {
    pub fn from_file(path: &Path) -> Result<Self, HarnessError> {
        let tree = parse_config_file(path)?;
        tree.try_into()
            .map_err(|e: toml::de::Error| HarnessError::Config(e.to_string()))
    }

    /// Expand into (cell name, config) pairs; every cell must resolve.
    pub fn cells(&self) -> Result<Vec<(String, TrainConfig)>, HarnessError> {
        let mut out = Vec::new();
        for axis in &self.axes {
            if let Some(xs) = &axis.xs {
                if xs.len() != axis.values.len() {
                    return Err(HarnessError::Config(format!(
                        "axis `{}`: xs and values lengths differ",
                        axis.name
                    )));
                }
            }
            for (i, value) in axis.values.iter().enumerate() {
                let label = axis.xs.as_ref().map_or(value, |xs| &xs[i]);
                let name = format!("{}={}", axis.name, display_value(label));
                let mut tree = self.base.clone();
                apply_set(&mut tree, &format!("{}={}", axis.field, toml_literal(value)))?;
                let cfg = resolve_config(tree)
                    .map_err(|e| HarnessError::Config(format!("cell `{name}`: {e}")))?;
                out.push((name, cfg));
            }
        }
        let mut names: Vec<&str> = out.iter().map(|(n, _)| n.as_str()).collect();
        names.sort_unstable();
        names.dedup();
        if names.len() != out.len() {
            return Err(HarnessError::Config("cell names are not unique".into()));
        }
        Ok(out)
    }
}

fn display_value(v: &toml::Value) -> String {
    match v {
        toml::Value::String(s) => s.clone(),
        other => other.to_string(),
    }
}

fn toml_literal(v: &toml::Value) -> String {
    v.to_string()
}

/// File-system-safe variant of a cell name.
pub fn sanitize(name: &str) -> String {
    name.chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || "=._-".contains(c) {
                c
            } else {
                '_'
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResultRow {
    pub cell: String,
    pub replica: usize,
    pub checkpoint_step: u64,
    pub score: f64,
}

#[derive(Debug, Default)]
pub struct ResultsTable {
    pub rows: Vec<ResultRow>,
    /// (cell, error message) for cells that failed; the sweep continues.
    pub failures: Vec<(String, String)>,
}

impl ResultsTable {
    pub fn write_csv(&self, path: &Path) -> Result<(), HarnessError> {
        let mut out = String::from("cell,replica,checkpoint_step,score\n");
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{},{}\n",
                r.cell, r.replica, r.checkpoint_step, r.score
            ));
        }
        fs::write(path, out)?;
        Ok(())
    }
}

/// Per-cell aggregate: each replica contributes its best checkpoint score,
/// the cell score is the mean of those. Replica order is irrelevant.
pub fn aggregate(rows: &[ResultRow]) -> Vec<(String, f64)> {
    let mut best: BTreeMap<(String, usize), f64> = BTreeMap::new();
    for r in rows {
        let e = best
            .entry((r.cell.clone(), r.replica))
            .or_insert(f64::NEG_INFINITY);
        if r.score > *e {
            *e = r.score;
        }
    }
    let mut sums: BTreeMap<String, (f64, usize)> = BTreeMap::new();
    for ((cell, _), score) in best {
        let e = sums.entry(cell).or_insert((0.0, 0));
        e.0 += score;
        e.1 += 1;
    }
    sums.into_iter()
        .map(|(cell, (sum, n))| (cell, sum / n as f64))
        .collect()
}

/// Run every cell × replica of a sweep, writing per-run directories plus
/// `results.csv` and `summary.csv` under `out_dir`. Cell failures are
/// recorded and skipped.
pub fn run_sweep(spec: &ExperimentSpec, out_dir: &Path) -> Result<ResultsTable, HarnessError> {
    fs::create_dir_all(out_dir)?;
    let cells = spec.cells()?;
    let mut table = ResultsTable::default();
    for (name, cfg) in &cells {
        for replica in 0..spec.replicas {
            let mut cfg = cfg.clone();
            cfg.seed = cfg.seed.wrapping_add(replica as u64);
            let run_dir = out_dir
                .join("runs")
                .join(format!("{}_r{replica}", sanitize(name)));
            match run(&cfg, &run_dir) {
                Ok(out) => {
                    for c in &out.report.checkpoints {
                        table.rows.push(ResultRow {
                            cell: name.clone(),
                            replica,
                            checkpoint_step: c.step,
                            score: c.mean,
                        });
                    }
                }
                Err(e) => table.failures.push((name.clone(), e.to_string())),
            }
        }
    }
    table.write_csv(&out_dir.join("results.csv"))?;
    let mut summary = String::from("cell,score,replicas\n");
    for (cell, score) in aggregate(&table.rows) {
        summary.push_str(&format!("{cell},{score},{}\n", spec.replicas));
    }
    fs::write(out_dir.join("summary.csv"), summary)?;
    if !table.failures.is_empty() {
        let mut failed = String::from("cell,error\n");
        for (cell, err) in &table.failures {
            failed.push_str(&format!("{cell},{}\n", err.replace(',', ";")));
        }
        fs::write(out_dir.join("failures.csv"), failed)?;
    }
    Ok(table)
}

/// Parse a `results.csv`; malformed rows are skipped and counted.
pub fn read_results(path: &Path) -> Result<(Vec<ResultRow>, usize), HarnessError> {
    let text = fs::read_to_string(path)?;
    let mut rows = Vec::new();
    let mut warnings = 0usize;
    for (i, line) in text.lines().enumerate() {
        if i == 0 || line.trim().is_empty() {
            continue;
        }
        let parts: Vec<&str> = line.split(',').collect();
        let parsed = (|| -> Option<ResultRow> {
            if parts.len() != 4 {
                return None;
            }
            Some(ResultRow {
                cell: parts[0].to_string(),
                replica: parts[1].parse().ok()?,
                checkpoint_step: parts[2].parse().ok()?,
                score: parts[3].parse().ok()?,
            })
        })();
        match parsed {
            Some(r) => rows.push(r),
            None => warnings += 1,
        }
    }
    Ok((rows, warnings))
}

/// One point of a report series: min/mean/max over replicas of the
/// per-replica best score at axis position `x`.
#[derive(Debug, Clone, PartialEq)]
pub struct SeriesPoint {
    pub x: String,
    pub mean: f64,
    pub min: f64,
    pub max: f64,
}

/// Group rows by the `<axis>=<x>` cell convention and build one series per
/// axis, x-sorted (numerically where possible).
pub fn build_series(rows: &[ResultRow]) -> BTreeMap<String, Vec<SeriesPoint>> {
    // per (cell, replica) best
    let mut best: BTreeMap<(String, usize), f64> = BTreeMap::new();
    for r in rows {
        let e = best
            .entry((r.cell.clone(), r.replica))
            .or_insert(f64::NEG_INFINITY);
        if r.score > *e {
            *e = r.score;
        }
    }
    let mut grouped: BTreeMap<String, BTreeMap<String, Vec<f64>>> = BTreeMap::new();
    for ((cell, _), score) in best {
        let (axis, x) = match cell.split_once('=') {
            Some((a, x)) => (a.to_string(), x.to_string()),
            None => (cell.clone(), cell),
        };
        grouped.entry(axis).or_default().entry(x).or_default().push(score);
    }
    let mut out = BTreeMap::new();
    for (axis, by_x) in grouped {
        let mut points: Vec<SeriesPoint> = by_x
            .into_iter()
            .map(|(x, scores)| {
                let n = scores.len() as f64;
                SeriesPoint {
                    mean: scores.iter().sum::<f64>() / n,
                    min: scores.iter().cloned().fold(f64::INFINITY, f64::min),
                    max: scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
                    x,
                }
            })
            .collect();
        points.sort_by(|a, b| match (a.x.parse::<f64>(), b.x.parse::<f64>()) {
            (Ok(fa), Ok(fb)) => fa.total_cmp(&fb),
            (Ok(_), Err(_)) => std::cmp::Ordering::Less,
            (Err(_), Ok(_)) => std::cmp::Ordering::Greater,
            (Err(_), Err(_)) => a.x.cmp(&b.x),
        });
        out.insert(axis, points);
    }
    out
}

/// Emit `series_<axis>.csv` files for a results table. Returns the number
/// of malformed input rows skipped.
pub fn write_report(results_path: &Path, out_dir: &Path) -> Result<usize, HarnessError> {
    let (rows, warnings) = read_results(results_path)?;
    fs::create_dir_all(out_dir)?;
    let series = build_series(&rows);
    for (axis, points) in &series {
        let mut csv = String::from("x,mean,min,max\n");
        for p in points {
            csv.push_str(&format!("{},{},{},{}\n", p.x, p.mean, p.min, p.max));
        }
        fs::write(out_dir.join(format!("series_{}.csv", sanitize(axis))), csv)?;
    }
    if series.is_empty() {
        fs::write(out_dir.join("series_empty.csv"), "x,mean,min,max\n")?;
    }
    Ok(warnings)
}

/// One row of the freeze-retrain table.
#[derive(Debug, Clone)]
pub struct FreezeCell {
    pub pretrain: Algorithm,
    pub retrain: Algorithm,
    pub pretrain_best: f64,
    pub retrain_best: f64,
    pub frozen_intact: bool,
}

/// The 2x2 (pretrain algorithm x retrain algorithm) freeze protocol grid;
/// writes `freeze_table.csv` under `out_dir`.
pub fn freeze_grid(
    base: &TrainConfig,
    algos: &[Algorithm],
    frozen: &[bool],
    out_dir: &Path,
) -> Result<Vec<FreezeCell>, HarnessError> {
    fs::create_dir_all(out_dir)?;
    let mut cells = Vec::new();
    for &pre_algo in algos {
        for &re_algo in algos {
            let mut pre = base.clone();
            pre.algo = pre_algo;
            let mut re = base.clone();
            re.algo = re_algo;
            let dir = out_dir.join(sanitize(&format!("{pre_algo}__{re_algo}")));
            let out = freeze_retrain(&pre, &re, frozen, &dir)?;
            if !out.frozen_intact {
                return Err(HarnessError::Train(TrainError::Config(format!(
                    "frozen layers moved in cell {pre_algo} x {re_algo}"
                ))));
            }
            cells.push(FreezeCell {
                pretrain: pre_algo,
                retrain: re_algo,
                pretrain_best: out.pretrain.report.best_mean().unwrap_or(f64::NAN),
                retrain_best: out.retrain.report.best_mean().unwrap_or(f64::NAN),
                frozen_intact: out.frozen_intact,
            });
        }
    }
    let mut csv = String::from("pretrain,retrain,pretrain_best,retrain_best,frozen_intact\n");
    for c in &cells {
        csv.push_str(&format!(
            "{},{},{},{},{}\n",
            c.pretrain, c.retrain, c.pretrain_best, c.retrain_best, c.frozen_intact
        ));
    }
    fs::write(out_dir.join("freeze_table.csv"), csv)?;
    Ok(cells)
}

/// Compute and persist the uniform-random baseline next to sweep outputs.
pub fn baseline_report(
    env_spec: &str,
    episodes: usize,
    seed: u64,
    out_path: Option<&Path>,
) -> Result<f64, HarnessError> {
    let env = crate::gridworld::GridConfig::from_spec(env_spec).map_err(TrainError::from)?;
    let stats = trainer::random_baseline(&env, episodes, seed)?;
    if let Some(path) = out_path {
        fs::write(
            path,
            format!(
                "{{\"env\":\"{env_spec}\",\"episodes\":{episodes},\"random_baseline\":{},\"std\":{}}}\n",
                stats.mean, stats.std
            ),
        )?;
    }
    Ok(stats.mean)
}
