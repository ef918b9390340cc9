//! Command-line front end: run specs, seed sweeps, artifact files and the
//! cross-run comparison report.
//!
//! Settings resolve in three layers: command-line flags, then a flat JSON
//! config file whose keys mirror the flag names, then the built-in defaults.
//!
//! Each seed writes into `<out>/seed_<seed>/`:
//!
//! | file          | contents                                              |
//! |---------------|-------------------------------------------------------|
//! | `metrics.csv` | one row per episode                                   |
//! | `curve.csv`   | trailing mean of the episode reward (window 500)      |
//! | `summary.json`| run summary, echoed config, map path                  |
//! | `paths.json`  | greedy rollout of the final network                   |
//!
//! `--save-checkpoint` adds `checkpoint.json` with the online weights.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::ddqn::TargetRule;
use crate::ekf::{CovarianceMode, EkfConfig};
use crate::error::{Error, Result};
use crate::gridworld::{parse_map, GridMap};
use crate::neuralnet::NetworkParams;
use crate::pf::PfConfig;
use crate::trainers::{
    evaluate_greedy, greedy_summary, train, Algorithm, EpisodeRecord, FilterConfig,
    GreedyRollout, GreedySummary, RunSummary, TrainConfig,
};

pub const METRICS_HEADER: [&str; 6] = ["episode", "total_reward", "steps", "outcome", "epsilon", "wall_ms"];
pub const CURVE_HEADER: [&str; 2] = ["episode", "trailing_mean_reward"];
pub const CURVE_WINDOW: usize = 500;

#[derive(Debug, Parser)]
#[command(name = "agvlab", version, about = "Multi-AGV grid path planning with DDQN, PF-DDQN and EKF-DDQN")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
#[allow(clippy::large_enum_variant)]
pub enum Command {
    /// Train one algorithm over one or more seeds.
    Train(TrainArgs),
    /// Greedy rollout of a saved checkpoint.
    Eval(EvalArgs),
    /// Summarize finished runs per algorithm.
    Compare(CompareArgs),
}

#[derive(Debug, Clone, Parser)]
#[command(name = "train")]
pub struct TrainArgs {
    /// JSON object whose keys mirror the flag names.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[command(flatten)]
    pub settings: Settings,
}

/// Every tunable, as a flag or a config-file key.
#[derive(Debug, Clone, Default, PartialEq, Args, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
pub struct Settings {
    /// ddqn, pf-ddqn or ekf-ddqn.
    #[arg(long)]
    pub algorithm: Option<String>,
    #[arg(long)]
    pub map: Option<PathBuf>,
    #[arg(long)]
    pub episodes: Option<usize>,
    /// Comma-separated seeds.
    #[arg(long, value_delimiter = ',')]
    #[serde(default, deserialize_with = "one_or_many")]
    pub seed: Option<Vec<u64>>,
    /// Output directory; defaults to `runs/<algorithm>`.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub gamma: Option<f64>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub batch: Option<usize>,
    #[arg(long)]
    pub memory: Option<usize>,
    /// Train steps between target-network copies.
    #[arg(long)]
    pub sync: Option<usize>,
    #[arg(long)]
    pub eps_initial: Option<f64>,
    #[arg(long)]
    pub eps_decay: Option<f64>,
    #[arg(long)]
    pub eps_floor: Option<f64>,
    #[arg(long)]
    pub max_steps: Option<usize>,
    #[arg(long)]
    pub train_every: Option<usize>,
    #[arg(long)]
    pub filter_every: Option<usize>,
    #[arg(long)]
    pub learn_start: Option<usize>,
    /// Hidden layer widths, comma-separated.
    #[arg(long, value_delimiter = ',')]
    pub hidden: Option<Vec<usize>>,
    /// double or max.
    #[arg(long)]
    pub target_rule: Option<String>,
    #[arg(long)]
    pub solution_window: Option<usize>,
    #[arg(long)]
    pub solution_threshold: Option<f64>,
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub stop_on_solution: Option<bool>,
    #[arg(long)]
    pub max_train_steps: Option<usize>,
    /// Write 0 in the wall_ms column so reruns produce identical files.
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub no_timing: Option<bool>,
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub save_checkpoint: Option<bool>,
    #[arg(long)]
    pub particles: Option<usize>,
    #[arg(long)]
    pub proc_sigma: Option<f64>,
    #[arg(long)]
    pub obs_sigma: Option<f64>,
    #[arg(long)]
    pub init_sigma: Option<f64>,
    /// Defaults to half the particle count.
    #[arg(long)]
    pub ess_threshold: Option<f64>,
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub no_inject: Option<bool>,
    #[arg(long)]
    pub ekf_p0: Option<f64>,
    #[arg(long)]
    pub ekf_q: Option<f64>,
    #[arg(long)]
    pub ekf_r: Option<f64>,
    /// auto, full or diagonal.
    #[arg(long)]
    pub ekf_mode: Option<String>,
}

fn one_or_many<'de, D>(d: D) -> std::result::Result<Option<Vec<u64>>, D::Error>
where
    D: serde::Deserializer<'de>,
{
    #[derive(Deserialize)]
    #[serde(untagged)]
    enum OneOrMany {
        One(u64),
        Many(Vec<u64>),
    }
    Ok(Option::<OneOrMany>::deserialize(d)?.map(|v| match v {
        OneOrMany::One(s) => vec![s],
        OneOrMany::Many(s) => s,
    }))
}

macro_rules! layer {
    ($hi:expr, $lo:expr, $($field:ident),+) => {
        Settings { $($field: $hi.$field.or($lo.$field),)+ }
    };
}

impl Settings {
    /// Fields set here win over `other`.
    pub fn over(self, other: Settings) -> Settings {
        layer!(
            self, other, algorithm, map, episodes, seed, out, gamma, lr, batch, memory, sync,
            eps_initial, eps_decay, eps_floor, max_steps, train_every, filter_every, learn_start,
            hidden, target_rule, solution_window, solution_threshold, stop_on_solution, max_train_steps, no_timing,
            save_checkpoint, particles, proc_sigma, obs_sigma, init_sigma, ess_threshold,
            no_inject, ekf_p0, ekf_q, ekf_r, ekf_mode
        )
    }
}

#[derive(Debug, Clone, Parser)]
#[command(name = "eval")]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub map: PathBuf,
    #[arg(long)]
    pub max_steps: Option<usize>,
}

#[derive(Debug, Clone, Parser)]
#[command(name = "compare")]
pub struct CompareArgs {
    /// Run directories (or single seed directories).
    #[arg(required = true, num_args = 1..)]
    pub dirs: Vec<PathBuf>,
}

/// A fully resolved training request.
#[derive(Debug, Clone, PartialEq)]
pub struct RunSpec {
    pub algorithm: Algorithm,
    pub map_path: PathBuf,
    pub train: TrainConfig,
    pub pf: PfConfig,
    pub ekf: EkfConfig,
    pub seeds: Vec<u64>,
    pub out_dir: PathBuf,
    pub save_checkpoint: bool,
}

impl RunSpec {
    pub fn filter(&self) -> FilterConfig {
        match self.algorithm {
            Algorithm::Ddqn => FilterConfig::None,
            Algorithm::PfDdqn => FilterConfig::Particle(self.pf),
            Algorithm::EkfDdqn => FilterConfig::Kalman(self.ekf),
        }
    }
}

/// Parses the arguments that follow `train`.
pub fn parse_run_spec<I, T>(argv: I) -> Result<RunSpec>
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let args = TrainArgs::try_parse_from(std::iter::once("train".into()).chain(argv.into_iter().map(Into::into)))
        .map_err(|e| Error::Usage(e.to_string()))?;
    resolve(args)
}

/// Layers flags over the config file over defaults.
pub fn resolve(args: TrainArgs) -> Result<RunSpec> {
    let file = match &args.config {
        Some(path) => {
            let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            serde_json::from_str::<Settings>(&text)
                .map_err(|e| Error::Usage(format!("{}: {e}", path.display())))?
        }
        None => Settings::default(),
    };
    let s = args.settings.over(file);

    let algorithm: Algorithm = s
        .algorithm
        .as_deref()
        .ok_or_else(|| Error::Usage("missing --algorithm".into()))?
        .parse()?;
    let map_path = s.map.clone().ok_or_else(|| Error::Usage("missing --map".into()))?;
    if !map_path.is_file() {
        return Err(Error::Usage(format!("map file {} does not exist", map_path.display())));
    }
    let seeds = s.seed.clone().ok_or_else(|| Error::Usage("missing --seed".into()))?;
    if seeds.is_empty() {
        return Err(Error::Usage("--seed needs at least one value".into()));
    }

    let mut train = TrainConfig {
        episodes: s.episodes.ok_or_else(|| Error::Usage("missing --episodes".into()))?,
        ..TrainConfig::default()
    };
    set(&mut train.gamma, s.gamma);
    set(&mut train.learning_rate, s.lr);
    set(&mut train.batch_size, s.batch);
    set(&mut train.memory_size, s.memory);
    set(&mut train.target_sync_every, s.sync);
    set(&mut train.epsilon.initial, s.eps_initial);
    set(&mut train.epsilon.decay, s.eps_decay);
    set(&mut train.epsilon.floor, s.eps_floor);
    train.max_steps = s.max_steps.or(train.max_steps);
    set(&mut train.train_every, s.train_every);
    set(&mut train.filter_every, s.filter_every);
    train.learn_start = s.learn_start.or(train.learn_start);
    set(&mut train.hidden, s.hidden.clone());
    if let Some(rule) = &s.target_rule {
        train.target_rule = match rule.as_str() {
            "double" => TargetRule::Double,
            "max" => TargetRule::Max,
            other => return Err(Error::Usage(format!("unknown target rule {other:?}"))),
        };
    }
    set(&mut train.solution_window, s.solution_window);
    set(&mut train.solution_threshold, s.solution_threshold);
    set(&mut train.stop_on_solution, s.stop_on_solution);
    train.max_train_steps = s.max_train_steps.or(train.max_train_steps);
    train.record_wall_time = !s.no_timing.unwrap_or(false);
    train.validate()?;

    let mut pf = PfConfig::default();
    if let Some(n) = s.particles {
        pf = pf.with_particles(n);
    }
    set(&mut pf.process_sigma, s.proc_sigma);
    set(&mut pf.obs_sigma, s.obs_sigma);
    set(&mut pf.init_sigma, s.init_sigma);
    set(&mut pf.ess_threshold, s.ess_threshold);
    pf.inject_sgd = !s.no_inject.unwrap_or(false);

    let mut ekf = EkfConfig::default();
    set(&mut ekf.p0, s.ekf_p0);
    set(&mut ekf.q_proc, s.ekf_q);
    set(&mut ekf.r_obs, s.ekf_r);
    if let Some(mode) = &s.ekf_mode {
        ekf.mode = match mode.as_str() {
            "auto" => CovarianceMode::Auto,
            "full" => CovarianceMode::Full,
            "diagonal" => CovarianceMode::Diagonal,
            other => return Err(Error::Usage(format!("unknown ekf mode {other:?}"))),
        };
    }
    match algorithm {
        Algorithm::Ddqn => {}
        Algorithm::PfDdqn => pf.validate()?,
        Algorithm::EkfDdqn => ekf.validate()?,
    }

    Ok(RunSpec {
        algorithm,
        out_dir: s
            .out
            .clone()
            .unwrap_or_else(|| PathBuf::from("runs").join(algorithm.as_str())),
        map_path,
        train,
        pf,
        ekf,
        seeds,
        save_checkpoint: s.save_checkpoint.unwrap_or(false),
    })
}

fn set<T>(slot: &mut T, value: Option<T>) {
    if let Some(v) = value {
        *slot = v;
    }
}

/// Contents of `summary.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryFile {
    pub map: PathBuf,
    pub summary: RunSummary,
    pub config: TrainConfig,
    pub filter: FilterConfig,
}

pub fn load_map(path: &Path) -> Result<GridMap> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_map(&text)
}

pub fn seed_dir(out: &Path, seed: u64) -> PathBuf {
    out.join(format!("seed_{seed}"))
}

/// Trains every seed of `spec` and writes its artifacts. Returns the seed
/// directories in seed order.
pub fn run_experiment(spec: &RunSpec) -> Result<Vec<PathBuf>> {
    let map = load_map(&spec.map_path)?;
    let filter = spec.filter();
    let mut dirs = Vec::with_capacity(spec.seeds.len());
    for &seed in &spec.seeds {
        let cfg = TrainConfig {
            seed,
            ..spec.train.clone()
        };
        let result = train(&map, &cfg, &filter)?;
        let dir = seed_dir(&spec.out_dir, seed);
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        write_metrics(&dir.join("metrics.csv"), &result.records)?;
        write_curve(&dir.join("curve.csv"), &result.records)?;
        let summary = SummaryFile {
            map: spec.map_path.clone(),
            summary: result.summary,
            config: cfg.clone(),
            filter,
        };
        write_json(&dir.join("summary.json"), &summary)?;
        let max_steps = cfg.max_steps.unwrap_or_else(|| map.default_max_steps());
        let rollout = evaluate_greedy(&result.nets.online, &map, max_steps)?;
        write_json(&dir.join("paths.json"), &rollout)?;
        if spec.save_checkpoint {
            result.nets.online.save_checkpoint(&dir.join("checkpoint.json"))?;
        }
        dirs.push(dir);
    }
    Ok(dirs)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

pub fn write_metrics(path: &Path, records: &[EpisodeRecord]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(METRICS_HEADER)?;
    for r in records {
        w.write_record([
            r.episode.to_string(),
            r.total_reward.to_string(),
            r.steps.to_string(),
            r.outcome.to_string(),
            r.epsilon.to_string(),
            format!("{:.3}", r.wall_ms),
        ])?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Mean of the last `window` values ending at each index (fewer at the start).
pub fn trailing_means(values: &[f64], window: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(values.len());
    let mut sum = 0.0;
    for (i, v) in values.iter().enumerate() {
        sum += v;
        if i >= window {
            sum -= values[i - window];
        }
        out.push(sum / (i + 1).min(window) as f64);
    }
    out
}

pub fn write_curve(path: &Path, records: &[EpisodeRecord]) -> Result<()> {
    let rewards: Vec<f64> = records.iter().map(|r| r.total_reward).collect();
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(CURVE_HEADER)?;
    for (r, m) in records.iter().zip(trailing_means(&rewards, CURVE_WINDOW)) {
        w.write_record([r.episode.to_string(), m.to_string()])?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Output of `eval`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub rollout: GreedyRollout,
    pub summary: GreedySummary,
}

pub fn eval_checkpoint(args: &EvalArgs) -> Result<EvalReport> {
    let net = NetworkParams::load_checkpoint(&args.checkpoint)?;
    let map = load_map(&args.map)?;
    let rollout = evaluate_greedy(&net, &map, args.max_steps.unwrap_or_else(|| map.default_max_steps()))?;
    Ok(EvalReport {
        summary: greedy_summary(&map, &rollout),
        rollout,
    })
}

/// Finds `summary.json` files in each directory or its immediate children.
pub fn load_summaries(dirs: &[PathBuf]) -> Result<Vec<SummaryFile>> {
    let mut out = Vec::new();
    for dir in dirs {
        let mut candidates = vec![dir.join("summary.json")];
        if let Ok(entries) = fs::read_dir(dir) {
            let mut subs: Vec<PathBuf> = entries
                .filter_map(|e| e.ok().map(|e| e.path().join("summary.json")))
                .collect();
            subs.sort();
            candidates.extend(subs);
        }
        let mut found = false;
        for path in candidates.into_iter().filter(|p| p.is_file()) {
            let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
            out.push(serde_json::from_str(&text)?);
            found = true;
        }
        if !found {
            return Err(Error::MissingRun(dir.clone()));
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AlgorithmRow {
    pub algorithm: Algorithm,
    pub runs: usize,
    pub solved: usize,
    /// Runs that never reached a solution episode.
    pub unsolved: usize,
    pub median_solution: Option<f64>,
    pub min_solution: Option<usize>,
    pub max_solution: Option<usize>,
    pub target_hits: usize,
    pub obstacle_hits: usize,
    pub agent_collisions: usize,
    pub timeouts: usize,
    /// Mean greedy move count over the BFS optimum, over agents that arrived.
    pub path_ratio: Option<f64>,
    pub mean_wall_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WinRate {
    pub algorithm: Algorithm,
    pub wins: f64,
    pub pairs: usize,
}

impl WinRate {
    pub fn rate(&self) -> Option<f64> {
        (self.pairs > 0).then(|| self.wins / self.pairs as f64)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ComparisonReport {
    pub rows: Vec<AlgorithmRow>,
    /// Each filtered variant against DDQN on the same seeds.
    pub win_rates: Vec<WinRate>,
}

pub fn median(values: &[usize]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_unstable();
    let n = v.len();
    Some(if n % 2 == 1 {
        v[n / 2] as f64
    } else {
        (v[n / 2 - 1] + v[n / 2]) as f64 / 2.0
    })
}

/// Win credit of `a` over `b` on solution episodes: lower wins, reaching a
/// solution beats not reaching one, ties count half.
pub fn win_credit(a: Option<usize>, b: Option<usize>) -> f64 {
    match (a, b) {
        (Some(x), Some(y)) if x < y => 1.0,
        (Some(x), Some(y)) if x > y => 0.0,
        (Some(_), None) => 1.0,
        (None, Some(_)) => 0.0,
        _ => 0.5,
    }
}

pub fn compare_runs(runs: &[SummaryFile]) -> ComparisonReport {
    let mut by_alg: BTreeMap<&str, (Algorithm, Vec<&RunSummary>)> = BTreeMap::new();
    for r in runs {
        let a = r.summary.algorithm;
        by_alg.entry(a.as_str()).or_insert((a, Vec::new())).1.push(&r.summary);
    }
    let rows = by_alg
        .values()
        .map(|(algorithm, sums)| {
            let solved: Vec<usize> = sums.iter().filter_map(|s| s.solution_episode).collect();
            let ratios: Vec<f64> = sums
                .iter()
                .flat_map(|s| {
                    let g = &s.greedy;
                    (0..g.path_moves.len()).filter_map(move |i| match g.bfs_moves[i] {
                        Some(b) if g.reached[i] && b > 0 => Some(g.path_moves[i] as f64 / b as f64),
                        _ => None,
                    })
                })
                .collect();
            AlgorithmRow {
                algorithm: *algorithm,
                runs: sums.len(),
                solved: solved.len(),
                unsolved: sums.len() - solved.len(),
                median_solution: median(&solved),
                min_solution: solved.iter().min().copied(),
                max_solution: solved.iter().max().copied(),
                target_hits: sums.iter().map(|s| s.target_hits).sum(),
                obstacle_hits: sums.iter().map(|s| s.obstacle_hits).sum(),
                agent_collisions: sums.iter().map(|s| s.agent_collisions).sum(),
                timeouts: sums.iter().map(|s| s.timeouts).sum(),
                path_ratio: (!ratios.is_empty()).then(|| ratios.iter().sum::<f64>() / ratios.len() as f64),
                mean_wall_s: sums.iter().map(|s| s.train_wall_ms).sum::<f64>() / sums.len() as f64 / 1e3,
            }
        })
        .collect();

    let baseline: BTreeMap<u64, Option<usize>> = runs
        .iter()
        .filter(|r| r.summary.algorithm == Algorithm::Ddqn)
        .rev()
        .map(|r| (r.summary.seed, r.summary.solution_episode))
        .collect();
    let win_rates = [Algorithm::PfDdqn, Algorithm::EkfDdqn]
        .into_iter()
        .filter(|a| by_alg.contains_key(a.as_str()))
        .map(|algorithm| {
            let mut wins = 0.0;
            let mut pairs = 0;
            for r in runs.iter().filter(|r| r.summary.algorithm == algorithm) {
                if let Some(base) = baseline.get(&r.summary.seed) {
                    wins += win_credit(r.summary.solution_episode, *base);
                    pairs += 1;
                }
            }
            WinRate { algorithm, wins, pairs }
        })
        .collect();
    ComparisonReport { rows, win_rates }
}

pub fn compare(dirs: &[PathBuf]) -> Result<ComparisonReport> {
    Ok(compare_runs(&load_summaries(dirs)?))
}

fn opt<T: std::fmt::Display>(v: Option<T>) -> String {
    v.map_or_else(|| "none".to_string(), |v| v.to_string())
}

impl ComparisonReport {
    pub fn to_table(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(
            s,
            "{:<9} {:>4} {:>7} {:>7} {:>7} {:>7} {:>7} {:>8} {:>8} {:>8} {:>8} {:>7} {:>9}",
            "algorithm", "runs", "solved", "median", "min", "max", "none", "targets", "obstacle",
            "agents", "timeouts", "ratio", "wall_s"
        );
        for r in &self.rows {
            let _ = writeln!(
                s,
                "{:<9} {:>4} {:>7} {:>7} {:>7} {:>7} {:>7} {:>8} {:>8} {:>8} {:>8} {:>7} {:>9.1}",
                r.algorithm.as_str(),
                r.runs,
                r.solved,
                opt(r.median_solution),
                opt(r.min_solution),
                opt(r.max_solution),
                r.unsolved,
                r.target_hits,
                r.obstacle_hits,
                r.agent_collisions,
                r.timeouts,
                opt(r.path_ratio.map(|v| format!("{v:.3}"))),
                r.mean_wall_s
            );
        }
        for w in &self.win_rates {
            let _ = writeln!(
                s,
                "{} vs ddqn: {} of {} paired seeds (rate {})",
                w.algorithm,
                w.wins,
                w.pairs,
                opt(w.rate().map(|v| format!("{v:.3}")))
            );
        }
        s
    }
}
