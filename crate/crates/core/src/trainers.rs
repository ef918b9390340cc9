//! Training loops for DDQN, PF-DDQN and EKF-DDQN, plus greedy evaluation.
//!
//! All three share one loop. A single network is shared by every agent, each
//! agent contributing its own observation and transition. After each SGD step
//! the filtered variants correct the online weights:
//!
//! * PF-DDQN shifts every particle by the SGD displacement accumulated since
//!   the last correction, jitters them, reweights on the sampled batch with
//!   the TD targets as observations, resamples when the ESS is low, and writes
//!   the posterior mean back into the online network. Optionally the SGD
//!   weights replace the lowest-weight particle.
//! * EKF-DDQN seeds the filter mean with the SGD weights and runs one
//!   predict plus a sequence of scalar updates over the batch; the covariance
//!   carries over between corrections.
//!
//! Runs are bit-reproducible for a given seed: network initialization,
//! exploration, replay sampling and filter noise each draw from their own
//! stream.

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::ddqn::{self, AgentNets, EpsilonSchedule, TargetRule};
use crate::ekf::{self, EkfConfig, EkfState};
use crate::error::{Error, Result};
use crate::gridworld::{self, Action, Cause, GridMap, OBS_DIM};
use crate::neuralnet::{LayerSpec, NetworkParams, Scratch};
use crate::pathmetrics::{bfs_shortest, path_length, Path};
use crate::pf::{self, Observation, ParticleSet, PfConfig};
use crate::replay::{ReplayBuffer, Transition};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Algorithm {
    #[serde(rename = "ddqn")]
    Ddqn,
    #[serde(rename = "pf-ddqn")]
    PfDdqn,
    #[serde(rename = "ekf-ddqn")]
    EkfDdqn,
}

impl Algorithm {
    pub const ALL: [Algorithm; 3] = [Algorithm::Ddqn, Algorithm::PfDdqn, Algorithm::EkfDdqn];

    pub fn as_str(self) -> &'static str {
        match self {
            Algorithm::Ddqn => "ddqn",
            Algorithm::PfDdqn => "pf-ddqn",
            Algorithm::EkfDdqn => "ekf-ddqn",
        }
    }
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Algorithm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Algorithm::ALL
            .into_iter()
            .find(|a| a.as_str() == s)
            .ok_or_else(|| Error::Usage(format!("unknown algorithm {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub memory_size: usize,
    pub batch_size: usize,
    pub gamma: f64,
    pub learning_rate: f64,
    /// Train steps between target-network copies.
    pub target_sync_every: usize,
    pub epsilon: EpsilonSchedule,
    pub episodes: usize,
    /// Per-episode step cap; `None` uses the map's default.
    pub max_steps: Option<usize>,
    /// Environment ticks between train steps.
    pub train_every: usize,
    /// Train steps between filter corrections.
    pub filter_every: usize,
    /// Minimum buffer fill before training; `None` means `batch_size`.
    pub learn_start: Option<usize>,
    pub seed: u64,
    /// Hidden layer widths; input and output widths are fixed.
    pub hidden: Vec<usize>,
    pub target_rule: TargetRule,
    /// Trailing window and success fraction defining the solution episode.
    pub solution_window: usize,
    pub solution_threshold: f64,
    /// End training at the solution episode.
    pub stop_on_solution: bool,
    /// End training with the episode in which this many train steps ran.
    pub max_train_steps: Option<usize>,
    /// Record the online weights (and the filter batch) after each of the
    /// first `trace_steps` train steps.
    pub trace_steps: usize,
    /// Measure per-episode wall time; when off, `wall_ms` is 0.
    pub record_wall_time: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            memory_size: 10_000,
            batch_size: 500,
            gamma: 0.95,
            learning_rate: 1e-4,
            target_sync_every: 50,
            epsilon: EpsilonSchedule::default(),
            episodes: 1000,
            max_steps: None,
            train_every: 1,
            filter_every: 1,
            learn_start: None,
            seed: 0,
            hidden: vec![32, 32],
            target_rule: TargetRule::Double,
            solution_window: 500,
            solution_threshold: 0.9,
            stop_on_solution: false,
            max_train_steps: None,
            trace_steps: 0,
            record_wall_time: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        for (name, v) in [
            ("memory_size", self.memory_size),
            ("batch_size", self.batch_size),
            ("target_sync_every", self.target_sync_every),
            ("episodes", self.episodes),
            ("train_every", self.train_every),
            ("filter_every", self.filter_every),
            ("solution_window", self.solution_window),
        ] {
            if v == 0 {
                return bad(format!("{name} must be positive"));
            }
        }
        if self.max_steps == Some(0) {
            return bad("max_steps must be positive".into());
        }
        if !(0.0..1.0).contains(&self.gamma) {
            return bad(format!("gamma {} must lie in [0, 1)", self.gamma));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return bad(format!("learning rate {} is invalid", self.learning_rate));
        }
        let e = &self.epsilon;
        if !(0.0..=1.0).contains(&e.initial)
            || !(0.0..=1.0).contains(&e.floor)
            || !(e.decay > 0.0 && e.decay <= 1.0)
        {
            return bad(format!("epsilon schedule {e:?} is invalid"));
        }
        if self.hidden.contains(&0) {
            return bad("hidden widths must be positive".into());
        }
        if self.batch_size > self.memory_size {
            return bad("batch_size exceeds memory_size".into());
        }
        Ok(())
    }

    pub fn layer_spec(&self) -> LayerSpec {
        let mut sizes = vec![OBS_DIM];
        sizes.extend(&self.hidden);
        sizes.push(Action::COUNT);
        LayerSpec::new(sizes).expect("validated widths")
    }

    pub fn learn_start(&self) -> usize {
        self.learn_start.unwrap_or(self.batch_size).max(self.batch_size)
    }
}

/// Which correction, if any, follows each SGD step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FilterConfig {
    None,
    Particle(PfConfig),
    Kalman(EkfConfig),
}

impl FilterConfig {
    pub fn algorithm(&self) -> Algorithm {
        match self {
            FilterConfig::None => Algorithm::Ddqn,
            FilterConfig::Particle(_) => Algorithm::PfDdqn,
            FilterConfig::Kalman(_) => Algorithm::EkfDdqn,
        }
    }

    pub fn default_for(algorithm: Algorithm) -> Self {
        match algorithm {
            Algorithm::Ddqn => FilterConfig::None,
            Algorithm::PfDdqn => FilterConfig::Particle(PfConfig::default()),
            Algorithm::EkfDdqn => FilterConfig::Kalman(EkfConfig::default()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeRecord {
    pub episode: usize,
    pub total_reward: f64,
    pub steps: usize,
    pub outcome: Cause,
    pub reached: Vec<bool>,
    pub epsilon: f64,
    pub wall_ms: f64,
}

impl EpisodeRecord {
    pub fn success(&self) -> bool {
        self.outcome == Cause::AllReached
    }
}

/// Greedy rollout from the start configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GreedyRollout {
    pub paths: Vec<Path>,
    pub success: bool,
    pub outcome: Cause,
    pub steps: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GreedySummary {
    pub success: bool,
    pub outcome: Cause,
    /// Moves made by each agent before arriving (or in total if it did not).
    pub path_moves: Vec<usize>,
    pub path_lengths: Vec<f64>,
    pub reached: Vec<bool>,
    pub bfs_moves: Vec<Option<usize>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub algorithm: Algorithm,
    pub seed: u64,
    pub episodes: usize,
    pub target_hits: usize,
    pub obstacle_hits: usize,
    pub agent_collisions: usize,
    pub timeouts: usize,
    pub solution_episode: Option<usize>,
    /// Per-agent analogue using each agent's own arrival flag.
    pub agent_solution_episodes: Vec<Option<usize>>,
    pub train_steps: usize,
    pub train_wall_ms: f64,
    pub greedy: GreedySummary,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TraceEntry {
    pub train_step: usize,
    pub weights: Vec<f64>,
    /// `(obs, action, target)` of the batch that drove this step.
    pub batch: Vec<(Vec<f64>, usize, f64)>,
}

#[derive(Debug, Clone)]
pub struct TrainResult {
    pub summary: RunSummary,
    pub records: Vec<EpisodeRecord>,
    pub nets: AgentNets,
    pub trace: Vec<TraceEntry>,
}

/// First episode `e` whose trailing window `[e - window + 1, e]` has a success
/// fraction of at least `threshold`. The window must be full.
pub fn solution_episode(successes: &[bool], window: usize, threshold: f64) -> Option<usize> {
    if window == 0 || successes.len() < window {
        return None;
    }
    let needed = threshold * window as f64 - 1e-9;
    let mut count = successes[..window].iter().filter(|s| **s).count();
    if count as f64 >= needed {
        return Some(window - 1);
    }
    for e in window..successes.len() {
        count += usize::from(successes[e]);
        count -= usize::from(successes[e - window]);
        if count as f64 >= needed {
            return Some(e);
        }
    }
    None
}

pub fn run_ddqn(map: &GridMap, cfg: &TrainConfig) -> Result<TrainResult> {
    train(map, cfg, &FilterConfig::None)
}

pub fn run_pf_ddqn(map: &GridMap, cfg: &TrainConfig, pf_cfg: &PfConfig) -> Result<TrainResult> {
    train(map, cfg, &FilterConfig::Particle(*pf_cfg))
}

pub fn run_ekf_ddqn(map: &GridMap, cfg: &TrainConfig, ekf_cfg: &EkfConfig) -> Result<TrainResult> {
    train(map, cfg, &FilterConfig::Kalman(*ekf_cfg))
}

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

// One instance per run; boxing the large variant buys nothing.
#[allow(clippy::large_enum_variant)]
enum Corrector {
    None,
    Particle {
        cfg: PfConfig,
        set: ParticleSet,
        /// Online weights right after the previous correction.
        anchor: Vec<f64>,
        rng: ChaCha8Rng,
        scratch: Scratch,
    },
    Kalman {
        state: EkfState,
    },
}

impl Corrector {
    fn new(filter: &FilterConfig, theta0: &[f64], spec: &LayerSpec, seed: u64) -> Result<Self> {
        Ok(match filter {
            FilterConfig::None => Corrector::None,
            FilterConfig::Particle(cfg) => {
                cfg.validate()?;
                let mut rng = stream(seed, 3);
                let set = pf::init_particles(theta0, cfg, &mut rng);
                Corrector::Particle {
                    cfg: *cfg,
                    set,
                    anchor: theta0.to_vec(),
                    rng,
                    scratch: Scratch::new(spec),
                }
            }
            FilterConfig::Kalman(cfg) => {
                cfg.validate()?;
                Corrector::Kalman {
                    state: EkfState::new(theta0.to_vec(), cfg),
                }
            }
        })
    }

    fn correct(&mut self, online: &mut NetworkParams, batch: &[Observation<'_>]) -> Result<()> {
        let spec = online.spec().clone();
        match self {
            Corrector::None => {}
            Corrector::Particle {
                cfg,
                set,
                anchor,
                rng,
                scratch,
            } => {
                let sgd = online.flatten();
                let drift: Vec<f64> = sgd.iter().zip(anchor.iter()).map(|(a, b)| a - b).collect();
                set.translate(&drift);
                pf::filter_step(
                    set,
                    batch,
                    |theta, obs, action| {
                        scratch
                            .forward(&spec, theta, obs)
                            .expect("observation width checked by network")[action]
                    },
                    cfg,
                    rng,
                )?;
                let estimate = pf::estimate(set);
                online.set_flat(&estimate)?;
                if cfg.inject_sgd {
                    let low = set.lowest_weight_index();
                    set.replace(low, sgd);
                }
                *anchor = estimate;
            }
            Corrector::Kalman { state } => {
                state.theta_hat = online.flatten();
                ekf::ekf_batch_update(state, batch, &spec)?;
                online.set_flat(&state.theta_hat)?;
            }
        }
        Ok(())
    }
}

/// Shared training loop.
pub fn train(map: &GridMap, cfg: &TrainConfig, filter: &FilterConfig) -> Result<TrainResult> {
    cfg.validate()?;
    let spec = cfg.layer_spec();
    let max_steps = cfg.max_steps.unwrap_or_else(|| map.default_max_steps());
    let mut explore_rng = stream(cfg.seed, 1);
    let mut replay_rng = stream(cfg.seed, 2);

    let online = NetworkParams::init(spec.clone(), cfg.seed);
    let mut corrector = Corrector::new(filter, online.as_slice(), &spec, cfg.seed)?;
    let mut nets = AgentNets::new(online);
    let mut buffer = ReplayBuffer::new(cfg.memory_size);
    let learn_start = cfg.learn_start();
    let m = map.agent_count();

    let mut records = Vec::with_capacity(cfg.episodes);
    let mut trace = Vec::new();
    let mut env_steps = 0usize;
    let mut train_steps = 0usize;
    let run_clock = Instant::now();
    let mut successes = Vec::with_capacity(cfg.episodes);
    let mut window_hits = 0usize;

    for episode in 0..cfg.episodes {
        let clock = Instant::now();
        let epsilon = cfg.epsilon.at(episode);
        let mut state = gridworld::reset(map);
        let mut total_reward = 0.0;
        let outcome = loop {
            let obs: Vec<Option<Vec<f64>>> = (0..m)
                .map(|i| state.active(i).then(|| gridworld::observe(map, &state, i)))
                .collect();
            let actions = obs
                .iter()
                .map(|o| match o {
                    Some(o) => ddqn::select_action(&nets.online, o, epsilon, &mut explore_rng),
                    None => Ok(Action::Stay),
                })
                .collect::<Result<Vec<_>>>()?;
            let (next, out) = gridworld::step(map, &state, &actions, max_steps)?;
            total_reward += out.rewards.iter().sum::<f64>();
            let collided = matches!(out.cause, Cause::ObstacleCollision | Cause::AgentCollision);
            for (i, o) in obs.into_iter().enumerate() {
                if let Some(o) = o {
                    buffer.push(Transition {
                        obs: o,
                        action: actions[i],
                        reward: out.rewards[i],
                        next_obs: gridworld::observe(map, &next, i),
                        done: next.reached[i] || collided,
                    });
                }
            }
            env_steps += 1;
            state = next;

            let budget_left = cfg.max_train_steps.is_none_or(|m| train_steps < m);
            if budget_left && buffer.len() >= learn_start && env_steps.is_multiple_of(cfg.train_every) {
                let idx = buffer.sample_indices(cfg.batch_size, &mut replay_rng)?;
                let batch: Vec<&Transition> = idx.iter().map(|&i| buffer.get(i).unwrap()).collect();
                let step = ddqn::train_step(
                    &mut nets,
                    &batch,
                    cfg.gamma,
                    cfg.learning_rate,
                    cfg.target_rule,
                )?;
                train_steps += 1;
                let observations: Vec<Observation> = batch
                    .iter()
                    .zip(&step.targets)
                    .map(|(t, z)| Observation {
                        obs: &t.obs,
                        action: t.action.index(),
                        z: *z,
                    })
                    .collect();
                if train_steps.is_multiple_of(cfg.filter_every) {
                    corrector.correct(&mut nets.online, &observations)?;
                }
                if train_steps.is_multiple_of(cfg.target_sync_every) {
                    nets.sync_target();
                }
                if train_steps <= cfg.trace_steps {
                    trace.push(TraceEntry {
                        train_step: train_steps,
                        weights: nets.online.flatten(),
                        batch: observations
                            .iter()
                            .map(|o| (o.obs.to_vec(), o.action, o.z))
                            .collect(),
                    });
                }
            }
            if out.terminal {
                break out.cause;
            }
        };
        let wall_ms = if cfg.record_wall_time {
            clock.elapsed().as_secs_f64() * 1e3
        } else {
            0.0
        };
        let record = EpisodeRecord {
            episode,
            total_reward,
            steps: state.step,
            outcome,
            reached: state.reached.clone(),
            epsilon,
            wall_ms,
        };
        let success = record.success();
        records.push(record);
        successes.push(success);
        window_hits += usize::from(success);
        if successes.len() > cfg.solution_window {
            window_hits -= usize::from(successes[successes.len() - 1 - cfg.solution_window]);
        }
        if cfg.max_train_steps.is_some_and(|m| train_steps >= m) {
            break;
        }
        if cfg.stop_on_solution
            && successes.len() >= cfg.solution_window
            && window_hits as f64 >= cfg.solution_threshold * cfg.solution_window as f64 - 1e-9
        {
            break;
        }
    }
    let train_wall_ms = run_clock.elapsed().as_secs_f64() * 1e3;

    let rollout = evaluate_greedy(&nets.online, map, max_steps)?;
    let summary = summarize(
        map,
        cfg,
        filter.algorithm(),
        &records,
        &rollout,
        train_steps,
        if cfg.record_wall_time { train_wall_ms } else { 0.0 },
    );
    Ok(TrainResult {
        summary,
        records,
        nets,
        trace,
    })
}

fn summarize(
    map: &GridMap,
    cfg: &TrainConfig,
    algorithm: Algorithm,
    records: &[EpisodeRecord],
    rollout: &GreedyRollout,
    train_steps: usize,
    train_wall_ms: f64,
) -> RunSummary {
    let count = |c: Cause| records.iter().filter(|r| r.outcome == c).count();
    let successes: Vec<bool> = records.iter().map(EpisodeRecord::success).collect();
    let agent_solution_episodes = (0..map.agent_count())
        .map(|i| {
            let hits: Vec<bool> = records.iter().map(|r| r.reached[i]).collect();
            solution_episode(&hits, cfg.solution_window, cfg.solution_threshold)
        })
        .collect();
    RunSummary {
        algorithm,
        seed: cfg.seed,
        episodes: records.len(),
        target_hits: count(Cause::AllReached),
        obstacle_hits: count(Cause::ObstacleCollision),
        agent_collisions: count(Cause::AgentCollision),
        timeouts: count(Cause::Timeout),
        solution_episode: solution_episode(&successes, cfg.solution_window, cfg.solution_threshold),
        agent_solution_episodes,
        train_steps,
        train_wall_ms,
        greedy: greedy_summary(map, rollout),
    }
}

pub fn greedy_summary(map: &GridMap, rollout: &GreedyRollout) -> GreedySummary {
    let mut path_moves = Vec::new();
    let mut path_lengths = Vec::new();
    let mut reached = Vec::new();
    let mut bfs_moves = Vec::new();
    for (i, path) in rollout.paths.iter().enumerate() {
        let target = map.targets()[i];
        let arrival = path.arrival_tick(target);
        let upto = arrival.map_or(path.len(), |t| t + 1);
        let trimmed = Path::new(path.waypoints[..upto].to_vec());
        path_moves.push(trimmed.move_count());
        path_lengths.push(path_length(&trimmed));
        reached.push(arrival.is_some());
        bfs_moves.push(bfs_shortest(map, map.starts()[i], target));
    }
    GreedySummary {
        success: rollout.success,
        outcome: rollout.outcome,
        path_moves,
        path_lengths,
        reached,
        bfs_moves,
    }
}

/// Runs the greedy policy (epsilon = 0) from the start configuration.
pub fn evaluate_greedy(online: &NetworkParams, map: &GridMap, max_steps: usize) -> Result<GreedyRollout> {
    let m = map.agent_count();
    let mut state = gridworld::reset(map);
    let mut paths: Vec<Vec<_>> = state.positions.iter().map(|p| vec![*p]).collect();
    // Never drawn from: epsilon is zero.
    let mut no_rng = ChaCha8Rng::seed_from_u64(0);
    let outcome = loop {
        let actions = (0..m)
            .map(|i| {
                if state.active(i) {
                    let obs = gridworld::observe(map, &state, i);
                    ddqn::select_action(online, &obs, 0.0, &mut no_rng)
                } else {
                    Ok(Action::Stay)
                }
            })
            .collect::<Result<Vec<_>>>()?;
        let (next, out) = gridworld::step(map, &state, &actions, max_steps)?;
        for (path, p) in paths.iter_mut().zip(&next.positions) {
            path.push(*p);
        }
        state = next;
        if out.terminal {
            break out.cause;
        }
    };
    Ok(GreedyRollout {
        paths: paths.into_iter().map(Path::new).collect(),
        success: outcome == Cause::AllReached,
        outcome,
        steps: state.step,
    })
}
