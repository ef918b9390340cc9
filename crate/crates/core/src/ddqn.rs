//! Double-DQN learning rules.
//!
//! The online network picks the greedy next action and the target network
//! values it. The single-estimator rule (target network both picks and values)
//! is kept behind [`TargetRule::Max`] for ablations.
//!
//! Updates descend on `L = 0.5 * sum (Q(s, a) - y)^2`, so the step is
//! `theta += lr * sum (y - Q) * dQ/dtheta`.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::gridworld::Action;
use crate::neuralnet::{NetworkParams, Scratch};
use crate::replay::Transition;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TargetRule {
    #[default]
    Double,
    Max,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AgentNets {
    pub online: NetworkParams,
    pub target: NetworkParams,
}

impl AgentNets {
    pub fn new(online: NetworkParams) -> Self {
        Self {
            target: online.clone(),
            online,
        }
    }

    pub fn sync_target(&mut self) {
        self.target.clone_from(&self.online);
    }
}

/// Per-episode multiplicative decay clipped at a floor.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpsilonSchedule {
    pub initial: f64,
    pub decay: f64,
    pub floor: f64,
}

impl Default for EpsilonSchedule {
    fn default() -> Self {
        Self {
            initial: 1.0,
            decay: 0.9995,
            floor: 0.001,
        }
    }
}

impl EpsilonSchedule {
    pub fn at(&self, episode: usize) -> f64 {
        let e = self.initial * self.decay.powf(episode as f64);
        e.max(self.floor).min(1.0)
    }
}

/// Index of the largest value; ties go to the lowest index.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate().skip(1) {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

/// Epsilon-greedy over the online network. No randomness is drawn when
/// `epsilon` is zero.
pub fn select_action<R: Rng + ?Sized>(
    online: &NetworkParams,
    obs: &[f64],
    epsilon: f64,
    rng: &mut R,
) -> Result<Action> {
    if epsilon > 0.0 && rng.random::<f64>() < epsilon {
        let i = rng.random_range(0..Action::COUNT);
        return Ok(Action::ALL[i]);
    }
    let q = online.forward(obs)?;
    Ok(Action::ALL[argmax(&q)])
}

/// Bootstrapped regression targets for a batch.
pub fn compute_targets(
    nets: &AgentNets,
    batch: &[&Transition],
    gamma: f64,
    rule: TargetRule,
) -> Result<Vec<f64>> {
    let spec = nets.online.spec();
    let mut online_scratch = Scratch::new(spec);
    let mut target_scratch = Scratch::new(spec);
    batch
        .iter()
        .map(|t| {
            if t.done || gamma == 0.0 {
                return Ok(t.reward);
            }
            let q_target = target_scratch.forward(spec, nets.target.as_slice(), &t.next_obs)?;
            let next_value = match rule {
                TargetRule::Double => {
                    let q_online =
                        online_scratch.forward(spec, nets.online.as_slice(), &t.next_obs)?;
                    q_target[argmax(q_online)]
                }
                TargetRule::Max => q_target.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            };
            Ok(t.reward + gamma * next_value)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainStep {
    /// Loss at the pre-update parameters.
    pub loss: f64,
    /// The regression targets used, one per batch entry.
    pub targets: Vec<f64>,
}

/// One SGD step of the online network toward the double-DQN targets.
pub fn train_step(
    nets: &mut AgentNets,
    batch: &[&Transition],
    gamma: f64,
    lr: f64,
    rule: TargetRule,
) -> Result<TrainStep> {
    let targets = compute_targets(nets, batch, gamma, rule)?;
    let spec = nets.online.spec().clone();
    let theta = nets.online.as_slice();
    let mut grad = vec![0.0; theta.len()];
    let mut scratch = Scratch::new(&spec);
    let mut loss = 0.0;
    for (t, y) in batch.iter().zip(&targets) {
        let a = t.action.index();
        let q = scratch.forward(&spec, theta, &t.obs)?[a];
        let residual = q - y;
        loss += 0.5 * residual * residual;
        scratch.backward(&spec, theta, a, residual, &mut grad);
    }
    nets.online.sgd_step_in_place(&grad, lr)?;
    Ok(TrainStep { loss, targets })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::neuralnet::LayerSpec;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// 1 -> 9 linear net whose outputs equal the biases.
    fn bias_net(values: [f64; 9]) -> NetworkParams {
        let spec = LayerSpec::new(vec![1, 9]).unwrap();
        let mut theta = vec![0.0; 9];
        theta.extend(values);
        NetworkParams::unflatten(&spec, theta).unwrap()
    }

    fn transition(reward: f64, done: bool) -> Transition {
        Transition {
            obs: vec![0.0],
            action: Action::N,
            reward,
            next_obs: vec![0.0],
            done,
        }
    }

    #[test]
    fn greedy_choice_and_ties() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut q = [0.0; 9];
        q[5] = 3.0;
        assert_eq!(select_action(&bias_net(q), &[0.0], 0.0, &mut rng).unwrap(), Action::SE);
        assert_eq!(
            select_action(&bias_net([1.0; 9]), &[0.0], 0.0, &mut rng).unwrap(),
            Action::N
        );
    }

    #[test]
    fn full_exploration_is_uniform() {
        let net = bias_net([0.0; 9]);
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let n = 100_000;
        let mut counts = [0usize; 9];
        for _ in 0..n {
            counts[select_action(&net, &[0.0], 1.0, &mut rng).unwrap().index()] += 1;
        }
        let p = 1.0 / 9.0;
        let sigma = (n as f64 * p * (1.0 - p)).sqrt();
        for c in counts {
            assert!((c as f64 - n as f64 * p).abs() <= 3.0 * sigma, "{counts:?}");
        }
    }

    #[test]
    fn epsilon_schedule() {
        let s = EpsilonSchedule::default();
        assert_eq!(s.at(0), 1.0);
        assert!((s.at(1) - 0.9995).abs() < 1e-15);
        let mut prev = s.at(0);
        for e in (0..40_000).step_by(97) {
            let v = s.at(e);
            assert!(v <= prev && v >= s.floor && v <= 1.0);
            prev = v;
        }
        // ln(0.001) / ln(0.9995) is about 13_812
        assert!(s.at(13_700) > s.floor);
        assert_eq!(s.at(13_900), s.floor);
    }

    #[test]
    fn terminal_and_zero_gamma_targets() {
        let nets = AgentNets::new(bias_net([7.0; 9]));
        let done = transition(-20.0, true);
        let live = transition(3.0, false);
        let y = compute_targets(&nets, &[&done, &live], 0.95, TargetRule::Double).unwrap();
        assert_eq!(y[0], -20.0);
        assert!((y[1] - (3.0 + 0.95 * 7.0)).abs() < 1e-12);
        let y = compute_targets(&nets, &[&done, &live], 0.0, TargetRule::Double).unwrap();
        assert_eq!(y, vec![-20.0, 3.0]);
    }

    #[test]
    fn double_estimator_uses_online_argmax() {
        let mut online = [-1e6; 9];
        online[0] = 0.2;
        online[1] = 0.5;
        let mut target = [-1e6; 9];
        target[0] = 1.0;
        target[1] = 2.0;
        target[4] = 50.0;
        let nets = AgentNets {
            online: bias_net(online),
            target: bias_net(target),
        };
        let t = transition(1.0, false);
        let y = compute_targets(&nets, &[&t], 0.95, TargetRule::Double).unwrap();
        assert!((y[0] - 2.9).abs() < 1e-12);
        let y = compute_targets(&nets, &[&t], 0.95, TargetRule::Max).unwrap();
        assert!((y[0] - (1.0 + 0.95 * 50.0)).abs() < 1e-12);
    }

    #[test]
    fn double_equals_max_when_nets_agree() {
        let net = NetworkParams::init(LayerSpec::new(vec![3, 6, 9]).unwrap(), 5);
        let nets = AgentNets::new(net);
        let ts: Vec<Transition> = (0..20)
            .map(|i| Transition {
                obs: vec![0.0; 3],
                action: Action::E,
                reward: i as f64,
                next_obs: vec![i as f64 * 0.1, -0.3, 1.0 - i as f64 * 0.05],
                done: false,
            })
            .collect();
        let refs: Vec<_> = ts.iter().collect();
        let a = compute_targets(&nets, &refs, 0.9, TargetRule::Double).unwrap();
        let b = compute_targets(&nets, &refs, 0.9, TargetRule::Max).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn fitted_batch_is_a_fixed_point() {
        let nets0 = AgentNets::new(bias_net([1.0; 9]));
        let mut nets = nets0.clone();
        // y = r for done transitions; r equals the current Q.
        let t = transition(1.0, true);
        let step = train_step(&mut nets, &[&t], 0.95, 0.1, TargetRule::Double).unwrap();
        assert_eq!(step.loss, 0.0);
        assert_eq!(nets, nets0);
    }

    #[test]
    fn train_step_descends_and_spares_target() {
        let net = NetworkParams::init(LayerSpec::new(vec![4, 8, 9]).unwrap(), 9);
        let mut nets = AgentNets::new(net);
        let target_before = nets.target.flatten();
        let ts: Vec<Transition> = (0..16)
            .map(|i| Transition {
                obs: vec![(i % 4) as f64 * 0.25, 0.5, -0.5, (i / 4) as f64 * 0.1],
                action: Action::ALL[i % 9],
                reward: (i as f64) - 8.0,
                next_obs: vec![0.1, 0.2, 0.3, 0.4],
                done: i % 3 == 0,
            })
            .collect();
        let refs: Vec<_> = ts.iter().collect();
        let mut prev = f64::INFINITY;
        for _ in 0..100 {
            let step = train_step(&mut nets, &refs, 0.95, 1e-4, TargetRule::Double).unwrap();
            assert!(step.loss <= prev + 1e-12, "{} > {prev}", step.loss);
            prev = step.loss;
        }
        assert_eq!(nets.target.flatten(), target_before);
    }

    #[test]
    fn sync_is_exact_and_idempotent() {
        let mut nets = AgentNets::new(NetworkParams::init(LayerSpec::default_q(), 1));
        nets.online = NetworkParams::init(LayerSpec::default_q(), 2);
        nets.sync_target();
        assert_eq!(nets.target.flatten(), nets.online.flatten());
        nets.sync_target();
        assert_eq!(nets.target, nets.online);
    }
}
