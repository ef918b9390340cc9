//! Bootstrap particle filter over flat parameter vectors.
//!
//! State model is a Gaussian random walk; the observation of a particle is a
//! batch of scalar regression targets `Z_j` compared against the particle's
//! predictions `Q(s_j, a_j; theta)`. Weights are updated in log space and
//! resampling is systematic, triggered when the effective sample size drops
//! below a threshold.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const NORMALIZATION_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PfConfig {
    pub num_particles: usize,
    /// Per-coordinate std of the random-walk increment.
    pub process_sigma: f64,
    /// Std of the observation noise on each target.
    pub obs_sigma: f64,
    /// Resample when ESS falls strictly below this value.
    pub ess_threshold: f64,
    /// Per-coordinate std of the initial cloud around `theta0`.
    pub init_sigma: f64,
    /// After each correction, replace the lowest-weight particle with the
    /// gradient-updated weights.
    pub inject_sgd: bool,
}

impl Default for PfConfig {
    fn default() -> Self {
        Self {
            num_particles: 50,
            process_sigma: 1e-3,
            obs_sigma: 1.0,
            ess_threshold: 25.0,
            init_sigma: 1e-2,
            inject_sgd: true,
        }
    }
}

impl PfConfig {
    pub fn with_particles(mut self, n: usize) -> Self {
        self.num_particles = n;
        self.ess_threshold = n as f64 / 2.0;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(format!("particle filter: {m}")));
        if self.num_particles < 2 {
            return bad("need at least 2 particles");
        }
        // Zero noise scales are allowed; they turn the filter into a pass-through.
        if !(self.process_sigma >= 0.0 && self.init_sigma >= 0.0) {
            return bad("noise scales must be non-negative");
        }
        if !(self.obs_sigma > 0.0) {
            return bad("obs_sigma must be positive");
        }
        if !(1.0..=self.num_particles as f64).contains(&self.ess_threshold) {
            return bad("ess_threshold must lie in [1, num_particles]");
        }
        Ok(())
    }
}

/// One scalar observation: the target `z` for `Q(obs, action)`.
#[derive(Debug, Clone, Copy)]
pub struct Observation<'a> {
    pub obs: &'a [f64],
    pub action: usize,
    pub z: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParticleSet {
    pub particles: Vec<Vec<f64>>,
    pub weights: Vec<f64>,
}

impl ParticleSet {
    /// Equal-weight set from explicit particles.
    pub fn uniform(particles: Vec<Vec<f64>>) -> Self {
        let n = particles.len();
        Self {
            particles,
            weights: vec![1.0 / n as f64; n],
        }
    }

    pub fn len(&self) -> usize {
        self.particles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.particles.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.particles.first().map_or(0, Vec::len)
    }

    pub fn weight_sum(&self) -> f64 {
        self.weights.iter().sum()
    }

    /// Index of the smallest weight (first on ties).
    pub fn lowest_weight_index(&self) -> usize {
        let mut best = 0;
        for (i, w) in self.weights.iter().enumerate() {
            if *w < self.weights[best] {
                best = i;
            }
        }
        best
    }

    /// Swaps in a new particle at `index`, keeping its weight.
    pub fn replace(&mut self, index: usize, particle: Vec<f64>) {
        debug_assert_eq!(particle.len(), self.dim());
        self.particles[index] = particle;
    }

    /// Adds the same displacement to every particle.
    pub fn translate(&mut self, delta: &[f64]) {
        for p in &mut self.particles {
            for (x, d) in p.iter_mut().zip(delta) {
                *x += d;
            }
        }
    }
}

/// Gaussian cloud `theta0 + N(0, init_sigma^2 I)` with uniform weights.
pub fn init_particles<R: Rng + ?Sized>(theta0: &[f64], cfg: &PfConfig, rng: &mut R) -> ParticleSet {
    let particles = (0..cfg.num_particles)
        .map(|_| {
            let mut p = theta0.to_vec();
            jitter(&mut p, cfg.init_sigma, rng);
            p
        })
        .collect();
    ParticleSet::uniform(particles)
}

/// Random-walk prediction; weights are untouched.
pub fn predict<R: Rng + ?Sized>(ps: &mut ParticleSet, cfg: &PfConfig, rng: &mut R) {
    for p in &mut ps.particles {
        jitter(p, cfg.process_sigma, rng);
    }
}

fn jitter<R: Rng + ?Sized>(p: &mut [f64], sigma: f64, rng: &mut R) {
    if sigma == 0.0 {
        return;
    }
    let normal = Normal::new(0.0, sigma).expect("finite sigma");
    for x in p {
        *x += normal.sample(rng);
    }
}

/// Multiplies each weight by `exp(log_lik[i])` and renormalizes, in log space
/// with max-subtraction. Non-finite log-likelihoods count as `-inf`.
pub fn reweight_log(ps: &mut ParticleSet, log_lik: &[f64]) -> Result<()> {
    assert_eq!(log_lik.len(), ps.len());
    let logs: Vec<f64> = ps
        .weights
        .iter()
        .zip(log_lik)
        .map(|(w, l)| {
            let v = w.ln() + l;
            if v.is_nan() {
                f64::NEG_INFINITY
            } else {
                v
            }
        })
        .collect();
    let max = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY || max.is_nan() {
        return Err(Error::DegenerateWeights);
    }
    let mut total = 0.0;
    for (w, l) in ps.weights.iter_mut().zip(&logs) {
        *w = (l - max).exp();
        total += *w;
    }
    for w in &mut ps.weights {
        *w /= total;
    }
    Ok(())
}

/// Gaussian likelihood of the batch under each particle, averaged over the
/// batch size so the sharpness does not grow with `B`:
/// `w_i *= exp(-sum_j (z_j - q_i(s_j, a_j))^2 / (2 sigma^2 B))`.
pub fn update_weights<F>(
    ps: &mut ParticleSet,
    batch: &[Observation<'_>],
    mut q_eval: F,
    cfg: &PfConfig,
) -> Result<()>
where
    F: FnMut(&[f64], &[f64], usize) -> f64,
{
    assert!(!batch.is_empty(), "empty observation batch");
    let scale = 2.0 * cfg.obs_sigma * cfg.obs_sigma * batch.len() as f64;
    let log_lik: Vec<f64> = ps
        .particles
        .iter()
        .map(|theta| {
            let sse: f64 = batch
                .iter()
                .map(|o| {
                    let r = o.z - q_eval(theta, o.obs, o.action);
                    r * r
                })
                .sum();
            -sse / scale
        })
        .collect();
    reweight_log(ps, &log_lik)
}

/// Effective sample size `1 / sum w^2`.
pub fn ess(ps: &ParticleSet) -> f64 {
    1.0 / ps.weights.iter().map(|w| w * w).sum::<f64>()
}

/// Offspring indices for systematic resampling with offset `u01` in `[0, 1)`:
/// stratum `k` sits at `(k + u01) / N`.
pub fn systematic_indices(weights: &[f64], u01: f64) -> Vec<usize> {
    let n = weights.len();
    let mut out = Vec::with_capacity(n);
    // Work in units of 1/N to keep stratum positions exact.
    let mut cum = weights[0] * n as f64;
    let mut i = 0;
    for k in 0..n {
        let s = k as f64 + u01;
        while s >= cum && i + 1 < n {
            i += 1;
            cum += weights[i] * n as f64;
        }
        out.push(i);
    }
    out
}

pub fn systematic_resample<R: Rng + ?Sized>(ps: &ParticleSet, rng: &mut R) -> Result<ParticleSet> {
    let sum = ps.weight_sum();
    if (sum - 1.0).abs() > NORMALIZATION_TOL || ps.weights.iter().any(|w| *w < 0.0) {
        return Err(Error::UnnormalizedWeights(sum));
    }
    let u01: f64 = rng.random();
    let particles = systematic_indices(&ps.weights, u01)
        .into_iter()
        .map(|i| ps.particles[i].clone())
        .collect();
    Ok(ParticleSet::uniform(particles))
}

/// Posterior mean, summed in particle index order.
pub fn estimate(ps: &ParticleSet) -> Vec<f64> {
    let mut mean = vec![0.0; ps.dim()];
    for (p, w) in ps.particles.iter().zip(&ps.weights) {
        for (m, x) in mean.iter_mut().zip(p) {
            *m += w * x;
        }
    }
    mean
}

/// Predict, reweight, resample if degenerate. Returns whether it resampled.
pub fn filter_step<R, F>(
    ps: &mut ParticleSet,
    batch: &[Observation<'_>],
    q_eval: F,
    cfg: &PfConfig,
    rng: &mut R,
) -> Result<bool>
where
    R: Rng + ?Sized,
    F: FnMut(&[f64], &[f64], usize) -> f64,
{
    predict(ps, cfg, rng);
    update_weights(ps, batch, q_eval, cfg)?;
    if ess(ps) < cfg.ess_threshold {
        *ps = systematic_resample(ps, rng)?;
        return Ok(true);
    }
    Ok(false)
}
