//! Extended Kalman filter over a flat parameter vector.
//!
//! The state transition is the identity (random-walk weights), so prediction
//! only inflates the covariance. Measurements are scalar network outputs
//! `Q(s, a; theta)`; a batch is absorbed as a sequence of scalar updates,
//! relinearizing at the current estimate before each one.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::neuralnet::{LayerSpec, NetworkParams};
use crate::pf::Observation;

/// Above this dimension `CovarianceMode::Auto` keeps only the diagonal.
pub const FULL_COVARIANCE_MAX_DIM: usize = 2000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CovarianceMode {
    #[default]
    Auto,
    Full,
    Diagonal,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EkfConfig {
    /// Initial covariance is `p0 * I`.
    pub p0: f64,
    pub q_proc: f64,
    pub r_obs: f64,
    pub mode: CovarianceMode,
}

impl Default for EkfConfig {
    fn default() -> Self {
        Self {
            p0: 1e-2,
            q_proc: 1e-6,
            r_obs: 1.0,
            mode: CovarianceMode::Auto,
        }
    }
}

impl EkfConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.p0 > 0.0 && self.q_proc >= 0.0 && self.r_obs > 0.0) {
            return Err(Error::Config(format!(
                "ekf: need p0 > 0, q_proc >= 0, r_obs > 0 (got {}, {}, {})",
                self.p0, self.q_proc, self.r_obs
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Covariance {
    /// Row-major `d x d`.
    Full(Vec<f64>),
    Diagonal(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct EkfState {
    pub theta_hat: Vec<f64>,
    pub cov: Covariance,
    pub q_proc: f64,
    pub r_obs: f64,
}

impl EkfState {
    pub fn new(theta0: Vec<f64>, cfg: &EkfConfig) -> Self {
        let d = theta0.len();
        let full = match cfg.mode {
            CovarianceMode::Full => true,
            CovarianceMode::Diagonal => false,
            CovarianceMode::Auto => d <= FULL_COVARIANCE_MAX_DIM,
        };
        let cov = if full {
            let mut p = vec![0.0; d * d];
            (0..d).for_each(|i| p[i * d + i] = cfg.p0);
            Covariance::Full(p)
        } else {
            Covariance::Diagonal(vec![cfg.p0; d])
        };
        Self {
            theta_hat: theta0,
            cov,
            q_proc: cfg.q_proc,
            r_obs: cfg.r_obs,
        }
    }

    pub fn dim(&self) -> usize {
        self.theta_hat.len()
    }

    pub fn is_full(&self) -> bool {
        matches!(self.cov, Covariance::Full(_))
    }

    pub fn cov_diag(&self) -> Vec<f64> {
        let d = self.dim();
        match &self.cov {
            Covariance::Full(p) => (0..d).map(|i| p[i * d + i]).collect(),
            Covariance::Diagonal(p) => p.clone(),
        }
    }

    pub fn cov_trace(&self) -> f64 {
        self.cov_diag().iter().sum()
    }

    /// Entry `(i, j)`; off-diagonal entries are zero in diagonal mode.
    pub fn cov_entry(&self, i: usize, j: usize) -> f64 {
        match &self.cov {
            Covariance::Full(p) => p[i * self.dim() + j],
            Covariance::Diagonal(p) if i == j => p[i],
            Covariance::Diagonal(_) => 0.0,
        }
    }

    pub fn max_asymmetry(&self) -> f64 {
        let d = self.dim();
        match &self.cov {
            Covariance::Full(p) => {
                let mut worst: f64 = 0.0;
                for i in 0..d {
                    for j in i + 1..d {
                        worst = worst.max((p[i * d + j] - p[j * d + i]).abs());
                    }
                }
                worst
            }
            Covariance::Diagonal(_) => 0.0,
        }
    }
}

/// `P <- P + q I`; the estimate is unchanged.
pub fn ekf_predict(state: &mut EkfState) {
    let d = state.dim();
    let q = state.q_proc;
    if q == 0.0 {
        return;
    }
    match &mut state.cov {
        Covariance::Full(p) => (0..d).for_each(|i| p[i * d + i] += q),
        Covariance::Diagonal(p) => p.iter_mut().for_each(|v| *v += q),
    }
}

/// Scalar measurement update with innovation `z - h_val` and Jacobian row `h`.
pub fn ekf_update_scalar(state: &mut EkfState, z: f64, h_val: f64, h: &[f64]) -> Result<()> {
    let d = state.dim();
    if h.len() != d {
        return Err(Error::ShapeMismatch {
            what: "measurement jacobian",
            expected: d,
            got: h.len(),
        });
    }
    let innovation = z - h_val;
    match &mut state.cov {
        Covariance::Full(p) => {
            let ph: Vec<f64> = (0..d)
                .map(|i| p[i * d..(i + 1) * d].iter().zip(h).map(|(a, b)| a * b).sum())
                .collect();
            let s = h.iter().zip(&ph).map(|(a, b)| a * b).sum::<f64>() + state.r_obs;
            if !(s > 0.0) {
                return Err(Error::NonPositiveInnovationVariance(s));
            }
            let k: Vec<f64> = ph.iter().map(|v| v / s).collect();
            for (t, ki) in state.theta_hat.iter_mut().zip(&k) {
                *t += ki * innovation;
            }
            // (I - K H) P = P - K (P H)^T for symmetric P.
            for i in 0..d {
                let ki = k[i];
                if ki == 0.0 {
                    continue;
                }
                let row = &mut p[i * d..(i + 1) * d];
                for (pij, phj) in row.iter_mut().zip(&ph) {
                    *pij -= ki * phj;
                }
            }
            for i in 0..d {
                for j in i + 1..d {
                    let avg = 0.5 * (p[i * d + j] + p[j * d + i]);
                    p[i * d + j] = avg;
                    p[j * d + i] = avg;
                }
            }
        }
        Covariance::Diagonal(p) => {
            let s = p.iter().zip(h).map(|(pi, hi)| pi * hi * hi).sum::<f64>() + state.r_obs;
            if !(s > 0.0) {
                return Err(Error::NonPositiveInnovationVariance(s));
            }
            for ((t, pi), hi) in state.theta_hat.iter_mut().zip(p.iter_mut()).zip(h) {
                let ph = *pi * hi;
                let k = ph / s;
                *t += k * innovation;
                *pi -= k * ph;
            }
        }
    }
    Ok(())
}

/// One predict followed by sequential scalar updates over `batch`, with the
/// measurement model `Q(obs, action; theta)` of a network with layout `spec`.
pub fn ekf_batch_update(
    state: &mut EkfState,
    batch: &[Observation<'_>],
    spec: &LayerSpec,
) -> Result<()> {
    ekf_predict(state);
    let mut net = NetworkParams::unflatten(spec, state.theta_hat.clone())?;
    for o in batch {
        let h_val = net.forward(o.obs)?[o.action];
        let h = net.grad_q_theta(o.obs, o.action)?;
        ekf_update_scalar(state, o.z, h_val, &h)?;
        net.set_flat(&state.theta_hat)?;
    }
    Ok(())
}

/// One filtering step of a linear model: a list of `(z, H)` rows.
pub type LinearStep = Vec<(f64, Vec<f64>)>;

/// Textbook linear Kalman filter in matrix form, used as a reference.
///
/// Each step predicts with `P + q I`, then absorbs all rows of the step at
/// once with `K = P H^T (H P H^T + r I)^-1`. Returns the estimate and
/// covariance after every step.
pub fn kf_oracle(
    steps: &[LinearStep],
    q: f64,
    r: f64,
    p0: &DMatrix<f64>,
    theta0: &[f64],
) -> Vec<(DVector<f64>, DMatrix<f64>)> {
    let d = theta0.len();
    let mut x = DVector::from_column_slice(theta0);
    let mut p = p0.clone();
    let eye = DMatrix::<f64>::identity(d, d);
    let mut out = Vec::with_capacity(steps.len());
    for step in steps {
        p += &eye * q;
        if !step.is_empty() {
            let b = step.len();
            let h = DMatrix::from_fn(b, d, |i, j| step[i].1[j]);
            let z = DVector::from_fn(b, |i, _| step[i].0);
            let s = &h * &p * h.transpose() + DMatrix::<f64>::identity(b, b) * r;
            let s_inv = s.try_inverse().expect("innovation covariance is invertible");
            let k = &p * h.transpose() * s_inv;
            x = &x + &k * (z - &h * &x);
            p = (&eye - &k * &h) * &p;
        }
        out.push((x.clone(), p.clone()));
    }
    out
}
