//! Dense feed-forward Q-network with hand-written backpropagation.
//!
//! Hidden layers use ReLU, the output layer is linear. Parameters live in a
//! single flat vector so the filters can treat the network as one point in
//! R^d. The canonical layout is, per layer: weights row-major with shape
//! `(n_out, n_in)`, then the `n_out` biases.
//!
//! The ReLU derivative at exactly zero is taken to be zero.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct LayerSpec {
    sizes: Vec<usize>,
}

impl LayerSpec {
    pub fn new(sizes: Vec<usize>) -> Result<Self> {
        if sizes.len() < 2 {
            return Err(Error::InvalidSpec(format!(
                "need at least input and output widths, got {sizes:?}"
            )));
        }
        if sizes.contains(&0) {
            return Err(Error::InvalidSpec(format!("zero-width layer in {sizes:?}")));
        }
        Ok(Self { sizes })
    }

    /// The default Q-network: 14 inputs, two hidden layers of 32, 9 outputs.
    pub fn default_q() -> Self {
        Self {
            sizes: vec![14, 32, 32, 9],
        }
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn input_width(&self) -> usize {
        self.sizes[0]
    }

    pub fn output_width(&self) -> usize {
        *self.sizes.last().unwrap()
    }

    pub fn layer_count(&self) -> usize {
        self.sizes.len() - 1
    }

    /// Total parameter count `sum (n_in + 1) * n_out`.
    pub fn param_count(&self) -> usize {
        self.sizes.windows(2).map(|w| (w[0] + 1) * w[1]).sum()
    }

    fn widest(&self) -> usize {
        *self.sizes.iter().max().unwrap()
    }

    /// `(weight offset, bias offset, n_in, n_out)` for every layer.
    fn layout(&self) -> impl Iterator<Item = (usize, usize, usize, usize)> + '_ {
        let mut offset = 0;
        self.sizes.windows(2).map(move |w| {
            let (n_in, n_out) = (w[0], w[1]);
            let weights = offset;
            let biases = weights + n_in * n_out;
            offset = biases + n_out;
            (weights, biases, n_in, n_out)
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkParams {
    spec: LayerSpec,
    theta: Vec<f64>,
}

impl NetworkParams {
    pub fn zeros(spec: LayerSpec) -> Self {
        let theta = vec![0.0; spec.param_count()];
        Self { spec, theta }
    }

    /// Glorot-uniform weights, zero biases; deterministic per seed.
    pub fn init(spec: LayerSpec, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = Self::zeros(spec);
        let layout: Vec<_> = params.spec.layout().collect();
        for (w, _, n_in, n_out) in layout {
            let bound = glorot_bound(n_in, n_out);
            for v in &mut params.theta[w..w + n_in * n_out] {
                *v = rng.random_range(-bound..=bound);
            }
        }
        params
    }

    pub fn spec(&self) -> &LayerSpec {
        &self.spec
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.theta
    }

    pub fn flatten(&self) -> Vec<f64> {
        self.theta.clone()
    }

    pub fn unflatten(spec: &LayerSpec, theta: Vec<f64>) -> Result<Self> {
        check_len(spec, theta.len())?;
        Ok(Self {
            spec: spec.clone(),
            theta,
        })
    }

    /// Overwrites the parameters in place from a flat vector.
    pub fn set_flat(&mut self, theta: &[f64]) -> Result<()> {
        check_len(&self.spec, theta.len())?;
        self.theta.copy_from_slice(theta);
        Ok(())
    }

    /// Weight `(row, col)` of `layer`, row = output unit.
    pub fn weight(&self, layer: usize, row: usize, col: usize) -> f64 {
        let (w, _, n_in, _) = self.spec.layout().nth(layer).expect("layer index");
        self.theta[w + row * n_in + col]
    }

    pub fn weight_mut(&mut self, layer: usize, row: usize, col: usize) -> &mut f64 {
        let (w, _, n_in, _) = self.spec.layout().nth(layer).expect("layer index");
        &mut self.theta[w + row * n_in + col]
    }

    pub fn bias(&self, layer: usize, unit: usize) -> f64 {
        let (_, b, _, _) = self.spec.layout().nth(layer).expect("layer index");
        self.theta[b + unit]
    }

    pub fn bias_mut(&mut self, layer: usize, unit: usize) -> &mut f64 {
        let (_, b, _, _) = self.spec.layout().nth(layer).expect("layer index");
        &mut self.theta[b + unit]
    }

    pub fn forward(&self, input: &[f64]) -> Result<Vec<f64>> {
        forward_flat(&self.spec, &self.theta, input)
    }

    /// Gradient of `0.5 * sum_i (Q(s_i, a_i) - y_i)^2`.
    pub fn grad_loss(&self, batch: &[(&[f64], usize, f64)]) -> Result<Vec<f64>> {
        let mut grad = vec![0.0; self.theta.len()];
        let mut scratch = Scratch::new(&self.spec);
        for &(input, action, target) in batch {
            check_action(&self.spec, action)?;
            let q = scratch.forward(&self.spec, &self.theta, input)?[action];
            scratch.backward(&self.spec, &self.theta, action, q - target, &mut grad);
        }
        Ok(grad)
    }

    /// Gradient of the single output `Q(input, action)` with respect to theta.
    pub fn grad_q_theta(&self, input: &[f64], action: usize) -> Result<Vec<f64>> {
        let mut grad = vec![0.0; self.theta.len()];
        let mut scratch = Scratch::new(&self.spec);
        check_action(&self.spec, action)?;
        scratch.forward(&self.spec, &self.theta, input)?;
        scratch.backward(&self.spec, &self.theta, action, 1.0, &mut grad);
        Ok(grad)
    }

    /// `theta - lr * gradient`.
    pub fn sgd_step(&self, gradient: &[f64], lr: f64) -> Result<Self> {
        let mut next = self.clone();
        next.sgd_step_in_place(gradient, lr)?;
        Ok(next)
    }

    pub fn sgd_step_in_place(&mut self, gradient: &[f64], lr: f64) -> Result<()> {
        if gradient.len() != self.theta.len() {
            return Err(Error::ShapeMismatch {
                what: "gradient",
                expected: self.theta.len(),
                got: gradient.len(),
            });
        }
        for (t, g) in self.theta.iter_mut().zip(gradient) {
            *t -= lr * g;
        }
        Ok(())
    }

    pub fn save_checkpoint(&self, path: &Path) -> Result<()> {
        let ck = Checkpoint {
            sizes: self.spec.sizes.clone(),
            params: self.theta.clone(),
        };
        let text = serde_json::to_string_pretty(&ck)?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load_checkpoint(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let ck: Checkpoint = serde_json::from_str(&text)?;
        let spec = LayerSpec::new(ck.sizes)?;
        Self::unflatten(&spec, ck.params)
    }
}

/// On-disk checkpoint: layer widths plus the flat parameter vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub sizes: Vec<usize>,
    pub params: Vec<f64>,
}

pub fn glorot_bound(n_in: usize, n_out: usize) -> f64 {
    (6.0 / (n_in + n_out) as f64).sqrt()
}

fn check_len(spec: &LayerSpec, got: usize) -> Result<()> {
    let expected = spec.param_count();
    if got != expected {
        return Err(Error::LengthMismatch { expected, got });
    }
    Ok(())
}

fn check_action(spec: &LayerSpec, action: usize) -> Result<()> {
    if action >= spec.output_width() {
        return Err(Error::ShapeMismatch {
            what: "action index",
            expected: spec.output_width(),
            got: action,
        });
    }
    Ok(())
}

/// Forward pass using a raw parameter slice laid out per `spec`.
pub fn forward_flat(spec: &LayerSpec, theta: &[f64], input: &[f64]) -> Result<Vec<f64>> {
    check_len(spec, theta.len())?;
    let mut scratch = Scratch::new(spec);
    Ok(scratch.forward(spec, theta, input)?.to_vec())
}

/// Reusable activation buffers for repeated forward/backward passes.
pub struct Scratch {
    /// Post-activation values per layer, `acts[0]` is the input.
    acts: Vec<Vec<f64>>,
    delta: Vec<f64>,
    delta_prev: Vec<f64>,
}

impl Scratch {
    pub fn new(spec: &LayerSpec) -> Self {
        Self {
            acts: spec.sizes.iter().map(|&n| vec![0.0; n]).collect(),
            delta: Vec::with_capacity(spec.widest()),
            delta_prev: Vec::with_capacity(spec.widest()),
        }
    }

    pub fn forward(&mut self, spec: &LayerSpec, theta: &[f64], input: &[f64]) -> Result<&[f64]> {
        if input.len() != spec.input_width() {
            return Err(Error::ShapeMismatch {
                what: "network input",
                expected: spec.input_width(),
                got: input.len(),
            });
        }
        self.acts[0].copy_from_slice(input);
        let last = spec.layer_count() - 1;
        for (l, (w, b, n_in, n_out)) in spec.layout().enumerate() {
            let (head, tail) = self.acts.split_at_mut(l + 1);
            let x = &head[l];
            let out = &mut tail[0];
            let weights = &theta[w..w + n_in * n_out];
            for (j, o) in out.iter_mut().enumerate() {
                let row = &weights[j * n_in..(j + 1) * n_in];
                let z = theta[b + j] + dot(row, x);
                *o = if l < last { z.max(0.0) } else { z };
            }
        }
        Ok(self.acts.last().unwrap())
    }

    /// Accumulates `scale * dQ(action)/dtheta` into `grad`. Must follow a
    /// `forward` call on the same input.
    pub fn backward(
        &mut self,
        spec: &LayerSpec,
        theta: &[f64],
        action: usize,
        scale: f64,
        grad: &mut [f64],
    ) {
        let layout: Vec<_> = spec.layout().collect();
        self.delta.clear();
        self.delta.resize(spec.output_width(), 0.0);
        self.delta[action] = scale;
        for (l, &(w, b, n_in, n_out)) in layout.iter().enumerate().rev() {
            let x = &self.acts[l];
            for j in 0..n_out {
                let d = self.delta[j];
                if d == 0.0 {
                    continue;
                }
                grad[b + j] += d;
                let row = &mut grad[w + j * n_in..w + (j + 1) * n_in];
                for (g, xi) in row.iter_mut().zip(x) {
                    *g += d * xi;
                }
            }
            if l == 0 {
                break;
            }
            self.delta_prev.clear();
            self.delta_prev.resize(n_in, 0.0);
            for j in 0..n_out {
                let d = self.delta[j];
                if d == 0.0 {
                    continue;
                }
                let row = &theta[w + j * n_in..w + (j + 1) * n_in];
                for (dp, wij) in self.delta_prev.iter_mut().zip(row) {
                    *dp += d * wij;
                }
            }
            // ReLU mask: activation > 0 iff pre-activation > 0.
            for (dp, a) in self.delta_prev.iter_mut().zip(x) {
                if *a <= 0.0 {
                    *dp = 0.0;
                }
            }
            std::mem::swap(&mut self.delta, &mut self.delta_prev);
        }
    }
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0; 4];
    let chunks = a.len() / 4;
    for c in 0..chunks {
        let i = c * 4;
        acc[0] += a[i] * b[i];
        acc[1] += a[i + 1] * b[i + 1];
        acc[2] += a[i + 2] * b[i + 2];
        acc[3] += a[i + 3] * b[i + 3];
    }
    let mut sum = (acc[0] + acc[1]) + (acc[2] + acc[3]);
    for i in chunks * 4..a.len() {
        sum += a[i] * b[i];
    }
    sum
}

#[cfg(test)]
mod tests {
    use super::*;

    fn linear_1x1(w: f64, b: f64) -> NetworkParams {
        NetworkParams::unflatten(&LayerSpec::new(vec![1, 1]).unwrap(), vec![w, b]).unwrap()
    }

    #[test]
    fn param_counts() {
        assert_eq!(LayerSpec::new(vec![14, 32, 9]).unwrap().param_count(), 777);
        assert_eq!(LayerSpec::default_q().param_count(), 1833);
        assert!(LayerSpec::new(vec![3]).is_err());
        assert!(LayerSpec::new(vec![3, 0, 2]).is_err());
    }

    #[test]
    fn init_is_seeded_and_bounded() {
        let spec = LayerSpec::new(vec![14, 32, 9]).unwrap();
        let a = NetworkParams::init(spec.clone(), 7);
        assert_eq!(a, NetworkParams::init(spec.clone(), 7));
        assert_ne!(a, NetworkParams::init(spec, 8));
        let bound = glorot_bound(14, 32);
        assert!((bound - 0.3612).abs() < 1e-4);
        for r in 0..32 {
            for c in 0..14 {
                assert!(a.weight(0, r, c).abs() <= bound);
            }
            assert_eq!(a.bias(0, r), 0.0);
        }
        for r in 0..9 {
            assert_eq!(a.bias(1, r), 0.0);
        }
    }

    #[test]
    fn zero_and_identity_nets() {
        let z = NetworkParams::zeros(LayerSpec::new(vec![3, 4, 2]).unwrap());
        assert_eq!(z.forward(&[1.0, -2.0, 3.0]).unwrap(), vec![0.0, 0.0]);
        assert_eq!(linear_1x1(1.0, 0.0).forward(&[-3.5]).unwrap(), vec![-3.5]);
        assert!(matches!(
            z.forward(&[1.0]),
            Err(Error::ShapeMismatch { .. })
        ));
    }

    #[test]
    fn hand_computed_forward() {
        // h = relu(W1 x + b1), y = W2 h + b2
        let spec = LayerSpec::new(vec![2, 2, 1]).unwrap();
        let theta = vec![
            0.5, -1.0, // W1 row 0
            2.0, 0.25, // W1 row 1
            0.1, -0.2, // b1
            1.5, -3.0, // W2
            0.7, // b2
        ];
        let net = NetworkParams::unflatten(&spec, theta).unwrap();
        // x = (2, 1): h0 = relu(1 - 1 + 0.1) = 0.1, h1 = relu(4 + 0.25 - 0.2) = 4.05
        // y = 0.15 - 12.15 + 0.7 = -11.3
        let y = net.forward(&[2.0, 1.0]).unwrap()[0];
        assert!((y - (-11.3)).abs() < 1e-12);
        // x = (-2, 1): h0 = relu(-1 - 1 + 0.1) = 0, h1 = relu(-4 + 0.25 - 0.2) = 0
        assert!((net.forward(&[-2.0, 1.0]).unwrap()[0] - 0.7).abs() < 1e-12);
    }

    #[test]
    fn linear_gradients_by_hand() {
        let net = linear_1x1(1.0, 0.0);
        let g = net.grad_loss(&[(&[2.0], 0, 0.0)]).unwrap();
        assert_eq!(g, vec![4.0, 2.0]);
        assert_eq!(net.grad_q_theta(&[3.0], 0).unwrap(), vec![3.0, 1.0]);
    }

    #[test]
    fn fitted_batch_has_zero_gradient() {
        let net = NetworkParams::init(LayerSpec::new(vec![3, 5, 4]).unwrap(), 1);
        let xs = [[0.1, 0.2, 0.3], [-0.5, 0.0, 1.0]];
        let batch: Vec<_> = xs
            .iter()
            .enumerate()
            .map(|(i, x)| (&x[..], i, net.forward(x).unwrap()[i]))
            .collect();
        assert!(net.grad_loss(&batch).unwrap().iter().all(|g| *g == 0.0));
    }

    #[test]
    fn relu_derivative_at_zero_is_zero() {
        // Hidden unit pre-activation is exactly 0 for x = 1.
        let spec = LayerSpec::new(vec![1, 1, 1]).unwrap();
        let net = NetworkParams::unflatten(&spec, vec![1.0, -1.0, 2.0, 0.0]).unwrap();
        let g = net.grad_q_theta(&[1.0], 0).unwrap();
        assert_eq!(g, vec![0.0, 0.0, 0.0, 1.0]);
    }

    #[test]
    fn zero_input_bias_free_first_layer() {
        let spec = LayerSpec::new(vec![3, 4, 2]).unwrap();
        let net = NetworkParams::init(spec, 3);
        let g = net.grad_q_theta(&[0.0, 0.0, 0.0], 1).unwrap();
        assert!(g[..12].iter().all(|v| *v == 0.0));
    }

    #[test]
    fn sgd_arithmetic() {
        let spec = LayerSpec::new(vec![1, 1]).unwrap();
        let p = NetworkParams::unflatten(&spec, vec![1.0, 1.0]).unwrap();
        let next = p.sgd_step(&[2.0, -4.0], 0.1).unwrap();
        assert!((next.as_slice()[0] - 0.8).abs() < 1e-15);
        assert!((next.as_slice()[1] - 1.4).abs() < 1e-15);
        assert_eq!(p.sgd_step(&[0.0, 0.0], 0.1).unwrap(), p);
        assert_eq!(p.sgd_step(&[5.0, 5.0], 0.0).unwrap(), p);
        assert!(p.sgd_step(&[1.0], 0.1).is_err());
    }

    #[test]
    fn unflatten_rejects_wrong_length() {
        let spec = LayerSpec::new(vec![14, 32, 9]).unwrap();
        assert!(matches!(
            NetworkParams::unflatten(&spec, vec![0.0; 776]),
            Err(Error::LengthMismatch {
                expected: 777,
                got: 776
            })
        ));
    }

    #[test]
    fn canonical_order() {
        let spec = LayerSpec::new(vec![2, 3, 1]).unwrap();
        let theta: Vec<f64> = (0..13).map(f64::from).collect();
        let net = NetworkParams::unflatten(&spec, theta).unwrap();
        assert_eq!(net.weight(0, 1, 0), 2.0);
        assert_eq!(net.bias(0, 2), 8.0);
        assert_eq!(net.weight(1, 0, 2), 11.0);
        assert_eq!(net.bias(1, 0), 12.0);
    }

    #[test]
    fn checkpoint_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ck.json");
        let net = NetworkParams::init(LayerSpec::default_q(), 11);
        net.save_checkpoint(&path).unwrap();
        assert_eq!(NetworkParams::load_checkpoint(&path).unwrap(), net);
    }
}
