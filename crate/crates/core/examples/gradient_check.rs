//! Compares backprop gradients of the squared TD loss against central
//! differences on a freshly initialized Q-network.
//!
//! cargo run --release --example gradient_check -- [seed]

use agvlab::neuralnet::{forward_flat, LayerSpec, NetworkParams};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn main() -> agvlab::Result<()> {
    let seed = std::env::args().nth(1).map_or(0, |a| a.parse().expect("seed"));
    let spec = LayerSpec::default_q();
    let net = NetworkParams::init(spec.clone(), seed);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let batch: Vec<(Vec<f64>, usize, f64)> = (0..8)
        .map(|_| {
            let x = (0..spec.input_width()).map(|_| rng.random_range(-1.0..1.0)).collect();
            (x, rng.random_range(0..spec.output_width()), rng.random_range(-10.0..10.0))
        })
        .collect();
    let refs: Vec<(&[f64], usize, f64)> = batch.iter().map(|(x, a, y)| (x.as_slice(), *a, *y)).collect();
    let analytic = net.grad_loss(&refs)?;

    let loss = |theta: &[f64]| -> f64 {
        batch
            .iter()
            .map(|(x, a, y)| 0.5 * (forward_flat(&spec, theta, x).unwrap()[*a] - y).powi(2))
            .sum()
    };
    let mut theta = net.flatten();
    let h = 1e-6;
    let (mut worst, mut scale) = (0.0f64, 0.0f64);
    for k in 0..theta.len() {
        let orig = theta[k];
        theta[k] = orig + h;
        let up = loss(&theta);
        theta[k] = orig - h;
        let down = loss(&theta);
        theta[k] = orig;
        let numeric = (up - down) / (2.0 * h);
        worst = worst.max((numeric - analytic[k]).abs());
        scale = scale.max(numeric.abs());
    }
    println!("{} parameters, layers {:?}", spec.param_count(), spec.sizes());
    println!("max |analytic - numeric| = {worst:.3e}, relative {:.3e}", worst / scale);
    Ok(())
}
