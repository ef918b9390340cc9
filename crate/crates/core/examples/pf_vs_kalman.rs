//! Tracks a scalar random walk with the particle filter and compares its
//! posterior mean with the exact Kalman recursion.
//!
//! cargo run --release --example pf_vs_kalman -- [particles]

use agvlab::ekf::{kf_oracle, LinearStep};
use agvlab::pf::{self, Observation, PfConfig};
use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

fn main() -> agvlab::Result<()> {
    let n = std::env::args().nth(1).map_or(1000, |a| a.parse().expect("particles"));
    let (q, r, p0): (f64, f64, f64) = (0.25, 1.0, 0.5);
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let (w, v) = (Normal::new(0.0, q.sqrt()).unwrap(), Normal::new(0.0, r.sqrt()).unwrap());
    let mut x = 0.0;
    let zs: Vec<f64> = (0..40)
        .map(|_| {
            x += w.sample(&mut rng);
            x + v.sample(&mut rng)
        })
        .collect();
    let steps: Vec<LinearStep> = zs.iter().map(|z| vec![(*z, vec![1.0])]).collect();
    let kf = kf_oracle(&steps, q, r, &DMatrix::from_element(1, 1, p0), &[0.0]);

    let cfg = PfConfig {
        process_sigma: q.sqrt(),
        obs_sigma: r.sqrt(),
        init_sigma: p0.sqrt(),
        ess_threshold: n as f64 / 2.0,
        ..PfConfig::default().with_particles(n)
    };
    let mut ps = pf::init_particles(&[0.0], &cfg, &mut rng);
    let mut sq = 0.0;
    println!("step        z   kalman     pf  resampled");
    for (t, (z, (mean, _))) in zs.iter().zip(&kf).enumerate() {
        let obs = [Observation { obs: &[], action: 0, z: *z }];
        let resampled = pf::filter_step(&mut ps, &obs, |th, _, _| th[0], &cfg, &mut rng)?;
        let est = pf::estimate(&ps)[0];
        sq += (est - mean[0]).powi(2);
        println!("{t:4} {z:8.3} {:8.3} {est:6.3}  {resampled}", mean[0]);
    }
    println!("rmse vs kalman: {:.4}", (sq / zs.len() as f64).sqrt());
    Ok(())
}
