//! Fits a linear-in-parameters model with the EKF weight estimator and checks
//! the result against the batch Kalman oracle, in full and diagonal modes.
//!
//! cargo run --release --example ekf_weights

use agvlab::ekf::{self, kf_oracle, CovarianceMode, EkfConfig, EkfState, LinearStep};
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn main() -> agvlab::Result<()> {
    let truth = [1.5, -0.75, 0.25];
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let steps: Vec<LinearStep> = (0..60)
        .map(|_| {
            let h: Vec<f64> = (0..3).map(|_| rng.random_range(-1.0..1.0)).collect();
            let z = h.iter().zip(truth).map(|(a, b)| a * b).sum::<f64>() + rng.random_range(-0.1..0.1);
            vec![(z, h)]
        })
        .collect();
    let (p0, q, r) = (1.0, 1e-6, 0.01);
    let oracle = kf_oracle(&steps, q, r, &(DMatrix::identity(3, 3) * p0), &[0.0; 3]);
    for mode in [CovarianceMode::Full, CovarianceMode::Diagonal] {
        let mut s = EkfState::new(vec![0.0; 3], &EkfConfig { p0, q_proc: q, r_obs: r, mode });
        for step in &steps {
            ekf::ekf_predict(&mut s);
            for (z, h) in step {
                let hv: f64 = h.iter().zip(&s.theta_hat).map(|(a, b)| a * b).sum();
                ekf::ekf_update_scalar(&mut s, *z, hv, h)?;
            }
        }
        let last = &oracle.last().unwrap().0;
        let gap = s.theta_hat.iter().zip(last.iter()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        println!(
            "{mode:?}: theta {:.4?}, trace P {:.2e}, gap to oracle {gap:.2e}",
            s.theta_hat,
            s.cov_trace()
        );
    }
    println!("truth {truth:?}");
    Ok(())
}
