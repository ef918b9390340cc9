//! Trains all three algorithms on the 3x3 map and prints the trailing-100
//! success rate and the greedy path against the BFS optimum.
//!
//! cargo run --release --example train_trivial -- [episodes] [seed]

use agvlab::ddqn::EpsilonSchedule;
use agvlab::ekf::{CovarianceMode, EkfConfig};
use agvlab::pf::PfConfig;
use agvlab::trainers::{train, Algorithm, FilterConfig, TrainConfig};
use agvlab::parse_map;

fn main() -> agvlab::Result<()> {
    let mut args = std::env::args().skip(1);
    let episodes = args.next().map_or(2000, |a| a.parse().expect("episodes"));
    let seed = args.next().map_or(0, |a| a.parse().expect("seed"));
    let map = parse_map(include_str!("../maps/trivial_3x3.map"))?;
    let cfg = TrainConfig {
        episodes,
        seed,
        batch_size: 32,
        memory_size: 2000,
        learning_rate: 1e-3,
        epsilon: EpsilonSchedule { initial: 1.0, decay: 0.995, floor: 0.001 },
        solution_window: 100,
        solution_threshold: 0.95,
        ..TrainConfig::default()
    };
    for algorithm in Algorithm::ALL {
        let filter = match algorithm {
            Algorithm::Ddqn => FilterConfig::None,
            Algorithm::PfDdqn => FilterConfig::Particle(PfConfig { process_sigma: 1e-4, ..PfConfig::default() }),
            Algorithm::EkfDdqn => FilterConfig::Kalman(EkfConfig { mode: CovarianceMode::Diagonal, ..EkfConfig::default() }),
        };
        let t = std::time::Instant::now();
        let r = train(&map, &cfg, &filter)?;
        let tail = &r.records[r.records.len().saturating_sub(100)..];
        let rate = tail.iter().filter(|e| e.success()).count() as f64 / tail.len() as f64;
        let g = &r.summary.greedy;
        println!(
            "{algorithm:9} solved at {:?}, trailing-100 success {:.2}, greedy {} moves (bfs {:?}), {:.1}s",
            r.summary.solution_episode,
            rate,
            g.path_moves[0],
            g.bfs_moves[0],
            t.elapsed().as_secs_f64()
        );
    }
    Ok(())
}
