use agvlab::ddqn::EpsilonSchedule;
use agvlab::ekf::{CovarianceMode, EkfConfig};
use agvlab::gridworld::{observe, parse_map, reset, Action};
use agvlab::pathmetrics::{bfs_shortest, check_constraints, PathConstraints, ViolationKind};
use agvlab::pf::PfConfig;
use agvlab::trainers::{evaluate_greedy, train, FilterConfig, TrainConfig};

fn quick(seed: u64, episodes: usize) -> TrainConfig {
    TrainConfig {
        episodes,
        seed,
        batch_size: 16,
        memory_size: 500,
        learning_rate: 1e-3,
        epsilon: EpsilonSchedule { initial: 1.0, decay: 0.98, floor: 0.001 },
        solution_window: 100,
        solution_threshold: 0.95,
        ..TrainConfig::default()
    }
}

fn filters() -> [FilterConfig; 3] {
    [
        FilterConfig::None,
        FilterConfig::Particle(PfConfig { process_sigma: 1e-4, ..PfConfig::default().with_particles(10) }),
        FilterConfig::Kalman(EkfConfig { mode: CovarianceMode::Diagonal, ..EkfConfig::default() }),
    ]
}

#[test]
fn same_seed_same_records() {
    let map = parse_map(include_str!("../maps/trivial_3x3.map")).unwrap();
    for f in filters() {
        let cfg = TrainConfig { record_wall_time: false, ..quick(4, 60) };
        let a = train(&map, &cfg, &f).unwrap();
        let b = train(&map, &cfg, &f).unwrap();
        assert_eq!(a.records, b.records, "{:?}", f.algorithm());
        assert_eq!(a.nets, b.nets);
        let c = train(&map, &TrainConfig { seed: 5, ..cfg }, &f).unwrap();
        assert_ne!(a.records, c.records);
    }
}

#[test]
fn outcome_counts_add_up() {
    let map = parse_map("S.#..\n.....\n..#.T").unwrap();
    for f in filters() {
        let r = train(&map, &quick(1, 80), &f).unwrap();
        let s = &r.summary;
        assert_eq!(s.target_hits + s.obstacle_hits + s.agent_collisions + s.timeouts, s.episodes);
        assert_eq!(s.episodes, 80);
        assert!(r.records.iter().all(|e| e.steps <= map.default_max_steps()));
        assert!(r.records.windows(2).all(|w| w[1].episode == w[0].episode + 1));
    }
}

#[test]
fn zero_gamma_learns_immediate_rewards() {
    // From the start of "ST": E reaches the target (201), Stay earns 0, and
    // every other action leaves the map (-20).
    let map = parse_map("ST").unwrap();
    let cfg = TrainConfig {
        gamma: 0.0,
        epsilon: EpsilonSchedule { initial: 1.0, decay: 1.0, floor: 1.0 },
        episodes: 4000,
        ..quick(2, 0)
    };
    let r = train(&map, &cfg, &FilterConfig::None).unwrap();
    let q = r.nets.online.forward(&observe(&map, &reset(&map), 0)).unwrap();
    for a in Action::ALL {
        let expected = match a {
            Action::E => 201.0,
            Action::Stay => 0.0,
            _ => -20.0,
        };
        assert!((q[a.index()] - expected).abs() <= 0.1, "{a:?}: {} vs {expected}", q[a.index()]);
    }
}

#[test]
fn adjacent_target_is_learned_quickly() {
    let map = parse_map("ST").unwrap();
    let r = train(&map, &quick(0, 300), &FilterConfig::None).unwrap();
    let tail = &r.records[200..];
    let rate = tail.iter().filter(|e| e.success()).count() as f64 / tail.len() as f64;
    assert!(rate >= 0.95, "trailing success {rate}");
    assert!(evaluate_greedy(&r.nets.online, &map, 10).unwrap().success);
}

#[test]
fn successful_greedy_paths_are_feasible() {
    let map = parse_map("S...T\n.....\nS...T").unwrap();
    for f in filters() {
        let r = train(&map, &quick(3, 400), &f).unwrap();
        let rollout = evaluate_greedy(&r.nets.online, &map, map.default_max_steps()).unwrap();
        assert!(rollout.success, "{:?} did not learn the lanes", f.algorithm());
        let rep = check_constraints(&rollout.paths, &map, &PathConstraints::default()).unwrap();
        assert!(rep
            .kinds()
            .iter()
            .all(|(_, k)| !matches!(k, ViolationKind::Obstacle | ViolationKind::MutualCollision)));
        for (i, p) in rollout.paths.iter().enumerate() {
            let bfs = bfs_shortest(&map, map.starts()[i], map.targets()[i]).unwrap();
            assert!(r.summary.greedy.path_moves[i] >= bfs);
            assert!(p.is_contiguous());
        }
    }
}

#[test]
fn traces_cover_requested_steps() {
    let map = parse_map(include_str!("../maps/trivial_3x3.map")).unwrap();
    let cfg = TrainConfig { trace_steps: 5, ..quick(0, 30) };
    let r = train(&map, &cfg, &FilterConfig::None).unwrap();
    assert_eq!(r.trace.len(), 5);
    assert_eq!(r.trace[0].train_step, 1);
    assert_eq!(r.trace[0].batch.len(), cfg.batch_size);
    assert_eq!(r.trace[4].weights.len(), cfg.layer_spec().param_count());
}

#[test]
fn pf_median_solution_not_behind_ddqn_on_trivial_map() {
    let map = parse_map(include_str!("../maps/trivial_3x3.map")).unwrap();
    let solve = |f: &FilterConfig| -> Vec<usize> {
        let mut sols: Vec<usize> = (0..5)
            .map(|seed| {
                let cfg = TrainConfig {
                    episodes: 2000,
                    batch_size: 32,
                    memory_size: 2000,
                    epsilon: EpsilonSchedule { initial: 1.0, decay: 0.995, floor: 0.001 },
                    stop_on_solution: true,
                    ..quick(seed, 0)
                };
                let r = train(&map, &cfg, f).unwrap();
                r.summary.solution_episode.unwrap_or(usize::MAX)
            })
            .collect();
        sols.sort_unstable();
        sols
    };
    let pf = solve(&FilterConfig::Particle(PfConfig { process_sigma: 1e-4, ..PfConfig::default() }));
    let ddqn = solve(&FilterConfig::None);
    assert!(pf[2] <= ddqn[2], "median {} vs {} ({pf:?} vs {ddqn:?})", pf[2], ddqn[2]);
}
