//! Multi-AGV path planning on occupancy grids.
//!
//! A shared Q-network drives every agent on a grid map. Three trainers are
//! provided: plain double DQN, and two variants that treat the network
//! weights as a hidden state and refine them after each SGD step, one with a
//! particle filter and one with an extended Kalman filter.
//!
//! ```
//! use agvlab::gridworld::{parse_map, reset, step, Action};
//!
//! let map = parse_map("S..\n...\n..T").unwrap();
//! let s0 = reset(&map);
//! let (s1, out) = step(&map, &s0, &[Action::SE], map.default_max_steps()).unwrap();
//! assert_eq!(out.rewards, vec![1.0]);
//! assert_eq!((s1.positions[0].x, s1.positions[0].y), (1, 1));
//! ```

pub mod ddqn;
pub mod ekf;
pub mod error;
pub mod gridworld;
pub mod harness;
pub mod neuralnet;
pub mod pathmetrics;
pub mod pf;
pub mod replay;
pub mod trainers;

pub use error::{Error, Result};
pub use gridworld::{parse_map, Action, Cause, GridMap, Position};
pub use neuralnet::{LayerSpec, NetworkParams};
pub use trainers::{Algorithm, FilterConfig, TrainConfig, TrainResult};
