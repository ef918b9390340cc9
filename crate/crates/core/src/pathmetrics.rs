//! Path-quality objective, yaw angles, the path constraint system, and a BFS
//! shortest-path oracle on the 8-connected grid.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gridworld::{Action, GridMap, Position};

/// Waypoints, one per tick.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Path {
    pub waypoints: Vec<Position>,
}

impl Path {
    pub fn new(waypoints: Vec<Position>) -> Self {
        Self { waypoints }
    }

    /// Parses `(x, y)` tuples, mostly for tests.
    pub fn from_xy(points: &[(usize, usize)]) -> Self {
        Self::new(points.iter().map(|&(x, y)| Position::new(x, y)).collect())
    }

    pub fn len(&self) -> usize {
        self.waypoints.len()
    }

    pub fn is_empty(&self) -> bool {
        self.waypoints.is_empty()
    }

    /// Ticks where the position changed.
    pub fn move_count(&self) -> usize {
        self.waypoints.windows(2).filter(|w| w[0] != w[1]).count()
    }

    /// Whether consecutive waypoints are at most one grid move apart.
    pub fn is_contiguous(&self) -> bool {
        self.waypoints.windows(2).all(|w| w[0].chebyshev(w[1]) <= 1)
    }

    /// First tick at which the path sits at `target` and stays there.
    pub fn arrival_tick(&self, target: Position) -> Option<usize> {
        let last_off = self.waypoints.iter().rposition(|p| *p != target);
        match last_off {
            None if self.waypoints.is_empty() => None,
            None => Some(0),
            Some(i) if i + 1 < self.waypoints.len() => Some(i + 1),
            Some(_) => None,
        }
    }
}

/// Sum of Euclidean segment lengths, in cells.
pub fn path_length(path: &Path) -> f64 {
    path.waypoints
        .windows(2)
        .map(|w| w[0].euclidean(w[1]))
        .sum()
}

/// Sum of all path lengths.
pub fn total_objective(paths: &[Path]) -> f64 {
    paths.iter().map(path_length).sum()
}

/// Slack on length and yaw bounds, so a 45 degree turn passes a 45 degree cap.
const BOUND_TOL: f64 = 1e-9;

/// Turn angles in degrees between consecutive non-degenerate segments.
/// Zero-length segments are dropped first.
pub fn yaw_angles(path: &Path) -> Vec<f64> {
    let segments: Vec<(f64, f64)> = path
        .waypoints
        .windows(2)
        .filter(|w| w[0] != w[1])
        .map(|w| {
            (
                w[1].x as f64 - w[0].x as f64,
                w[1].y as f64 - w[0].y as f64,
            )
        })
        .collect();
    segments
        .windows(2)
        .map(|s| {
            let (a, b) = (s[0], s[1]);
            let cross = a.0 * b.1 - a.1 * b.0;
            let dot = a.0 * b.0 + a.1 * b.1;
            cross.abs().atan2(dot).to_degrees()
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PathConstraints {
    pub length_min: f64,
    pub length_max: f64,
    pub yaw_min: f64,
    pub yaw_max: f64,
}

impl Default for PathConstraints {
    /// No effective limits.
    fn default() -> Self {
        Self {
            length_min: 0.0,
            length_max: f64::INFINITY,
            yaw_min: 0.0,
            yaw_max: 180.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ViolationKind {
    Length,
    Yaw,
    Obstacle,
    MutualCollision,
    ArrivalSpread,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    pub path_index: usize,
    pub kind: ViolationKind,
    /// Tick (or turn index for yaw) where the violation occurs, if local.
    pub tick: Option<usize>,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ViolationReport {
    pub violations: Vec<Violation>,
    /// Arrival tick per path; `None` if the path never settles on its target.
    pub arrival_ticks: Vec<Option<usize>>,
    /// Largest minus smallest arrival tick among paths that arrive.
    pub arrival_spread: Option<usize>,
}

impl ViolationReport {
    pub fn is_feasible(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn kinds(&self) -> Vec<(usize, ViolationKind)> {
        self.violations.iter().map(|v| (v.path_index, v.kind)).collect()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&self.violations)?)
    }
}

/// Checks tick-aligned paths against the five constraint families: length
/// bounds, yaw bounds, obstacle contact, pairwise collisions (same cell at the
/// same tick, or swapping cells between ticks), and equal arrival ticks.
///
/// Shorter paths are padded by holding their last waypoint, but only if they
/// end on their target; otherwise unequal lengths are an error.
pub fn check_constraints(
    paths: &[Path],
    map: &GridMap,
    c: &PathConstraints,
) -> Result<ViolationReport> {
    let horizon = paths.iter().map(Path::len).max().unwrap_or(0);
    let targets = map.targets();
    let mut aligned = Vec::with_capacity(paths.len());
    for (i, p) in paths.iter().enumerate() {
        if p.is_empty() {
            return Err(Error::MisalignedPaths(format!("path {i} is empty")));
        }
        let mut w = p.waypoints.clone();
        if w.len() < horizon {
            let last = *w.last().unwrap();
            if targets.get(i) != Some(&last) {
                return Err(Error::MisalignedPaths(format!(
                    "path {i} has {} ticks, expected {horizon}, and does not end on its target",
                    w.len()
                )));
            }
            w.resize(horizon, last);
        }
        aligned.push(w);
    }

    let mut report = ViolationReport::default();
    let mut push = |path_index, kind, tick, detail: String| {
        report.violations.push(Violation {
            path_index,
            kind,
            tick,
            detail,
        })
    };

    for (i, path) in paths.iter().enumerate() {
        let len = path_length(path);
        if len < c.length_min - BOUND_TOL || len > c.length_max + BOUND_TOL {
            push(
                i,
                ViolationKind::Length,
                None,
                format!("length {len:.4} outside [{}, {}]", c.length_min, c.length_max),
            );
        }
        for (k, yaw) in yaw_angles(path).into_iter().enumerate() {
            if yaw < c.yaw_min - BOUND_TOL || yaw > c.yaw_max + BOUND_TOL {
                push(
                    i,
                    ViolationKind::Yaw,
                    Some(k),
                    format!("turn {k} is {yaw:.2} deg outside [{}, {}]", c.yaw_min, c.yaw_max),
                );
            }
        }
        for (t, p) in aligned[i].iter().enumerate() {
            if !map.is_free(*p) {
                push(i, ViolationKind::Obstacle, Some(t), format!("waypoint {p} is blocked"));
            }
        }
    }

    for t in 0..horizon {
        for i in 0..aligned.len() {
            for j in i + 1..aligned.len() {
                let (a, b) = (&aligned[i], &aligned[j]);
                if a[t] == b[t] {
                    push(
                        i,
                        ViolationKind::MutualCollision,
                        Some(t),
                        format!("paths {i} and {j} both at {} at tick {t}", a[t]),
                    );
                } else if t + 1 < horizon && a[t] == b[t + 1] && a[t + 1] == b[t] {
                    push(
                        i,
                        ViolationKind::MutualCollision,
                        Some(t + 1),
                        format!("paths {i} and {j} swap {} <-> {} at tick {}", a[t], b[t], t + 1),
                    );
                }
            }
        }
    }

    let arrivals: Vec<Option<usize>> = paths
        .iter()
        .enumerate()
        .map(|(i, p)| targets.get(i).and_then(|t| p.arrival_tick(*t)))
        .collect();
    let arrived: Vec<usize> = arrivals.iter().flatten().copied().collect();
    let spread = match (arrived.iter().min(), arrived.iter().max()) {
        (Some(lo), Some(hi)) => Some(hi - lo),
        _ => None,
    };
    // Flag paths that never arrive, and paths that arrive before the latest one.
    let latest = arrived.iter().max().copied();
    for (i, a) in arrivals.iter().enumerate() {
        match (a, latest) {
            (None, _) => push(i, ViolationKind::ArrivalSpread, None, "never arrives".into()),
            (Some(t), Some(last)) if *t < last => push(
                i,
                ViolationKind::ArrivalSpread,
                Some(*t),
                format!("arrives at tick {t}, latest arrival is tick {last}"),
            ),
            _ => {}
        }
    }
    report.arrival_ticks = arrivals;
    report.arrival_spread = spread;
    Ok(report)
}

/// Minimum number of 8-connected moves from `start` to `goal` avoiding
/// obstacles, or `None` if unreachable.
pub fn bfs_shortest(map: &GridMap, start: Position, goal: Position) -> Option<usize> {
    if !map.is_free(start) || !map.is_free(goal) {
        return None;
    }
    let w = map.width();
    let mut dist = vec![usize::MAX; w * map.height()];
    let mut queue = VecDeque::new();
    dist[start.y * w + start.x] = 0;
    queue.push_back(start);
    while let Some(p) = queue.pop_front() {
        let d = dist[p.y * w + p.x];
        if p == goal {
            return Some(d);
        }
        for a in &Action::ALL[..8] {
            if let Some(q) = map.neighbor(p, *a).filter(|q| !map.is_obstacle(*q)) {
                let slot = &mut dist[q.y * w + q.x];
                if *slot == usize::MAX {
                    *slot = d + 1;
                    queue.push_back(q);
                }
            }
        }
    }
    None
}
