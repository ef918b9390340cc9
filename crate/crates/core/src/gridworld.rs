//! Deterministic multi-agent grid environment.
//!
//! Agents move one cell per tick under Chebyshev kinematics (diagonals cost a
//! single tick). Rewards follow a fixed component table:
//!
//! | event                                   | reward |
//! |-----------------------------------------|--------|
//! | position changed                        | -4     |
//! | global distance sum decreased/increased | +5/-5  |
//! | agent lands on its target               | +200   |
//! | proposed cell is obstacle/out of bounds | -20    |
//! | each conflicting agent pair             | -20    |
//!
//! Any collision ends the episode. Agents that reach their target freeze in
//! place and become invisible to the collision rules.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MOVE_PENALTY: f64 = -4.0;
pub const PROGRESS_REWARD: f64 = 5.0;
pub const TARGET_REWARD: f64 = 200.0;
pub const COLLISION_PENALTY: f64 = -20.0;

/// Length of the per-agent observation vector produced by [`observe`].
pub const OBS_DIM: usize = 14;

/// Distance-sum changes smaller than this count as "unchanged".
const DISTANCE_EPS: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Position {
    pub x: usize,
    pub y: usize,
}

impl Position {
    pub const fn new(x: usize, y: usize) -> Self {
        Self { x, y }
    }

    pub fn euclidean(self, other: Position) -> f64 {
        let dx = self.x as f64 - other.x as f64;
        let dy = self.y as f64 - other.y as f64;
        dx.hypot(dy)
    }

    pub fn chebyshev(self, other: Position) -> usize {
        self.x.abs_diff(other.x).max(self.y.abs_diff(other.y))
    }

    /// Displaces by `(dx, dy)`; `None` if the result leaves the first quadrant.
    pub fn offset(self, dx: i64, dy: i64) -> Option<Position> {
        let x = self.x as i64 + dx;
        let y = self.y as i64 + dy;
        (x >= 0 && y >= 0).then(|| Position::new(x as usize, y as usize))
    }
}

impl fmt::Display for Position {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {})", self.x, self.y)
    }
}

/// The nine moves. `y` grows downward (row index), so `N` is `dy = -1`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[repr(u8)]
pub enum Action {
    N = 0,
    S = 1,
    E = 2,
    W = 3,
    NE = 4,
    SE = 5,
    NW = 6,
    SW = 7,
    Stay = 8,
}

impl Action {
    pub const COUNT: usize = 9;

    pub const ALL: [Action; 9] = [
        Action::N,
        Action::S,
        Action::E,
        Action::W,
        Action::NE,
        Action::SE,
        Action::NW,
        Action::SW,
        Action::Stay,
    ];

    pub fn from_index(index: usize) -> Option<Action> {
        Self::ALL.get(index).copied()
    }

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn delta(self) -> (i64, i64) {
        match self {
            Action::N => (0, -1),
            Action::S => (0, 1),
            Action::E => (1, 0),
            Action::W => (-1, 0),
            Action::NE => (1, -1),
            Action::SE => (1, 1),
            Action::NW => (-1, -1),
            Action::SW => (-1, 1),
            Action::Stay => (0, 0),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Cell {
    Free,
    Obstacle,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridMap {
    width: usize,
    height: usize,
    cells: Vec<Cell>,
    starts: Vec<Position>,
    targets: Vec<Position>,
    pub cell_size_m: f64,
}

impl GridMap {
    /// Builds a map from parts, checking every structural invariant.
    pub fn new(
        width: usize,
        height: usize,
        cells: Vec<Cell>,
        starts: Vec<Position>,
        targets: Vec<Position>,
    ) -> Result<Self> {
        let bad = |msg: String| Err(Error::MalformedMap(msg));
        if width < 1 || height < 1 || width * height < 2 {
            return bad(format!("map {width}x{height} is too small"));
        }
        if cells.len() != width * height {
            return bad(format!("expected {} cells, got {}", width * height, cells.len()));
        }
        if starts.is_empty() {
            return bad("no start cells".into());
        }
        if starts.len() != targets.len() {
            return bad(format!(
                "{} starts but {} targets",
                starts.len(),
                targets.len()
            ));
        }
        let map = Self {
            width,
            height,
            cells,
            starts,
            targets,
            cell_size_m: 2.0,
        };
        for (kind, list) in [("start", &map.starts), ("target", &map.targets)] {
            for p in list {
                if !map.in_bounds(*p) {
                    return bad(format!("{kind} {p} is out of bounds"));
                }
                if map.is_obstacle(*p) {
                    return bad(format!("{kind} {p} is on an obstacle"));
                }
            }
        }
        for (i, a) in map.starts.iter().enumerate() {
            if map.starts[..i].contains(a) {
                return bad(format!("duplicate start {a}"));
            }
        }
        Ok(map)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn agent_count(&self) -> usize {
        self.starts.len()
    }

    pub fn starts(&self) -> &[Position] {
        &self.starts
    }

    pub fn targets(&self) -> &[Position] {
        &self.targets
    }

    pub fn in_bounds(&self, p: Position) -> bool {
        p.x < self.width && p.y < self.height
    }

    pub fn cell(&self, p: Position) -> Cell {
        self.cells[p.y * self.width + p.x]
    }

    pub fn is_obstacle(&self, p: Position) -> bool {
        self.cell(p) == Cell::Obstacle
    }

    /// True when `p` is in bounds and not an obstacle.
    pub fn is_free(&self, p: Position) -> bool {
        self.in_bounds(p) && !self.is_obstacle(p)
    }

    /// Cell reached from `p` by `action`, or `None` when it leaves the grid.
    pub fn neighbor(&self, p: Position, action: Action) -> Option<Position> {
        let (dx, dy) = action.delta();
        p.offset(dx, dy).filter(|q| self.in_bounds(*q))
    }

    /// Recommended per-episode step cap: 100 for small maps, 300 otherwise.
    pub fn default_max_steps(&self) -> usize {
        if self.width <= 12 && self.height <= 12 {
            100
        } else {
            300
        }
    }

    /// Renders the map back into the text format accepted by [`parse_map`].
    pub fn to_text(&self) -> String {
        let mut out = String::with_capacity((self.width + 1) * self.height);
        for y in 0..self.height {
            for x in 0..self.width {
                let p = Position::new(x, y);
                let glyph = if self.starts.contains(&p) {
                    'S'
                } else if self.targets.contains(&p) {
                    'T'
                } else if self.is_obstacle(p) {
                    '#'
                } else {
                    '.'
                };
                out.push(glyph);
            }
            out.push('\n');
        }
        out
    }
}

/// Parses the map text format.
///
/// `.` free, `#` obstacle, `S` start, `T` target. Agents and targets are
/// numbered in reading order. A single `T` with several `S` is shared by all
/// agents. Digits are reserved and rejected, as is any other glyph.
pub fn parse_map(text: &str) -> Result<GridMap> {
    let rows: Vec<&str> = text
        .lines()
        .map(|l| l.strip_suffix('\r').unwrap_or(l))
        .collect();
    let rows: &[&str] = match rows.iter().rposition(|r| !r.is_empty()) {
        Some(last) => &rows[..=last],
        None => return Err(Error::MalformedMap("empty map".into())),
    };
    let width = rows[0].chars().count();
    let mut cells = Vec::with_capacity(width * rows.len());
    let mut starts = Vec::new();
    let mut targets = Vec::new();
    for (y, row) in rows.iter().enumerate() {
        if row.chars().count() != width {
            return Err(Error::MalformedMap(format!(
                "row {y} has length {} but row 0 has length {width}",
                row.chars().count()
            )));
        }
        for (x, glyph) in row.chars().enumerate() {
            let p = Position::new(x, y);
            let cell = match glyph {
                '.' => Cell::Free,
                '#' => Cell::Obstacle,
                'S' => {
                    starts.push(p);
                    Cell::Free
                }
                'T' => {
                    targets.push(p);
                    Cell::Free
                }
                other => {
                    return Err(Error::MalformedMap(format!(
                        "unknown glyph {other:?} at {p}"
                    )))
                }
            };
            cells.push(cell);
        }
    }
    if targets.len() == 1 && starts.len() > 1 {
        targets = vec![targets[0]; starts.len()];
    }
    GridMap::new(width, rows.len(), cells, starts, targets)
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct WorldState {
    pub positions: Vec<Position>,
    pub reached: Vec<bool>,
    pub step: usize,
    /// Set once a collision has ended the episode.
    #[serde(default)]
    pub collided: bool,
}

impl WorldState {
    pub fn active(&self, agent: usize) -> bool {
        !self.reached[agent]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Cause {
    AllReached,
    ObstacleCollision,
    AgentCollision,
    Timeout,
    Running,
}

impl Cause {
    pub fn as_str(self) -> &'static str {
        match self {
            Cause::AllReached => "all_reached",
            Cause::ObstacleCollision => "obstacle_collision",
            Cause::AgentCollision => "agent_collision",
            Cause::Timeout => "timeout",
            Cause::Running => "running",
        }
    }

    pub fn parse(s: &str) -> Option<Cause> {
        [
            Cause::AllReached,
            Cause::ObstacleCollision,
            Cause::AgentCollision,
            Cause::Timeout,
            Cause::Running,
        ]
        .into_iter()
        .find(|c| c.as_str() == s)
    }
}

impl fmt::Display for Cause {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// What happened to one agent during a tick.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AgentEvents {
    pub moved: bool,
    pub closer: bool,
    pub farther: bool,
    pub hit_obstacle: bool,
    /// Number of conflicting agent pairs this agent belonged to.
    pub hit_agents: u32,
    pub reached_target: bool,
}

impl AgentEvents {
    /// Reward implied by the flags alone.
    pub fn reward(&self) -> f64 {
        let mut r = 0.0;
        if self.moved {
            r += MOVE_PENALTY;
        }
        if self.closer {
            r += PROGRESS_REWARD;
        }
        if self.farther {
            r -= PROGRESS_REWARD;
        }
        if self.reached_target {
            r += TARGET_REWARD;
        }
        if self.hit_obstacle {
            r += COLLISION_PENALTY;
        }
        r + COLLISION_PENALTY * f64::from(self.hit_agents)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepOutcome {
    pub rewards: Vec<f64>,
    pub terminal: bool,
    pub cause: Cause,
    pub events: Vec<AgentEvents>,
}

pub fn reset(map: &GridMap) -> WorldState {
    WorldState {
        positions: map.starts.clone(),
        reached: vec![false; map.agent_count()],
        step: 0,
        collided: false,
    }
}

/// Sum of Euclidean distances to target over agents that have not arrived.
pub fn distance_sum(map: &GridMap, state: &WorldState) -> f64 {
    state
        .positions
        .iter()
        .zip(&map.targets)
        .zip(&state.reached)
        .filter(|(_, reached)| !**reached)
        .map(|((p, t), _)| p.euclidean(*t))
        .sum()
}

/// Whether every agent has arrived.
pub fn all_reached(state: &WorldState) -> bool {
    state.reached.iter().all(|r| *r)
}

/// Advances the world by one tick.
pub fn step(
    map: &GridMap,
    state: &WorldState,
    actions: &[Action],
    max_steps: usize,
) -> Result<(WorldState, StepOutcome)> {
    let m = map.agent_count();
    if state.collided || all_reached(state) || state.step >= max_steps {
        return Err(Error::SteppedTerminalState);
    }
    if actions.len() != m || state.positions.len() != m {
        return Err(Error::ShapeMismatch {
            what: "actions",
            expected: m,
            got: actions.len(),
        });
    }

    let mut events = vec![AgentEvents::default(); m];
    let active: Vec<bool> = state.reached.iter().map(|r| !r).collect();
    let current = &state.positions;

    let mut proposed = current.clone();
    for i in (0..m).filter(|&i| active[i]) {
        match map.neighbor(current[i], actions[i]) {
            Some(q) if !map.is_obstacle(q) => proposed[i] = q,
            _ => {
                // Stay never leaves the map, so this is a real bump.
                events[i].hit_obstacle = true;
            }
        }
    }

    // Swaps are judged on the original proposals.
    let mut reverted = vec![false; m];
    for i in 0..m {
        for j in i + 1..m {
            if !(active[i] && active[j]) {
                continue;
            }
            let swap = proposed[i] == current[j]
                && proposed[j] == current[i]
                && proposed[i] != current[i];
            if swap {
                events[i].hit_agents += 1;
                events[j].hit_agents += 1;
                reverted[i] = true;
                reverted[j] = true;
            }
        }
    }
    for i in 0..m {
        if reverted[i] {
            proposed[i] = current[i];
        }
    }
    // Coinciding cells; reverting can expose new conflicts, so iterate.
    loop {
        let mut changed = false;
        for i in 0..m {
            for j in i + 1..m {
                if active[i] && active[j] && proposed[i] == proposed[j] {
                    events[i].hit_agents += 1;
                    events[j].hit_agents += 1;
                    proposed[i] = current[i];
                    proposed[j] = current[j];
                    changed = true;
                }
            }
        }
        if !changed {
            break;
        }
    }

    let before: f64 = (0..m)
        .filter(|&i| active[i])
        .map(|i| current[i].euclidean(map.targets[i]))
        .sum();
    let after: f64 = (0..m)
        .filter(|&i| active[i])
        .map(|i| proposed[i].euclidean(map.targets[i]))
        .sum();
    let closer = after < before - DISTANCE_EPS;
    let farther = after > before + DISTANCE_EPS;

    let mut reached = state.reached.clone();
    for i in (0..m).filter(|&i| active[i]) {
        let ev = &mut events[i];
        ev.moved = proposed[i] != current[i];
        ev.closer = closer;
        ev.farther = farther;
        if proposed[i] == map.targets[i] {
            ev.reached_target = true;
            reached[i] = true;
        }
    }

    let rewards = events.iter().map(AgentEvents::reward).collect();
    let collided = events.iter().any(|e| e.hit_obstacle || e.hit_agents > 0);
    let next = WorldState {
        positions: proposed,
        reached,
        step: state.step + 1,
        collided,
    };
    let cause = if events.iter().any(|e| e.hit_obstacle) {
        Cause::ObstacleCollision
    } else if events.iter().any(|e| e.hit_agents > 0) {
        Cause::AgentCollision
    } else if all_reached(&next) {
        Cause::AllReached
    } else if next.step >= max_steps {
        Cause::Timeout
    } else {
        Cause::Running
    };
    Ok((
        next,
        StepOutcome {
            rewards,
            terminal: cause != Cause::Running,
            cause,
            events,
        },
    ))
}

/// Per-agent feature vector of length [`OBS_DIM`]:
/// own position, offset to target, 8 neighbour occupancy flags in action
/// order, and offset to the nearest other active agent, all scaled by the
/// map dimensions.
pub fn observe(map: &GridMap, state: &WorldState, agent: usize) -> Vec<f64> {
    let w = map.width as f64;
    let h = map.height as f64;
    let p = state.positions[agent];
    let t = map.targets[agent];
    let mut obs = Vec::with_capacity(OBS_DIM);
    obs.push(p.x as f64 / w);
    obs.push(p.y as f64 / h);
    obs.push((t.x as f64 - p.x as f64) / w);
    obs.push((t.y as f64 - p.y as f64) / h);

    let others = || {
        (0..state.positions.len())
            .filter(move |&j| j != agent && !state.reached[j])
            .map(|j| state.positions[j])
    };
    for action in &Action::ALL[..8] {
        let blocked = match map.neighbor(p, *action) {
            None => true,
            Some(q) => map.is_obstacle(q) || others().any(|o| o == q),
        };
        obs.push(if blocked { 1.0 } else { 0.0 });
    }

    let mut nearest: Option<(f64, Position)> = None;
    for o in others() {
        let d = p.euclidean(o);
        if nearest.is_none_or(|(best, _)| d < best) {
            nearest = Some((d, o));
        }
    }
    match nearest {
        Some((_, o)) => {
            obs.push((o.x as f64 - p.x as f64) / w);
            obs.push((o.y as f64 - p.y as f64) / h);
        }
        None => obs.extend([0.0, 0.0]),
    }
    obs
}
