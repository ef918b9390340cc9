//! Runs the path constraint checker on a few hand-made path sets and prints
//! the violation lists as JSON.
//!
//! cargo run --example path_constraints

use agvlab::gridworld::{Cell, GridMap, Position};
use agvlab::pathmetrics::{check_constraints, path_length, yaw_angles, Path, PathConstraints};

fn main() -> agvlab::Result<()> {
    let mut cells = vec![Cell::Free; 25];
    cells[2 * 5 + 2] = Cell::Obstacle;
    let map = GridMap::new(
        5,
        5,
        cells,
        vec![Position::new(0, 0), Position::new(4, 0)],
        vec![Position::new(4, 4), Position::new(0, 4)],
    )?;
    let sets = [
        (
            "around the block",
            vec![
                Path::from_xy(&[(0, 0), (1, 0), (2, 0), (3, 1), (4, 2), (4, 3), (4, 4)]),
                Path::from_xy(&[(4, 0), (4, 0), (3, 0), (2, 1), (1, 2), (0, 3), (0, 4)]),
            ],
        ),
        (
            "straight through",
            vec![
                Path::from_xy(&[(0, 0), (1, 1), (2, 2), (3, 3), (4, 4)]),
                Path::from_xy(&[(4, 0), (3, 1), (2, 1), (1, 2), (0, 3), (0, 4)]),
            ],
        ),
    ];
    let limits = PathConstraints { length_min: 0.0, length_max: 7.0, yaw_min: 0.0, yaw_max: 45.0 };
    for (name, paths) in &sets {
        println!("== {name}");
        for (i, p) in paths.iter().enumerate() {
            println!("path {i}: length {:.3}, turns {:?}", path_length(p), yaw_angles(p));
        }
        let report = check_constraints(paths, &map, &limits)?;
        println!("arrival ticks {:?}, spread {:?}", report.arrival_ticks, report.arrival_spread);
        println!("{}", report.to_json()?);
    }
    Ok(())
}
