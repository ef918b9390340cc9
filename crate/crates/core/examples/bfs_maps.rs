//! Prints the BFS lower bound for every start/target pair of the bundled maps.
//!
//! cargo run --example bfs_maps

use agvlab::parse_map;
use agvlab::pathmetrics::bfs_shortest;

fn main() -> agvlab::Result<()> {
    let maps = [
        ("trivial_3x3", include_str!("../maps/trivial_3x3.map")),
        ("small_10x10", include_str!("../maps/small_10x10.map")),
        ("exp1_30x30", include_str!("../maps/exp1_30x30.map")),
        ("exp2_30x30_10agv", include_str!("../maps/exp2_30x30_10agv.map")),
    ];
    for (name, text) in maps {
        let map = parse_map(text)?;
        let bounds: Vec<String> = map
            .starts()
            .iter()
            .zip(map.targets())
            .map(|(s, t)| bfs_shortest(&map, *s, *t).map_or("unreachable".into(), |d| d.to_string()))
            .collect();
        println!("{name:18} {}x{} agents {:2}: {}", map.width(), map.height(), map.agent_count(), bounds.join(" "));
    }
    Ok(())
}
