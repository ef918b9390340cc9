//! The full command-line workflow in one process: train every algorithm over
//! three seeds into a temporary directory, then print the comparison table.
//!
//! cargo run --release --example compare_runs -- [episodes]

use agvlab::harness::{compare, parse_run_spec, run_experiment};
use agvlab::Algorithm;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let episodes = std::env::args().nth(1).unwrap_or_else(|| "800".into());
    let root = std::env::temp_dir().join(format!("agvlab-compare-{}", std::process::id()));
    let map = root.join("trivial.map");
    std::fs::create_dir_all(&root)?;
    std::fs::write(&map, include_str!("../maps/trivial_3x3.map"))?;
    let mut dirs = Vec::new();
    for alg in Algorithm::ALL {
        let out = root.join(alg.as_str());
        let spec = parse_run_spec([
            "--algorithm", alg.as_str(),
            "--map", map.to_str().unwrap(),
            "--out", out.to_str().unwrap(),
            "--episodes", &episodes,
            "--seed", "0,1,2",
            "--batch", "32",
            "--memory", "2000",
            "--lr", "1e-3",
            "--eps-decay", "0.995",
            "--solution-window", "100",
            "--solution-threshold", "0.95",
            "--proc-sigma", "1e-4",
            "--ekf-mode", "diagonal",
        ])?;
        let written = run_experiment(&spec)?;
        println!("{alg}: wrote {} files under {}", written.len(), out.display());
        dirs.push(out);
    }
    println!("{}", compare(&dirs)?.to_table());
    std::fs::remove_dir_all(&root)?;
    Ok(())
}
