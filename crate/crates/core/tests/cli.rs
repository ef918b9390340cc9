use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

use agvlab::harness::{self, parse_run_spec, SummaryFile, CURVE_HEADER, METRICS_HEADER};

const MAP: &str = concat!(env!("CARGO_MANIFEST_DIR"), "/maps/trivial_3x3.map");

fn agvlab(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_agvlab")).args(args).output().unwrap()
}

fn train_args<'a>(algorithm: &'a str, out: &'a str, seeds: &'a str) -> Vec<&'a str> {
    vec![
        "--algorithm", algorithm, "--map", MAP, "--episodes", "40", "--seed", seeds, "--out", out,
        "--batch", "8", "--memory", "200", "--eps-decay", "0.95", "--lr", "0.001",
        "--particles", "6", "--proc-sigma", "0.0001", "--ekf-mode", "diagonal",
    ]
}

fn read_csv(path: &Path) -> Vec<Vec<String>> {
    let mut r = csv::ReaderBuilder::new().has_headers(false).from_path(path).unwrap();
    r.records().map(|x| x.unwrap().iter().map(String::from).collect()).collect()
}

#[test]
fn two_seeds_write_eight_files() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let spec = parse_run_spec(train_args("ddqn", out.to_str().unwrap(), "1,2")).unwrap();
    let dirs = harness::run_experiment(&spec).unwrap();
    assert_eq!(dirs.len(), 2);
    let mut files: Vec<PathBuf> = Vec::new();
    for d in &dirs {
        for e in fs::read_dir(d).unwrap() {
            let p = e.unwrap().path();
            assert!(fs::metadata(&p).unwrap().len() > 0, "{} is empty", p.display());
            files.push(p);
        }
    }
    assert_eq!(files.len(), 8);
    assert_ne!(dirs[0], dirs[1]);

    let metrics = read_csv(&dirs[0].join("metrics.csv"));
    assert_eq!(metrics[0], METRICS_HEADER);
    assert!(metrics.iter().all(|r| r.len() == 6));
    let episodes: Vec<usize> = metrics[1..].iter().map(|r| r[0].parse().unwrap()).collect();
    assert!(episodes.windows(2).all(|w| w[1] > w[0]));
    assert_eq!(episodes.len(), 40);

    // Recompute the trailing mean from the metrics rows.
    let curve = read_csv(&dirs[0].join("curve.csv"));
    assert_eq!(curve[0], CURVE_HEADER);
    let rewards: Vec<f64> = metrics[1..].iter().map(|r| r[1].parse().unwrap()).collect();
    for (e, row) in curve[1..].iter().enumerate() {
        let lo = e.saturating_sub(499);
        let mean = rewards[lo..=e].iter().sum::<f64>() / (e - lo + 1) as f64;
        let got: f64 = row[1].parse().unwrap();
        assert!((got - mean).abs() < 1e-9, "episode {e}: {got} vs {mean}");
    }

    let text = fs::read_to_string(dirs[1].join("summary.json")).unwrap();
    let summary: SummaryFile = serde_json::from_str(&text).unwrap();
    assert_eq!(summary.summary.seed, 2);
    assert_eq!(summary.config.batch_size, 8);
    assert_eq!(serde_json::from_str::<SummaryFile>(&serde_json::to_string(&summary).unwrap()).unwrap(), summary);
}

#[test]
fn train_eval_compare_from_the_command_line() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    for alg in ["ddqn", "pf-ddqn", "ekf-ddqn"] {
        let out = root.join(alg);
        let mut args = vec!["train"];
        args.extend(train_args(alg, out.to_str().unwrap(), "0,1"));
        args.push("--save-checkpoint");
        let o = agvlab(&args);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        assert!(out.join("seed_1").join("checkpoint.json").is_file());
    }

    let ck = root.join("pf-ddqn/seed_0/checkpoint.json");
    let o = agvlab(&["eval", "--checkpoint", ck.to_str().unwrap(), "--map", MAP]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let report: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert!(report["rollout"]["paths"].is_array());

    let dirs: Vec<String> = ["ddqn", "pf-ddqn", "ekf-ddqn"]
        .iter()
        .map(|a| root.join(a).to_str().unwrap().to_string())
        .collect();
    let mut args = vec!["compare"];
    args.extend(dirs.iter().map(String::as_str));
    let o = agvlab(&args);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let table = String::from_utf8(o.stdout).unwrap();
    for needle in ["ddqn", "pf-ddqn", "ekf-ddqn", "pf-ddqn vs ddqn", "of 2 paired seeds"] {
        assert!(table.contains(needle), "{needle} missing from\n{table}");
    }
}

#[test]
fn usage_errors_exit_nonzero() {
    let o = agvlab(&["train", "--algorithm", "qqn", "--map", MAP, "--episodes", "1", "--seed", "0"]);
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("qqn"));
    let dir = tempfile::tempdir().unwrap();
    let o = agvlab(&["compare", dir.path().to_str().unwrap()]);
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("no completed run"));
}

#[test]
fn config_file_drives_a_run() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.json");
    let out = dir.path().join("out");
    fs::write(
        &cfg,
        serde_json::json!({
            "algorithm": "ekf-ddqn", "map": MAP, "episodes": 5, "seed": 3,
            "out": out, "batch": 4, "memory": 50, "ekf-mode": "diagonal", "no-timing": true
        })
        .to_string(),
    )
    .unwrap();
    let o = agvlab(&["train", "--config", cfg.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let metrics = read_csv(&out.join("seed_3/metrics.csv"));
    assert_eq!(metrics.len(), 6);
    assert!(metrics[1..].iter().all(|r| r[5] == "0.000"));
}
