use std::path::{Path, PathBuf};
use std::process::Command;

use memtree::dataset::{parse_trajectory, TRAJECTORY_HEADER};
use memtree_bench::{parse_stats, Method};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_memtree-bench"))
}

/// Runs the binary on the fixture with whitespace-separated extra flags.
fn on_fixture(flags: &str) -> std::process::Output {
    bin()
        .arg("--dataset")
        .arg(fixture())
        .args(flags.split_whitespace())
        .output()
        .unwrap()
}

fn fixture() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/tests/data/w100.graph")
}

fn scratch(name: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("memtree-cli-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    dir.join(name)
}

#[test]
fn replay_exports_stats_and_trajectory() {
    let (traj, stats) = (scratch("traj.csv"), scratch("stats.csv"));
    let out = bin()
        .args(["--dataset", fixture().to_str().unwrap(), "--method", "tree-full-path"])
        .arg("--export-traj")
        .arg(&traj)
        .arg("--export-stats")
        .arg(&stats)
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("100 vertices, 300 edges, 201 loops"), "{stdout}");

    let text = std::fs::read_to_string(&traj).unwrap();
    assert_eq!(text.lines().next(), Some(TRAJECTORY_HEADER));
    let poses = parse_trajectory(&text).unwrap();
    assert_eq!(poses.len(), 100);
    assert!(poses.windows(2).all(|w| w[0].0 < w[1].0));

    let events = parse_stats(&std::fs::read_to_string(&stats).unwrap()).unwrap();
    assert_eq!(events.len(), 201);
    assert!(events.iter().all(|e| e.method == Method::TreeFullPath && e.accepted));
    assert!(events.iter().all(|e| e.cost1 <= e.cost0));
}

#[test]
fn batch_and_robustness_modes_run() {
    let batch = on_fixture("--mode batch --method baseline");
    assert!(batch.status.success());
    assert!(String::from_utf8_lossy(&batch.stdout).contains("baseline: events=1"));

    let rob = on_fixture("--mode robustness --corrupt-fraction 0.2 --seed 3");
    assert!(rob.status.success(), "{}", String::from_utf8_lossy(&rob.stderr));
    let text = String::from_utf8_lossy(&rob.stdout);
    assert!(text.contains("corrupted=40"), "{text}");
}

#[test]
fn bad_arguments_fail_with_nonzero_exit() {
    for flags in [
        "--method bundle-adjust",
        "--mode batch --method tree-top-down",
        "--mode robustness --gate off",
        "--max-lm-iters many",
    ] {
        assert!(!on_fixture(flags).status.success(), "{flags} succeeded");
    }
    let missing = bin().args(["--dataset", "no/such/file.g2o"]).output().unwrap();
    assert!(!missing.status.success());
}
