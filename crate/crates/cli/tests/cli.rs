//! End-to-end checks against the compiled binary: exit codes, file outputs,
//! the place→simulate round trip and byte-for-byte determinism.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use coco_cli::PlacementDoc;

fn coco() -> Command {
    Command::new(env!("CARGO_BIN_EXE_coco"))
}

fn repo_scenario(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../scenarios").join(name)
}

fn run(args: &[&str]) -> Output {
    coco().args(args).output().expect("spawn coco")
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

#[test]
fn place_writes_a_feasible_doc_for_topo1() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("p.json");
    let res = run(&["place", repo_scenario("topo1.toml").to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(res.status.code(), Some(0), "{}", String::from_utf8_lossy(&res.stderr));

    let doc: PlacementDoc = serde_json::from_str(&fs::read_to_string(&out).unwrap()).unwrap();
    assert!(doc.feasible);
    assert_eq!(doc.elements, ["e1", "e2", "e3", "e4", "e5", "e6"]);
    // Chains keep their prefixes together and share the tail VM.
    assert_eq!(doc.assignment.as_deref(), Some(&[0, 0, 0, 0, 1, 1][..]));
    // Two crossing hops at 40 MB/s over a 1 ms transfer each.
    assert!((doc.total_delayed_bytes.unwrap() - 0.08).abs() < 1e-12);
}

#[test]
fn malformed_scenario_exits_one_with_a_diagnostic() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.toml");
    fs::write(&bad, "version = ]").unwrap();
    let res = run(&["place", bad.to_str().unwrap(), "--out", dir.path().join("p.json").to_str().unwrap()]);
    assert_eq!(res.status.code(), Some(1));
    assert!(!res.stderr.is_empty());
}

#[test]
fn overloaded_scenario_exits_two_and_records_infeasibility() {
    let dir = tempfile::tempdir().unwrap();
    let scn = dir.path().join("tight.toml");
    // Two elements at ~0.85 of a core each, one VM.
    fs::write(
        &scn,
        r#"
version = 1

[[profiles]]
label = "p"
intercept = 0.01
slope = 0.0115

[[elements]]
name = "a"
profile = "p"

[[elements]]
name = "b"
profile = "p"

[[chains]]
name = "c"
elements = ["a", "b"]
throughput_mbps = 73.0

[vms]
count = 1
"#,
    )
    .unwrap();
    let out = dir.path().join("p.json");
    let res = run(&["place", scn.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(res.status.code(), Some(2), "{}", String::from_utf8_lossy(&res.stderr));
    let doc: PlacementDoc = serde_json::from_str(&fs::read_to_string(&out).unwrap()).unwrap();
    assert!(!doc.feasible);
    assert!(doc.assignment.is_none());
}

#[test]
fn simulate_reproduces_the_placed_delayed_bytes() {
    let dir = tempfile::tempdir().unwrap();
    let scenario = repo_scenario("topo1.toml");
    let placed = dir.path().join("p.json");
    let res = run(&["place", scenario.to_str().unwrap(), "--out", placed.to_str().unwrap()]);
    assert_eq!(res.status.code(), Some(0));
    let doc: PlacementDoc = serde_json::from_str(&fs::read_to_string(&placed).unwrap()).unwrap();

    let sim_dir = dir.path().join("sim");
    let res = run(&[
        "simulate",
        scenario.to_str().unwrap(),
        "--placement",
        placed.to_str().unwrap(),
        "--out-dir",
        sim_dir.to_str().unwrap(),
    ]);
    assert_eq!(res.status.code(), Some(0), "{}", String::from_utf8_lossy(&res.stderr));
    let metrics: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(sim_dir.join("metrics.json")).unwrap()).unwrap();
    let db = metrics["final_delayed_bytes"].as_f64().unwrap();
    assert_eq!(db, doc.total_delayed_bytes.unwrap());
    for f in ["latency.csv", "vms.csv", "sched.csv"] {
        assert!(sim_dir.join(f).exists(), "{f} missing");
    }
}

#[test]
fn repeat_runs_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let scenario = repo_scenario("scale_step.toml");
    let out_dir = dir.path().join("m");

    let mut stdouts = Vec::new();
    let mut files = Vec::new();
    for _ in 0..2 {
        let res = run(&[
            "simulate",
            scenario.to_str().unwrap(),
            "--policy",
            "coco",
            "--out-dir",
            out_dir.to_str().unwrap(),
        ]);
        assert_eq!(res.status.code(), Some(0));
        stdouts.push(stdout(&res));
        files.push(
            ["metrics.json", "latency.csv", "vms.csv", "sched.csv"]
                .map(|f| fs::read(out_dir.join(f)).unwrap()),
        );
    }
    assert_eq!(stdouts[0], stdouts[1]);
    assert_eq!(files[0], files[1]);
}

#[test]
fn experiment_is_deterministic_across_worker_counts() {
    let dir = tempfile::tempdir().unwrap();
    let scenario = repo_scenario("topo1.toml");
    let a = dir.path().join("a.json");
    let b = dir.path().join("b.json");
    let res = run(&[
        "experiment",
        scenario.to_str().unwrap(),
        "--trials",
        "40",
        "--jobs",
        "1",
        "--out",
        a.to_str().unwrap(),
    ]);
    assert_eq!(res.status.code(), Some(0), "{}", String::from_utf8_lossy(&res.stderr));
    let res = run(&[
        "experiment",
        scenario.to_str().unwrap(),
        "--trials",
        "40",
        "--jobs",
        "3",
        "--out",
        b.to_str().unwrap(),
    ]);
    assert_eq!(res.status.code(), Some(0));
    assert_eq!(fs::read(a).unwrap(), fs::read(b).unwrap());
}

#[test]
fn fit_recovers_the_sampled_line() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("profile.json");
    let res = run(&[
        "fit",
        repo_scenario("classifier_samples.csv").to_str().unwrap(),
        "--label",
        "classifier",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(res.status.code(), Some(0), "{}", String::from_utf8_lossy(&res.stderr));
    let fit: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(&out).unwrap()).unwrap();
    assert!((fit["profile"]["intercept"].as_f64().unwrap() - 0.00048).abs() < 1e-12);
    assert!((fit["profile"]["slope"].as_f64().unwrap() - 0.0042).abs() < 1e-12);
    assert!((fit["r_squared"].as_f64().unwrap() - 1.0).abs() < 1e-12);
}

#[test]
fn fit_rejects_degenerate_samples() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("flat.csv");
    fs::write(&csv, "10.0,0.1\n10.0,0.2\n10.0,0.3\n").unwrap();
    let res = run(&["fit", csv.to_str().unwrap(), "--out", dir.path().join("p.json").to_str().unwrap()]);
    assert_eq!(res.status.code(), Some(1));
}

#[test]
fn out_dir_env_var_supplies_the_default_destination() {
    let dir = tempfile::tempdir().unwrap();
    let res = coco()
        .args(["place", repo_scenario("topo1.toml").to_str().unwrap()])
        .env("COCO_OUT_DIR", dir.path())
        .output()
        .unwrap();
    assert_eq!(res.status.code(), Some(0), "{}", String::from_utf8_lossy(&res.stderr));
    assert!(dir.path().join("placement.json").exists());
}
