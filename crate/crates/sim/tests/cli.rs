use std::path::PathBuf;
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_oae-sim"))
}

fn scenario(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../scenarios").join(name)
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

#[test]
fn enumerate_prints_count_and_grid_triangles() {
    let o = bin().args(["enumerate", "--nodes", "4", "--grid", "3x3"]).output().unwrap();
    assert!(o.status.success());
    let text = stdout(&o);
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("4095"));
    let header = lines.next().unwrap();
    let n: usize = header.strip_prefix("triangles ").unwrap().parse().unwrap();
    // Each of the four 2x2 cells of a 3x3 grid holds four triangles.
    assert_eq!(n, 16);
    assert_eq!(lines.count(), n);
}

#[test]
fn enumerate_rejects_too_many_pairs() {
    let o = bin().args(["enumerate", "--nodes", "20"]).output().unwrap();
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn run_prints_csv_rows() {
    let o = bin().arg("run").arg(scenario("paired-clean.toml")).output().unwrap();
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = stdout(&o);
    let lines: Vec<_> = text.lines().collect();
    assert_eq!(lines.len(), 3);
    assert!(lines[0].starts_with("scenario,link_kind,"));
    assert!(lines[1].starts_with("paired-clean,ae,"));
    assert!(lines[2].starts_with("paired-clean,fito,"));
}

#[test]
fn run_writes_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let o = bin()
        .arg("run")
        .arg(scenario("grid-flap.toml"))
        .args(["--format", "jsonl", "--trace", "--out-dir"])
        .arg(dir.path())
        .output()
        .unwrap();
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let row: serde_json::Value = serde_json::from_str(stdout(&o).lines().next().unwrap()).unwrap();
    assert_eq!(row["unaccounted_tokens"], 0);
    for f in ["rows.csv", "rows.jsonl", "flaps.csv", "trace-ae.jsonl", "2pc-ae.jsonl", "adjacency.json"] {
        assert!(dir.path().join(f).exists(), "{f} missing");
    }
    let adj: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("adjacency.json")).unwrap()).unwrap();
    assert_eq!(adj["links"].as_array().unwrap().len(), 20);
    let trace = std::fs::read_to_string(dir.path().join("trace-ae.jsonl")).unwrap();
    let first: serde_json::Value = serde_json::from_str(trace.lines().next().unwrap()).unwrap();
    for k in ["id", "at", "target", "kind"] {
        assert!(first.get(k).is_some(), "trace line lacks {k}");
    }
}

#[test]
fn run_exports_dag_for_sync_scenarios() {
    let dir = tempfile::tempdir().unwrap();
    let o = bin()
        .arg("run")
        .arg(scenario("sync-partition.toml"))
        .arg("--out-dir")
        .arg(dir.path())
        .output()
        .unwrap();
    assert!(o.status.success());
    let dag: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("dag.json")).unwrap()).unwrap();
    // A rename is two events: the tombstone and the create at the new path.
    assert!(dag.as_array().unwrap().len() >= 60);
}

#[test]
fn sweep_rows_follow_input_order() {
    let o = bin()
        .arg("sweep")
        .arg(scenario("triangle.toml"))
        .args(["--param", "flap-rate", "--values", "40,10,20"])
        .output()
        .unwrap();
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = stdout(&o);
    let values: Vec<&str> = text.lines().skip(1).map(|l| l.split(',').nth(3).unwrap()).collect();
    assert_eq!(values, ["40.0", "10.0", "20.0"]);
}

#[test]
fn sweep_rejects_unknown_parameter() {
    let o = bin()
        .arg("sweep")
        .arg(scenario("triangle.toml"))
        .args(["--param", "latency", "--values", "1"])
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("not sweepable"));
}

#[test]
fn audit_reports_store_and_ledgers() {
    let o = bin().arg("audit").arg(scenario("store-eviction.toml")).output().unwrap();
    assert!(o.status.success());
    let v: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert!(v["store"]["property_l_violations"].as_u64().unwrap() > 0);
    assert!(!v["store"]["three_step"]["cannot_verify"].as_array().unwrap().is_empty());
    assert_eq!(v["links"][0]["closed"], true);
}

#[test]
fn bad_scenario_reports_line() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("bad.toml");
    let text = std::fs::read_to_string(scenario("paired-clean.toml")).unwrap();
    std::fs::write(&p, text.replace("interval = 100000", "interval = 0")).unwrap();
    let o = bin().arg("run").arg(&p).output().unwrap();
    assert_eq!(o.status.code(), Some(2));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("line 12") && err.contains("workload.interval"), "{err}");
}
