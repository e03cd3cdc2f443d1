use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_ranagent"));
    c.env_remove("RANAGENT_OUT");
    c
}

fn run(args: &[&str], out: &Path) -> Output {
    bin().arg("--out").arg(out).args(args).output().expect("binary runs")
}

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fixtures").join(name)
}

fn read(p: &Path) -> String {
    std::fs::read_to_string(p).unwrap_or_else(|e| panic!("{}: {e}", p.display()))
}

fn manifest_hash(dir: &Path) -> String {
    let v: serde_json::Value = serde_json::from_str(&read(&dir.join("manifest.json"))).unwrap();
    v["manifest_hash"].as_str().unwrap().to_string()
}

#[test]
fn otm_validate_exit_codes() {
    let tmp = tempfile::tempdir().unwrap();
    for f in ["otm_multi_before.json", "otm_multi_after.json"] {
        let o = run(&["otm", "validate", fixture(f).to_str().unwrap()], tmp.path());
        assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    }
    let bad = tmp.path().join("bad.json");
    let text = read(&fixture("otm_multi_before.json")).replace("\"operator\": \"ge\"", "\"operator\": \"le\"");
    std::fs::write(&bad, text).unwrap();
    assert_eq!(run(&["otm", "validate", bad.to_str().unwrap()], tmp.path()).status.code(), Some(1));
    let missing = tmp.path().join("nope.json");
    assert_eq!(run(&["otm", "validate", missing.to_str().unwrap()], tmp.path()).status.code(), Some(1));
}

#[test]
fn usage_errors_exit_two() {
    let tmp = tempfile::tempdir().unwrap();
    assert_eq!(run(&["train", "--env", "atari"], tmp.path()).status.code(), Some(2));
    assert_eq!(run(&["frobnicate"], tmp.path()).status.code(), Some(2));
    assert_eq!(run(&["--threads", "0", "otm", "validate", "x"], tmp.path()).status.code(), Some(2));
    assert_eq!(run(&["--help"], tmp.path()).status.code(), Some(0));
}

#[test]
fn paxbo_traces_are_reproducible_and_tagged() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let args = ["--threads", "1", "paxbo", "--problem", "synthetic1", "--tr", "off", "--budget", "25", "--seeds", "1,2"];
    assert!(run(&args, a.path()).status.success());
    assert!(run(&args, b.path()).status.success());
    let name = "paxbo/synthetic1_tr-off_seed2.csv";
    let ta = read(&a.path().join(name));
    assert_eq!(ta.lines().count(), 3 + 25);
    // Output directories differ, so the manifests differ; the trace bodies do not.
    let body = |s: &str| s.lines().skip(1).collect::<Vec<_>>().join("\n");
    assert_eq!(body(&ta), body(&read(&b.path().join(name))));
    assert_eq!(ta.lines().next().unwrap(), format!("# manifest {}", manifest_hash(&a.path().join("paxbo"))));
}

#[test]
fn output_dir_from_environment() {
    let tmp = tempfile::tempdir().unwrap();
    let o = bin()
        .env("RANAGENT_OUT", tmp.path())
        .args(["paxbo", "--problem", "synthetic1", "--budget", "21"])
        .output()
        .unwrap();
    assert!(o.status.success());
    assert!(tmp.path().join("paxbo/synthetic1_tr-on_seed0.csv").exists());
}

#[test]
fn train_then_eval_ftn() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("over.json");
    std::fs::write(&cfg, r#"{"hidden": 16, "warmup": 100}"#).unwrap();
    let args = [
        "--threads", "1", "train", "--env", "ftn", "--depth", "2", "--preset", "desk", "--env-steps", "600", "--seed", "3",
        "--config", cfg.to_str().unwrap(),
    ];
    let o = run(&args, tmp.path());
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let dir = tmp.path().join("train");
    let h = manifest_hash(&dir);
    let tel = read(&dir.join("telemetry.csv"));
    assert!(tel.starts_with(&format!("# manifest {h}\nstep,loss,eps,beta,samples_per_sec\n")));
    let ck: serde_json::Value = serde_json::from_str(&read(&dir.join("checkpoint.json"))).unwrap();
    assert_eq!(ck["manifest_hash"], h.as_str());
    assert_eq!(ck["config"]["hidden"], 16);

    // A rerun into a fresh directory with the same manifest fields reproduces the telemetry.
    let again = run(&args, tmp.path());
    assert!(again.status.success());
    assert_eq!(read(&dir.join("telemetry.csv")), tel);

    let ck_path = dir.join("checkpoint.json");
    let e = run(&["eval", "--checkpoint", ck_path.to_str().unwrap(), "--n-prefs", "50"], tmp.path());
    assert!(e.status.success(), "{}", String::from_utf8_lossy(&e.stderr));
    let rep: serde_json::Value = serde_json::from_str(&read(&tmp.path().join("eval/report.json"))).unwrap();
    assert_eq!(rep["truth"], 4);
    assert!(rep["crf1"].as_f64().unwrap() >= 0.0);
    assert_eq!(rep["manifest_hash"], manifest_hash(&tmp.path().join("eval")).as_str());

    let empty = run(&["eval", "--checkpoint", ck_path.to_str().unwrap(), "--n-prefs", "0"], tmp.path());
    assert_eq!(empty.status.code(), Some(1));
    let missing = run(&["eval", "--checkpoint", "/nonexistent/ck.json"], tmp.path());
    assert_eq!(missing.status.code(), Some(1));
}

#[test]
fn ftn_paper_preset_uses_wide_layers() {
    let tmp = tempfile::tempdir().unwrap();
    let o = run(&["train", "--env", "ftn", "--depth", "5", "--env-steps", "0"], tmp.path());
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let ck: serde_json::Value = serde_json::from_str(&read(&tmp.path().join("train/checkpoint.json"))).unwrap();
    assert_eq!(ck["config"]["hidden"], 512);
}

#[test]
fn workflow_on_a_small_controller() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("over.json");
    std::fs::write(&cfg, r#"{"hidden": 16, "warmup": 200}"#).unwrap();
    let o = run(
        &["--threads", "1", "train", "--env", "la", "--preset", "desk", "--env-steps", "800", "--config", cfg.to_str().unwrap()],
        tmp.path(),
    );
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let ck = tmp.path().join("train/checkpoint.json");
    let e = run(&["eval", "--checkpoint", ck.to_str().unwrap(), "--n-prefs", "20"], tmp.path());
    assert!(e.status.success());
    assert_eq!(read(&tmp.path().join("eval/sweep.csv")).lines().count(), 2 + 11);
    let w = run(&["workflow", "--scenario", "qos-flexible", "--checkpoint", ck.to_str().unwrap(), "--ticks", "3"], tmp.path());
    assert!(w.status.success(), "{}", String::from_utf8_lossy(&w.stderr));
    let dir = tmp.path().join("workflow-qos-flexible");
    let h = manifest_hash(&dir);
    for f in ["trace.csv", "optimizer.csv", "audit.log"] {
        assert!(read(&dir.join(f)).starts_with(&format!("# manifest {h}\n")), "{f}");
    }
    assert_eq!(read(&dir.join("trace.csv")).lines().count(), 2 + 3);
    assert!(read(&dir.join("otm_final.json")).contains(&h));
    let bad = run(&["workflow", "--scenario", "reliability", "--checkpoint", tmp.path().join("x.json").to_str().unwrap()], tmp.path());
    assert_eq!(bad.status.code(), Some(1));
}
