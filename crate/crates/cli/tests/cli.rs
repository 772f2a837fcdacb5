use std::path::Path;
use std::process::{Command, Output};

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_whodunit"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = run(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

#[test]
fn generate_train_infer_prompt() {
    let dir = tempfile::tempdir().unwrap();
    let test = dir.path().join("test");
    let train = dir.path().join("train");
    ok(&["generate", "--scenario", "shower", "--split", "test", "--n-envs", "2", "--per-env", "1", "--out", p(&test)]);
    ok(&[
        "generate", "--scenario", "shower", "--split", "train-indist", "--n-envs", "2", "--per-env", "5", "--out", p(&train),
    ]);
    let model_a = dir.path().join("a.json");
    let model_b = dir.path().join("b.json");
    let report = ok(&[
        "train", "--variant", "vision+audio", "--data", p(&train), "--held-out", p(&test), "--out", p(&model_a),
    ]);
    let report: serde_json::Value = serde_json::from_str(&report).unwrap();
    assert_eq!(report["variant"], "vision+audio");
    assert_eq!(report["trajectories"], 10);
    assert!(report["held_out_accuracy"].as_f64().unwrap() > 0.0);
    ok(&["train", "--variant", "vision+audio", "--data", p(&train), "--agent", "b", "--out", p(&model_b)]);

    let inst = std::fs::read_dir(test.join("instances"))
        .unwrap()
        .map(|e| e.unwrap().path())
        .find(|d| d.join("instance.json").exists())
        .expect("an instance directory");
    let verdict = ok(&[
        "infer", "--trial", p(&inst), "--model-a", p(&model_a), "--model-b", p(&model_b), "--tau-frac", "1.0", "--m", "20",
        "--sequential",
    ]);
    let v: serde_json::Value = serde_json::from_str(&verdict).unwrap();
    let (pa, pb) = (v["p_a"].as_f64().unwrap(), v["p_b"].as_f64().unwrap());
    assert!((pa + pb - 1.0).abs() < 1e-12);
    assert!(pa > 0.99, "the culprit's final state satisfies the query");

    let prompt = ok(&["prompt", "--trial", p(&inst), "--tau-frac", "0.3"]);
    assert!(prompt.starts_with("Instructions:"));
    assert!(prompt.contains("Strictly follow this response format"));
}

#[test]
fn quick_bench_and_horizon() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("bench.json");
    let csv = dir.path().join("bench.csv");
    let text = ok(&[
        "bench", "--suite", "quick", "--methods", "vision", "--scenarios", "pillow", "--m", "10", "--out", p(&out), "--csv",
        p(&csv),
    ]);
    assert!(text.contains("pillow"));
    let report: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&out).unwrap()).unwrap();
    assert_eq!(report["scenarios"][0]["methods"][0]["curve"]["accuracy"].as_array().unwrap().len(), 11);
    assert_eq!(std::fs::read_to_string(&csv).unwrap().lines().count(), 12);
    let h = ok(&["horizon", "--scenarios", "pillow", "--n", "5"]);
    assert!(h.starts_with("pillow"));
}

#[test]
fn bad_arguments_fail_cleanly() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("x.json");
    for args in [
        vec!["bench", "--suite", "huge", "--out", p(&out)],
        vec!["bench", "--horizon", "sideways", "--out", p(&out)],
        vec!["bench", "--m", "0", "--out", p(&out)],
        vec!["generate", "--scenario", "nowhere", "--out", p(&out)],
        vec!["train", "--data", "/nonexistent", "--out", p(&out)],
    ] {
        let o = run(&args);
        assert!(!o.status.success(), "{args:?} should fail");
        assert!(!o.stderr.is_empty());
    }
}
