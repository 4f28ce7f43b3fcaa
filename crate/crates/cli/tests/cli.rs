use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_tabsyn"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> Output {
    let o = run(args);
    assert!(
        o.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&o.stderr)
    );
    o
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn simulate_fit_sample_evaluate() {
    let dir = tempfile::tempdir().unwrap();
    let train = dir.path().join("train.csv");
    let test = dir.path().join("test.csv");
    ok(&["simulate", "--oracle", "ring", "--n", "600", "--out", s(&train), "--seed", "1"]);
    ok(&["simulate", "--oracle", "ring", "--n", "300", "--out", s(&test), "--seed", "2"]);
    let schema = dir.path().join("train.schema.json");
    assert!(schema.exists());
    assert_eq!(fs::read_to_string(&train).unwrap().lines().count(), 601);

    let model = dir.path().join("m.bin");
    let history = dir.path().join("h.csv");
    ok(&[
        "fit", "--model", "ctgan", "--data", s(&train), "--schema", s(&schema), "--out", s(&model),
        "--epochs", "1", "--batch", "100", "--history", s(&history),
    ]);
    assert_eq!(fs::read_to_string(&history).unwrap().lines().count(), 1 + 6);

    let a = dir.path().join("a.csv");
    let b = dir.path().join("b.csv");
    ok(&["sample", "--model", s(&model), "--n", "250", "--out", s(&a), "--seed", "5"]);
    ok(&["sample", "--model", s(&model), "--n", "250", "--out", s(&b), "--seed", "5"]);
    assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());
    assert_eq!(fs::read_to_string(&a).unwrap().lines().count(), 251);

    let report = dir.path().join("r.json");
    let out = ok(&[
        "evaluate", "--mode", "likelihood", "--oracle", "ring", "--syn", s(&train), "--test", s(&test),
        "--report", s(&report),
    ]);
    assert!(String::from_utf8_lossy(&out.stdout).contains("l_test"));
    let r: serde_json::Value = serde_json::from_str(&fs::read_to_string(&report).unwrap()).unwrap();
    let l_syn = r["l_syn"].as_f64().unwrap();
    assert!((l_syn + 1.70).abs() < 0.3, "{l_syn}");
}

#[test]
fn clbn_and_conditional_errors() {
    let dir = tempfile::tempdir().unwrap();
    let bif = concat!(env!("CARGO_MANIFEST_DIR"), "/../../data/bif/asia.bif");
    let data = dir.path().join("asia.csv");
    ok(&["simulate", "--oracle", &format!("bif:{bif}"), "--n", "500", "--out", s(&data)]);
    let schema = dir.path().join("asia.schema.json");
    let model = dir.path().join("clbn.bin");
    ok(&["fit", "--model", "clbn", "--data", s(&data), "--schema", s(&schema), "--out", s(&model)]);
    let syn = dir.path().join("syn.csv");
    ok(&["sample", "--model", s(&model), "--n", "50", "--out", s(&syn)]);
    let o = run(&["sample", "--model", s(&model), "--n", "5", "--out", s(&syn), "--condition", "asia=yes"]);
    assert_eq!(o.status.code(), Some(1));

    let fit = |extra: &[&str]| {
        let mut args = vec!["fit", "--data", s(&data), "--schema", s(&schema), "--out", s(&model)];
        args.extend_from_slice(extra);
        run(&args).status.code()
    };
    assert_eq!(fit(&["--model", "clbn", "--bins", "4", "--bin-value", "uniform"]), Some(0));
    assert_eq!(fit(&["--model", "clbn", "--epochs", "3"]), Some(1));
    assert_eq!(fit(&["--model", "tvae", "--bins", "4"]), Some(1));
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(run(&["fit", "--model", "nope"]).status.code(), Some(2));
    assert_eq!(run(&[]).status.code(), Some(2));

    let missing = dir.path().join("missing.bin");
    let out = dir.path().join("x.csv");
    let o = run(&["sample", "--model", s(&missing), "--n", "1", "--out", s(&out)]);
    assert_eq!(o.status.code(), Some(3));

    let schema = dir.path().join("s.json");
    fs::write(&schema, r#"{"columns": [{"name": "x", "kind": "continuous"}]}"#).unwrap();
    let bad = dir.path().join("bad.csv");
    fs::write(&bad, "x\n1.0\nabc\n").unwrap();
    let o = run(&["fit", "--model", "clbn", "--data", s(&bad), "--schema", s(&schema), "--out", s(&out)]);
    assert_eq!(o.status.code(), Some(4));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("line 3"), "{err}");

    let notmodel = dir.path().join("not.bin");
    fs::write(&notmodel, b"hello world").unwrap();
    let o = run(&["sample", "--model", s(&notmodel), "--n", "1", "--out", s(&out)]);
    assert_eq!(o.status.code(), Some(4));
}

#[test]
fn benchmark_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let suite = dir.path().join("suite.json");
    fs::write(
        &suite,
        r#"{
            "datasets": [
                {"name": "grid", "oracle": "grid", "train_rows": 300, "test_rows": 200},
                {"name": "asia", "oracle": "bif:asia.bif", "train_rows": 300, "test_rows": 200}
            ],
            "methods": [
                {"name": "identity", "type": "identity"},
                {"name": "clbn", "type": "clbn"},
                {"name": "tvae", "type": "tvae", "epochs": 1, "batch_size": 100}
            ],
            "seeds": [0, 1],
            "workers": 2
        }"#,
    )
    .unwrap();
    fs::copy(concat!(env!("CARGO_MANIFEST_DIR"), "/../../data/bif/asia.bif"), dir.path().join("asia.bif")).unwrap();
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    ok(&["benchmark", "--suite", s(&suite), "--out", s(&a)]);
    ok(&["benchmark", "--suite", s(&suite), "--out", s(&b), "--workers", "1"]);
    let ra = fs::read_to_string(a.join("results.csv")).unwrap();
    assert_eq!(ra, fs::read_to_string(b.join("results.csv")).unwrap());
    // 2 datasets x 3 methods x 2 metrics, plus the header
    assert_eq!(ra.lines().count(), 1 + 12);
    assert_eq!(fs::read_dir(a.join("cells")).unwrap().count(), 12);
}
