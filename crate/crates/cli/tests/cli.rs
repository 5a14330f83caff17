use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn trajcf(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_trajcf")).args(args).output().unwrap()
}

fn ok(args: &[&str]) -> String {
    let out = trajcf(args);
    assert!(
        out.status.success(),
        "{args:?} failed:\n{}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

const SMALL: &[&str] = &["--n-agents", "30", "--n-pois", "40", "--train-days", "14", "--test-days", "7"];

#[test]
fn demo_svd_prints_and_writes() {
    let dir = tempfile::tempdir().unwrap();
    let stdout = ok(&["demo-svd", "--out", s(dir.path())]);
    assert!(stdout.contains("expected visits (rank 3)"));
    assert!(stdout.contains("user-1"));
    let doc: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.path().join("demo.json")).unwrap()).unwrap();
    assert_eq!(doc["expected"].as_array().unwrap().len(), 5);
}

#[test]
fn synth_ingest_score_eval_chain() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    let mut args = vec!["synth", "--out", s(&data), "--seed", "5", "--anomalous-fraction", "0.2"];
    args.extend_from_slice(SMALL);
    ok(&args);
    let trajectories = data.join("trajectories.csv");
    let labels = data.join("labels.csv");

    let ingested = dir.path().join("ingested");
    let stdout = ok(&[
        "ingest",
        s(&trajectories),
        "--out",
        s(&ingested),
        "--t-split",
        "2024-01-14T23:59:59",
    ]);
    assert!(stdout.contains("users: 30"), "{stdout}");
    assert!(ingested.join("train_matrix.coo").exists());
    assert!(ingested.join("train_matrix.json").exists());

    let scored = dir.path().join("scored");
    ok(&[
        "score",
        "--model",
        "svd",
        "--svd-rank",
        "5",
        "--trajectories",
        s(&ingested.join("trajectories.csv")),
        "--labels",
        s(&labels),
        "--t-split",
        "2024-01-14T23:59:59",
        "--out",
        s(&scored),
    ]);
    let ranking = fs::read_to_string(scored.join("ranking.csv")).unwrap();
    assert_eq!(ranking.lines().count(), 31);
    let stdout = ok(&[
        "eval",
        "--report",
        s(&scored.join("report.json")),
        "--labels",
        s(&labels),
        "--ks",
        "3,6",
        "--out",
        s(&scored),
    ]);
    assert!(stdout.contains("auc:"));
    let eval: serde_json::Value = serde_json::from_str(&fs::read_to_string(scored.join("eval.json")).unwrap()).unwrap();
    assert_eq!(eval["n_anomalous"], 6);
    assert!(eval["top_k_hits"].get("6").is_some());
}

#[test]
fn train_then_score_with_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let mut common = vec!["--seed", "3", "--epochs", "2", "--embed-dim", "4"];
    common.extend_from_slice(SMALL);
    let model_dir = dir.path().join("model");
    let mut args = vec!["train", "--out", s(&model_dir)];
    args.extend_from_slice(&common);
    assert!(ok(&args).contains("trained 2 epochs"));
    assert!(model_dir.join("training.json").exists());

    let scored = dir.path().join("scored");
    let checkpoint = model_dir.join("model.json");
    let mut args = vec!["score", "--checkpoint", s(&checkpoint), "--out", s(&scored)];
    args.extend_from_slice(&common);
    ok(&args);
    let from_checkpoint = fs::read_to_string(scored.join("report.json")).unwrap();

    // A full run with the same settings fits the same model.
    let run_dir = dir.path().join("run");
    let mut args = vec!["run", "--out", s(&run_dir)];
    args.extend_from_slice(&common);
    ok(&args);
    assert_eq!(fs::read_to_string(run_dir.join("report.json")).unwrap(), from_checkpoint);

    // A different dataset does not fit the checkpoint.
    let mut args = vec!["score", "--checkpoint", s(&checkpoint), "--out", s(&scored), "--n-pois", "60"];
    args.extend_from_slice(&common[..6]);
    let out = trajcf(&args);
    assert!(!out.status.success());
}

#[test]
fn run_is_byte_identical_for_a_seed() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("config.toml");
    fs::write(
        &config,
        "model = \"ncf\"\nks = [3, 6]\n[ncf]\nepochs = 2\nembed_dim = 4\nmlp_layers = [8]\n[data]\nsource = \"synth\"\nn_agents = 30\nn_pois = 40\ntrain_days = 14\ntest_days = 7\n",
    )
    .unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for out in [&a, &b] {
        ok(&["run", "--config", s(&config), "--seed", "11", "--out", s(out)]);
    }
    let mut names: Vec<_> = fs::read_dir(&a).unwrap().map(|e| e.unwrap().file_name()).collect();
    names.sort();
    assert!(names.len() >= 7, "{names:?}");
    for name in names {
        let (x, y) = (fs::read(a.join(&name)).unwrap(), fs::read(b.join(&name)).unwrap());
        let manifest = name == "manifest.json";
        if manifest {
            // Only the output directory differs.
            let strip = |bytes: Vec<u8>| String::from_utf8(bytes).unwrap().replace(s(&a), "").replace(s(&b), "");
            assert_eq!(strip(x), strip(y));
        } else {
            assert_eq!(x, y, "{name:?}");
        }
    }
}

#[test]
fn ingest_extracts_staypoints_from_gps() {
    let dir = tempfile::tempdir().unwrap();
    let gps = dir.path().join("gps.csv");
    let mut text = String::from("UserId,Latitude,Longitude,Time\n");
    for m in 0..30 {
        text.push_str(&format!("u1,39.9800,116.3000,2024-03-01T08:{m:02}:00\n"));
    }
    for m in 0..30 {
        text.push_str(&format!("u1,39.9900,116.3200,2024-03-01T10:{m:02}:00\n"));
    }
    text.push_str("u1,not-a-number,116.3,2024-03-01T11:00:00\n");
    fs::write(&gps, text).unwrap();
    let out = dir.path().join("out");
    let stdout = ok(&["ingest", s(&gps), "--gps", "--out", s(&out), "--time-min", "20"]);
    assert!(stdout.contains("records: 2"), "{stdout}");
    assert!(stdout.contains("skipped rows: 1"));
    let csv = fs::read_to_string(out.join("trajectories.csv")).unwrap();
    assert_eq!(csv.lines().count(), 3);
}

#[test]
fn bad_input_fails_with_a_diagnostic() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("bad.toml");
    fs::write(&config, "ks = [0]\n").unwrap();
    let out = trajcf(&["run", "--config", s(&config)]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("error:"));

    let out = trajcf(&["ingest", s(&dir.path().join("missing.csv")), "--out", s(dir.path())]);
    assert!(!out.status.success());
    let out = trajcf(&["train", "--model", "svd", "--out", s(dir.path())]);
    assert!(!out.status.success());
}
