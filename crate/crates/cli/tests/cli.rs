use std::path::Path;
use std::process::Command;

use tgl_cli::run;

fn tgl(args: &[&str]) -> i32 {
    run(std::iter::once("tgl").chain(args.iter().copied()))
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn read(path: impl AsRef<Path>) -> String {
    std::fs::read_to_string(path).unwrap()
}

fn json(path: impl AsRef<Path>) -> serde_json::Value {
    serde_json::from_str(&read(path)).unwrap()
}

fn csv_names(dir: &Path) -> Vec<String> {
    let mut names: Vec<String> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .filter(|n| n.ends_with(".csv"))
        .collect();
    names.sort();
    names
}

#[test]
fn default_topology_has_384_nodes() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(tgl(&["topology", "--default", "--out", p(dir.path())]), 0);
    let topo = tgl_core::load_topology(dir.path().join("allegro_uskin_384.json")).unwrap();
    assert_eq!(topo.node_count(), 384);
    assert_eq!(topo.component_count(), 1);
    let manifest = json(dir.path().join("manifest.json"));
    assert_eq!(manifest["command"], "topology");
    assert!(manifest["outputs"]["allegro_uskin_384.json"].is_string());
}

#[test]
fn gen_data_writes_one_file_per_trial_deterministically() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    for dir in [&a, &b] {
        let args = ["gen-data", "--objects", "8", "--trials-per", "10", "--seed", "7", "--toy", "--out", p(dir.path())];
        assert_eq!(tgl(&args), 0);
    }
    let names = csv_names(a.path());
    assert_eq!(names.len(), 80);
    assert_eq!(names, csv_names(b.path()));
    for n in &names {
        assert_eq!(std::fs::read(a.path().join(n)).unwrap(), std::fs::read(b.path().join(n)).unwrap(), "{n}");
    }
    assert_eq!(read(a.path().join("manifest.json")), read(b.path().join("manifest.json")));
}

#[test]
fn missing_config_is_an_input_error() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    assert_eq!(tgl(&["gen-data", "--objects", "1", "--trials-per", "2", "--toy", "--out", p(&data)]), 0);
    let missing = dir.path().join("missing.json");
    let code = tgl(&["train", "--data", p(&data), "--toy", "--model", "I", "--config", p(&missing), "--out", p(&dir.path().join("run"))]);
    assert_eq!(code, 1);
}

#[test]
fn binary_exit_codes() {
    let exe = env!("CARGO_BIN_EXE_tgl");
    let status = |args: &[&str]| Command::new(exe).args(args).output().unwrap().status.code();
    assert_eq!(status(&["--help"]), Some(0));
    assert_eq!(status(&["no-such-command"]), Some(1));
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(status(&["topology", "--toy", "--out", p(dir.path())]), Some(0));
    assert!(dir.path().join("toy_hand_24.json").exists());
}

#[test]
fn full_workflow_on_the_toy_hand() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    let data = root.join("data");
    assert_eq!(tgl(&["gen-data", "--objects", "2", "--trials-per", "2", "--seed", "3", "--toy", "--out", p(&data)]), 0);

    let config = root.join("train.json");
    std::fs::write(&config, r#"{"batch_size": 100, "adam": {"learning_rate": 0.001}, "checkpoint_every": 1}"#).unwrap();
    let run_dir = root.join("run");
    let train = ["train", "--data", p(&data), "--toy", "--config", p(&config), "--model", "III", "--epochs", "2", "--seed", "1", "--out", p(&run_dir)];
    assert_eq!(tgl(&train), 0);
    for f in ["last.json", "best.json", "epoch_0001.json", "epoch_0002.json", "metrics.ndjson", "manifest.json"] {
        assert!(run_dir.join(f).exists(), "{f}");
    }
    assert_eq!(read(run_dir.join("metrics.ndjson")).lines().count(), 2);
    let ckpt = run_dir.join("last.json");

    let eval = root.join("eval");
    assert_eq!(tgl(&["eval", "--checkpoint", p(&ckpt), "--data", p(&data), "--out", p(&eval)]), 0);
    let e = json(eval.join("eval.json"));
    assert!(e["loss"].as_f64().unwrap().is_finite());
    assert_eq!(e["trials"], 4);

    let correct = root.join("correct");
    let wrong = root.join("wrong");
    assert_eq!(tgl(&["rollout", "--checkpoint", p(&ckpt), "--object", "0,1,0", "--max-steps", "40", "--out", p(&correct)]), 0);
    let args = ["rollout", "--checkpoint", p(&ckpt), "--object", "0,1,0", "--labels", "1,0,0", "--max-steps", "40", "--disturb", "20:pull_down:1.0", "--out", p(&wrong)];
    assert_eq!(tgl(&args), 0);
    assert_eq!(read(correct.join("trace.csv")).lines().count(), 41);
    assert!(json(correct.join("trace.verdict.json"))["success"].is_boolean());

    let cmp = root.join("cmp");
    let (ta, tb) = (correct.join("trace.csv"), wrong.join("trace.csv"));
    let args = ["compare-forces", "--a", p(&ta), "--b", p(&tb), "--out", p(&cmp)];
    assert_eq!(tgl(&args), 0);
    let c = json(cmp.join("force_comparison.json"));
    assert_eq!(c["differences"].as_array().unwrap().len(), 40);

    let pca = root.join("pca");
    assert_eq!(tgl(&["pca", "--checkpoint", p(&ckpt), "--data", p(&data), "--out", p(&pca)]), 0);
    let rows = read(pca.join("pca_map.csv"));
    assert_eq!(rows.lines().count(), 25);
    assert!(read(pca.join("pca_map.svg")).starts_with("<svg"));

    let bad = root.join("bad");
    let code = tgl(&["rollout", "--checkpoint", p(&ckpt), "--disturb", "20:push:1.0", "--out", p(&bad)]);
    assert_eq!(code, 1);
    let code = tgl(&["pca", "--checkpoint", p(&ckpt), "--data", p(&data), "--window", "0..999", "--out", p(&bad)]);
    assert_eq!(code, 1);
}
