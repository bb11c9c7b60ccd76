use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn scvae(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_scvae"))
        .current_dir(dir)
        .env_remove("SCVAE_ARTIFACT_ROOT")
        .args(args)
        .output()
        .unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap_or(-1)
}

fn entries(dir: &Path) -> Vec<String> {
    let mut v: Vec<String> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .collect();
    v.sort();
    v
}

const TINY: &str = r#"
preset = "desk"
sim_grid = [16, 16]
target_grid = [16, 16]
leak_cells = [[4, 5], [11, 10]]
wells = [[3, 12], [8, 3], [12, 13]]
n_steps = 14
batch = 16
patience = 2
max_epochs = 3
n_mc = 8
"#;

#[test]
fn train_without_data_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = scvae(dir.path(), &["train", "--out", "model"]);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("--data"));
    assert!(entries(dir.path()).is_empty());
}

#[test]
fn bad_configuration_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = scvae(dir.path(), &["pipeline", "--preset", "laptop", "--out", "run"]);
    assert_eq!(code(&o), 2);
    fs::write(dir.path().join("bad.toml"), "patiense = 3\n").unwrap();
    let o = scvae(dir.path(), &["simulate", "--config", "bad.toml", "--out", "s"]);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("patiense"));
    assert_eq!(entries(dir.path()), ["bad.toml"]);
}

#[test]
fn missing_model_is_a_data_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = scvae(dir.path(), &["evaluate", "--model", "nowhere"]);
    assert_eq!(code(&o), 3);
}

#[test]
fn artifact_root_prefixes_relative_paths() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("tiny.toml"), TINY).unwrap();
    let o = Command::new(env!("CARGO_BIN_EXE_scvae"))
        .env("SCVAE_ARTIFACT_ROOT", dir.path())
        .args(["simulate", "--config"])
        .arg(dir.path().join("tiny.toml"))
        .args(["--out", "series"])
        .output()
        .unwrap();
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(dir.path().join("series").join("series.json").exists());
}

#[test]
fn stages_chain_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    fs::write(d.join("tiny.toml"), TINY).unwrap();
    let ok = |args: &[&str]| {
        let o = scvae(d, args);
        assert_eq!(code(&o), 0, "{args:?}: {}", String::from_utf8_lossy(&o.stderr));
        o
    };
    ok(&["simulate", "--config", "tiny.toml", "--out", "series"]);
    ok(&["preprocess", "--config", "tiny.toml", "--series", "series", "--out", "data"]);
    ok(&["train", "--config", "tiny.toml", "--data", "data", "--out", "model", "--quiet"]);
    let history = fs::read_to_string(d.join("model/history.csv")).unwrap();
    assert!(history.starts_with("epoch,train_total,train_recon,train_class,train_kl,val_total"));
    assert!((2..=4).contains(&history.lines().count()));

    ok(&["evaluate", "--model", "model", "--out", "eval"]);
    let report: serde_json::Value = serde_json::from_slice(&fs::read(d.join("eval/report.json")).unwrap()).unwrap();
    assert_eq!(report["n_mc"], 8);
    assert_eq!(report["zero_baseline_relative_l2"], 1.0);
    for f in ["confusion.csv", "predictions.csv", "run.json"] {
        assert!(d.join("eval").join(f).exists(), "{f}");
    }

    ok(&["reconstruct", "--model", "model", "--instance", "0", "--out", "rec", "--save-samples"]);
    let mean = fs::read(d.join("rec/mean.f32")).unwrap();
    assert_eq!(mean.len(), 16 * 16 * 4);
    assert_eq!(fs::read(d.join("rec/samples.f32")).unwrap().len(), 8 * 16 * 16 * 4);
    let pgm = fs::read(d.join("rec/mean.pgm")).unwrap();
    assert!(pgm.starts_with(b"P5\n16 16\n255\n"));

    fs::write(d.join("m.txt"), "0.1, -0.2, 0.05\n").unwrap();
    ok(&["classify", "--model", "model", "--m", "m.txt", "--out", "cls"]);
    let label: serde_json::Value = serde_json::from_slice(&fs::read(d.join("cls/label.json")).unwrap()).unwrap();
    let l = label["label"].as_u64().unwrap();
    assert!((1..=4).contains(&l));
    let p: f64 = label["mean"].as_array().unwrap().iter().map(|v| v.as_f64().unwrap()).sum();
    assert!((p - 1.0).abs() < 1e-5);

    fs::write(d.join("short.txt"), "0.1 0.2\n").unwrap();
    let o = scvae(d, &["classify", "--model", "model", "--m", "short.txt", "--out", "cls2"]);
    assert_eq!(code(&o), 3);

    // the same seed gives the same report
    ok(&["evaluate", "--model", "model", "--out", "eval2"]);
    assert_eq!(fs::read(d.join("eval/report.json")).unwrap(), fs::read(d.join("eval2/report.json")).unwrap());
}
