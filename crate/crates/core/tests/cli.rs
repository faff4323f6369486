use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::time::Instant;

use illab::data::{read_pgm, Manifest};
use illab::model::load_checkpoint;
use serde_json::Value;

fn illab(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_illab"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = illab(dir, args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn read(p: impl AsRef<Path>) -> Vec<u8> {
    fs::read(p.as_ref()).unwrap_or_else(|e| panic!("{}: {e}", p.as_ref().display()))
}

/// Small synthetic dataset for quick training runs.
fn small_data(dir: &Path) -> PathBuf {
    ok(dir, &["gen-data", "--out", "data", "--num-samples", "600"]);
    dir.join("data")
}

#[test]
fn gen_data_defaults() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    let text = ok(dir, &["gen-data", "--out", "a"]);
    let m = Manifest::read(&dir.join("a")).unwrap();
    assert_eq!(m.num_classes, 10);
    for split in ["train", "val", "test"] {
        assert!(m.load_split(&dir.join("a"), split).is_ok());
    }
    assert_eq!(m.load_split(&dir.join("a"), "test").unwrap().len(), 777);
    let json: Value = serde_json::from_slice(&read(dir.join("a/prevalence.json"))).unwrap();
    let nf = json["prevalence"]["No finding"]["all"].as_f64().unwrap();
    assert!((nf - 0.376).abs() <= 0.02, "No finding rate {nf}");
    assert!(text.starts_with("Class"));

    ok(dir, &["gen-data", "--out", "b"]);
    for f in ["train_features.csv", "train_labels.csv", "test_labels.csv", "manifest.txt", "prevalence.txt"] {
        assert_eq!(read(dir.join("a").join(f)), read(dir.join("b").join(f)), "{f}");
    }
    ok(dir, &["gen-data", "--out", "c", "--seed", "43"]);
    assert_ne!(read(dir.join("a/train_features.csv")), read(dir.join("c/train_features.csv")));
}

#[test]
fn train_smoke_and_repeatability() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    ok(dir, &["gen-data", "--out", "data"]);
    let t0 = Instant::now();
    ok(dir, &["train", "--data", "data", "--out", "r1", "--epochs", "1"]);
    assert!(t0.elapsed().as_secs_f64() < 30.0);
    ok(dir, &["train", "--data", "data", "--out", "r2", "--epochs", "1"]);
    assert_eq!(read(dir.join("r1/model.ckpt")), read(dir.join("r2/model.ckpt")));
    let history = String::from_utf8(read(dir.join("r1/history.csv"))).unwrap();
    assert_eq!(history.lines().count(), 2);
    let params = load_checkpoint(&dir.join("r1/model.ckpt")).unwrap();
    assert_eq!(params.input_dim(), 64);
}

#[test]
fn train_error_codes() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    let out = illab(dir, &["train", "--data", "missing", "--out", "r"]);
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("missing"));
    small_data(dir);
    let out = illab(
        dir,
        &["train", "--data", "data", "--out", "r", "--loss", "bce", "--set", "train.base_lr=1e308", "--set", "train.max_lr=1e308", "--epochs", "2"],
    );
    assert_eq!(code(&out), 3, "{}", String::from_utf8_lossy(&out.stderr));
    let out = illab(dir, &["train", "--data", "data", "--out", "r", "--loss", "hinge"]);
    assert_eq!(code(&out), 2);
}

#[test]
fn config_file_and_flag_precedence() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    small_data(dir);
    fs::write(dir.join("run.toml"), "[train]\nepochs = 3\narch = \"mlp\"\n[paths]\ndata = \"data\"\n").unwrap();
    ok(dir, &["--config", "run.toml", "train", "--out", "r", "--epochs", "2"]);
    let history = String::from_utf8(read(dir.join("r/history.csv"))).unwrap();
    assert_eq!(history.lines().count(), 3);
    assert_eq!(
        load_checkpoint(&dir.join("r/model.ckpt")).unwrap().architecture().name(),
        "mlp"
    );
    let resolved = String::from_utf8(read(dir.join("r/config.toml"))).unwrap();
    assert!(resolved.contains("epochs = 2"));

    fs::write(dir.join("bad.toml"), "[train]\nepochz = 3\n").unwrap();
    let out = illab(dir, &["--config", "bad.toml", "train"]);
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("epochz"));
    assert_eq!(code(&illab(dir, &["no-such-command"])), 2);
}

#[test]
fn eval_single_ensemble_and_mismatch() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    small_data(dir);
    ok(dir, &["train", "--data", "data", "--out", "r", "--epochs", "3"]);
    let reps = ["--replications", "200"];
    let one = ok(dir, &[&["eval", "--data", "data", "--ckpt", "r/model.ckpt", "--out", "e1"][..], &reps].concat());
    let three = ok(
        dir,
        &[
            &[
                "eval", "--data", "data", "--ckpt", "r/model.ckpt", "--ckpt", "r/model.ckpt", "--ckpt", "r/model.ckpt",
                "--out", "e3",
            ][..],
            &reps,
        ]
        .concat(),
    );
    assert_eq!(one, three);
    assert_eq!(read(dir.join("e1/predictions.csv")), read(dir.join("e3/predictions.csv")));
    let mut j1: Value = serde_json::from_slice(&read(dir.join("e1/report.json"))).unwrap();
    let mut j3: Value = serde_json::from_slice(&read(dir.join("e3/report.json"))).unwrap();
    assert_eq!(j3["members"].as_array().unwrap().len(), 3);
    j1["members"] = Value::Null;
    j3["members"] = Value::Null;
    assert_eq!(j1, j3);

    let text = String::from_utf8(read(dir.join("e1/report.txt"))).unwrap();
    let mean = text.lines().find(|l| l.starts_with("Mean")).expect("mean row");
    let auc = j1["mean"]["auc"].as_f64().unwrap();
    assert!(mean.contains(&format!("{auc:.3}")));
    let ci = &j1["mean"]["ci"]["auc"];
    assert!(mean.contains(&format!("({:.3}-{:.3})", ci[0].as_f64().unwrap(), ci[1].as_f64().unwrap())));
    for (_, class) in j1["classes"].as_object().unwrap() {
        if class.get("missing").is_none() {
            assert!(class["ci"]["auc"].is_array());
            assert!(class["threshold"].is_number() || class["threshold"].is_string());
        }
    }

    ok(dir, &["gen-data", "--kind", "patches", "--out", "pdata", "--num-samples", "60"]);
    let out = illab(dir, &["eval", "--data", "pdata", "--ckpt", "r/model.ckpt", "--out", "ex"]);
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("features"));
}

#[test]
fn compare_losses_table() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    small_data(dir);
    let args = ["compare-losses", "--data", "data", "--epochs", "2", "--replications", "100", "--out"];
    let a = ok(dir, &[&args[..], &["c1"]].concat());
    ok(dir, &[&args[..], &["c2"]].concat());
    let lines: Vec<&str> = a.lines().collect();
    assert_eq!(lines.len(), 6);
    assert_eq!(lines[0].split_whitespace().collect::<Vec<_>>(), ["Loss", "AUROC", "CI", "F1", "CI"]);
    for (line, name) in lines[1..].iter().zip(["bce", "weighted-bce", "focal", "db", "modified-db"]) {
        assert_eq!(line.split_whitespace().next(), Some(name));
    }
    let json: Value = serde_json::from_slice(&read(dir.join("c1/compare.json"))).unwrap();
    assert_eq!(json["rows"].as_array().unwrap().len(), 5);
    for f in ["compare.json", "compare.txt"] {
        assert_eq!(read(dir.join("c1").join(f)), read(dir.join("c2").join(f)));
    }
}

#[test]
fn grad_cam_outputs_and_errors() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    ok(dir, &["gen-data", "--kind", "patches", "--out", "pdata", "--num-samples", "120"]);
    ok(
        dir,
        &["train", "--data", "pdata", "--arch", "tiny-cnn", "--loss", "bce", "--epochs", "3", "--out", "cnn"],
    );
    let m = Manifest::read(&dir.join("pdata")).unwrap();
    let image = m.image_path(&dir.join("pdata"), "img00000").unwrap();
    let img = read_pgm(&image).unwrap();
    let image_arg = image.to_str().unwrap();
    ok(dir, &["grad-cam", "--ckpt", "cnn/model.ckpt", "--image", image_arg, "--class", "0", "--out", "g"]);
    let sal = read_pgm(&dir.join("g/saliency.pgm")).unwrap();
    let comp = read_pgm(&dir.join("g/composite.pgm")).unwrap();
    assert_eq!((sal.width(), sal.height()), (img.width(), img.height()));
    assert_eq!((comp.width(), comp.height()), (2 * img.width(), img.height()));

    small_data(dir);
    ok(dir, &["train", "--data", "data", "--arch", "mlp", "--epochs", "1", "--out", "mlp"]);
    let out = illab(dir, &["grad-cam", "--ckpt", "mlp/model.ckpt", "--image", image_arg, "--class", "0", "--out", "g2"]);
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("unsupported architecture"));
}
