mod common;

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use common::*;
use musvm::synthetic::{SyntheticConfig, SyntheticData};

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_musvm")).args(args).output().unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

struct Fixture {
    dir: tempfile::TempDir,
    data: SyntheticData,
    train: PathBuf,
    universum: PathBuf,
    test: PathBuf,
}

fn fixture() -> Fixture {
    let dir = tempfile::tempdir().unwrap();
    let data = SyntheticConfig {
        n_per_class: 6,
        n_test_per_class: 4,
        n_universum: 5,
        ..SyntheticConfig::small(3, 4)
    }
    .generate(21);
    let (train, universum) = write_dataset(dir.path(), &data.train);
    let test = dir.path().join("test.csv");
    write_labelled_csv(&test, &data.test_x, &data.test_y, &data.train.label_map);
    Fixture { dir, data, train, universum: universum.unwrap(), test }
}

impl Fixture {
    fn out(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }
}

fn file_names(dir: &Path) -> Vec<String> {
    let mut v: Vec<String> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .collect();
    v.sort();
    v
}

fn json(path: &Path) -> serde_json::Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn missing_input_exits_2_and_names_the_path() {
    let f = fixture();
    let missing = f.dir.path().join("nope.csv");
    let o = run(&["train", "--train", s(&missing), "--out", s(&f.out("t"))]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("nope.csv"));
}

#[test]
fn invalid_flag_values_exit_2() {
    let f = fixture();
    for bad in [["--kernel", "poly"], ["--C", "-1"], ["--cstar-ratio", "lots"]] {
        let o = run(&["train", "--train", s(&f.train), "--out", s(&f.out("t")), bad[0], bad[1]]);
        assert_eq!(o.status.code(), Some(2), "{bad:?}");
    }
}

#[test]
fn bound_rejects_data_the_model_was_not_trained_on() {
    let f = fixture();
    let t = f.out("t");
    assert_eq!(run(&["train", "--train", s(&f.train), "--universum", s(&f.universum), "--out", s(&t)]).status.code(), Some(0));
    let model = t.join("model.json");
    let o = run(&["bound", "--model", s(&model), "--train", s(&f.test), "--universum", s(&f.universum), "--out", s(&f.out("b"))]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("hash"));
    let o = run(&["bound", "--model", s(&model), "--train", s(&f.train), "--universum", s(&f.universum), "--out", s(&f.out("b"))]);
    assert_eq!(o.status.code(), Some(0));
    let report = json(&f.out("b").join("span_report.json"));
    let bound = report["bound"].as_f64().unwrap();
    assert!((0.0..=1.0).contains(&bound));
}

#[test]
fn zero_cstar_matches_training_without_universum() {
    let f = fixture();
    let (a, b) = (f.out("a"), f.out("b"));
    assert_eq!(run(&["train", "--train", s(&f.train), "--universum", s(&f.universum), "--cstar", "0", "--tol", "1e-8", "--out", s(&a)]).status.code(), Some(0));
    assert_eq!(run(&["train", "--train", s(&f.train), "--tol", "1e-8", "--out", s(&b)]).status.code(), Some(0));
    for dir in [&a, &b] {
        let p = dir.join("pred");
        assert_eq!(run(&["predict", "--model", s(&dir.join("model.json")), "--test", s(&f.test), "--out", s(&p)]).status.code(), Some(0));
    }
    let pa = std::fs::read_to_string(a.join("pred/predictions.csv")).unwrap();
    let pb = std::fs::read_to_string(b.join("pred/predictions.csv")).unwrap();
    let labels = |t: &str| t.lines().map(|l| l.split(',').next().unwrap().to_owned()).collect::<Vec<_>>();
    assert_eq!(labels(&pa), labels(&pb));
}

#[test]
fn project_writes_one_file_per_class_and_set() {
    let f = fixture();
    let t = f.out("t");
    run(&["train", "--train", s(&f.train), "--universum", s(&f.universum), "--out", s(&t)]);
    let model = t.join("model.json");
    let with = f.out("p1");
    assert_eq!(run(&["project", "--model", s(&model), "--train", s(&f.train), "--universum", s(&f.universum), "--out", s(&with)]).status.code(), Some(0));
    let names = file_names(&with);
    assert_eq!(names.iter().filter(|n| n.ends_with(".csv")).count(), 6);
    assert!(names.contains(&"summary.json".to_owned()) && names.contains(&"manifest.json".to_owned()));
    let without = f.out("p2");
    assert_eq!(run(&["project", "--model", s(&model), "--train", s(&f.train), "--out", s(&without)]).status.code(), Some(0));
    let names = file_names(&without);
    assert_eq!(names.iter().filter(|n| n.ends_with(".csv")).count(), 3);
    assert!(names.iter().all(|n| !n.starts_with("universum")));
}

#[test]
fn single_point_tune_equals_train() {
    let f = fixture();
    let (t, u) = (f.out("t"), f.out("u"));
    assert_eq!(run(&["train", "--train", s(&f.train), "--universum", s(&f.universum), "--C", "1", "--delta", "0.05", "--out", s(&t)]).status.code(), Some(0));
    assert_eq!(
        run(&["tune", "--train", s(&f.train), "--universum", s(&f.universum), "--grid-C", "1", "--grid-delta", "0.05", "--scoring", "cv", "--folds", "3", "--out", s(&u)])
            .status
            .code(),
        Some(0)
    );
    assert_eq!(std::fs::read(t.join("model.json")).unwrap(), std::fs::read(u.join("model.json")).unwrap());
    let scores = std::fs::read_to_string(u.join("scores.csv")).unwrap();
    assert!(scores.starts_with("step,C,gamma,delta,cstar,score,status"));
    assert_eq!(scores.lines().count(), 3);
}

#[test]
fn manifest_records_resolved_auto_ratio() {
    let f = fixture();
    let t = f.out("t");
    run(&["train", "--train", s(&f.train), "--universum", s(&f.universum), "--C", "2", "--out", s(&t)]);
    let m = json(&t.join("manifest.json"));
    let (n, mu, l) = (f.data.train.n_train() as f64, f.data.train.n_universum() as f64, 3.0);
    let ratio = m["cstar_ratio"].as_f64().unwrap();
    assert!((ratio - n / (mu * l)).abs() < 1e-12);
    assert!((m["cstar"].as_f64().unwrap() - 2.0 * ratio).abs() < 1e-12);
}

#[test]
fn loo_and_sweep_produce_reports() {
    let f = fixture();
    let l = f.out("l");
    assert_eq!(run(&["loo", "--train", s(&f.train), "--universum", s(&f.universum), "--out", s(&l)]).status.code(), Some(0));
    let r = json(&l.join("loo_report.json"));
    assert_eq!(r["errors"].as_array().unwrap().len(), f.data.train.n_train());
    let w = f.out("w");
    assert_eq!(
        run(&["sweep", "--train", s(&f.train), "--universum", s(&f.universum), "--test", s(&f.test), "--sizes", "0,5", "--repeats", "2", "--out", s(&w)])
            .status
            .code(),
        Some(0)
    );
    assert_eq!(std::fs::read_to_string(w.join("sweep.csv")).unwrap().lines().count(), 3);
}
