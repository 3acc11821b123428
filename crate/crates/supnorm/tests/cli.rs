use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use supnorm::formats::{load, load_dataset};
use supnorm_core::KMeansModel;

fn supnorm(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_supnorm")).args(args).output().unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn configs() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Lays out the bundled mixture example as `configs/` and `build/` under `root`.
fn bundled_example(root: &Path) -> PathBuf {
    fs::create_dir_all(root.join("configs")).unwrap();
    for name in ["mixture-spec.json", "mixture-experiment.json"] {
        fs::copy(configs().join(name), root.join("configs").join(name)).unwrap();
    }
    let spec = root.join("configs/mixture-spec.json");
    let data = root.join("build/mixture.json");
    let o = supnorm(&["gen-data", "--spec", s(&spec), "--out", s(&data)]);
    assert!(o.status.success(), "{}", stderr(&o));
    root.join("configs/mixture-experiment.json")
}

#[test]
fn bundled_example_runs_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let config = bundled_example(dir.path());
    let ds = load_dataset(&dir.path().join("build/mixture.json")).unwrap();
    assert_eq!((ds.len(), ds.dim(), ds.class_count), (300, 8, 3));

    let run = dir.path().join("run");
    let o = supnorm(&["train", "--config", s(&config), "--out", s(&run)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let train_table = String::from_utf8(o.stdout).unwrap();
    for method in ["bn", "ln", "mn", "sbn"] {
        assert!(train_table.lines().any(|l| l.starts_with(method)), "{train_table}");
    }
    let written = fs::read(run.join("summary.csv")).unwrap();

    let o = supnorm(&["compare", "--report", s(&run)]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(String::from_utf8(o.stdout).unwrap(), train_table);
    assert_eq!(fs::read(run.join("summary.csv")).unwrap(), written);

    let o = supnorm(&["compare", "--report", s(&run), "--timing"]);
    assert!(o.status.success());
    assert!(String::from_utf8(o.stdout).unwrap().contains("wall (s)"));
    let timed = fs::read_to_string(run.join("summary.csv")).unwrap();
    assert!(timed.lines().skip(1).all(|l| !l.ends_with(',')), "{timed}");
}

#[test]
fn cluster_writes_a_model() {
    let dir = tempfile::tempdir().unwrap();
    bundled_example(dir.path());
    let data = dir.path().join("build/mixture.json");
    let out = dir.path().join("km.json");
    let o = supnorm(&["cluster", "--data", s(&data), "--k", "3", "--seed", "4", "--out", s(&out)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let km: KMeansModel = load(&out).unwrap();
    assert_eq!((km.k(), km.dim()), (3, 8));
}

#[test]
fn zero_clusters_is_a_usage_error() {
    let o = supnorm(&["cluster", "--data", "d.json", "--k", "0", "--out", "m.json"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("--k"), "{}", stderr(&o));
}

#[test]
fn unknown_flags_and_commands_are_usage_errors() {
    for args in [&["train", "--config", "c.json", "--out", "o", "--fast"][..], &["fit"], &[]] {
        let o = supnorm(args);
        assert_eq!(o.status.code(), Some(1), "{args:?}");
        assert!(stderr(&o).contains("Usage"), "{}", stderr(&o));
    }
    assert_eq!(supnorm(&["--help"]).status.code(), Some(0));
}

#[test]
fn data_and_config_errors_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let config = bundled_example(dir.path());
    let data = dir.path().join("build/mixture.json");
    let text = fs::read_to_string(&data).unwrap();
    fs::write(&data, &text[..text.len() / 2]).unwrap();
    let o = supnorm(&["train", "--config", s(&config), "--out", s(&dir.path().join("run"))]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("parse-error"), "{}", stderr(&o));

    let bad = dir.path().join("bad.json");
    fs::write(&bad, fs::read_to_string(&config).unwrap().replace("\"batch_size\": 32", "\"batch_size\": 1")).unwrap();
    let o = supnorm(&["train", "--config", s(&bad), "--out", s(&dir.path().join("run"))]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("bad-config: training.batch_size"), "{}", stderr(&o));

    let o = supnorm(&["gen-data", "--spec", s(&dir.path().join("missing.json")), "--out", s(&data)]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("io"), "{}", stderr(&o));

    let empty = dir.path().join("empty");
    fs::create_dir(&empty).unwrap();
    fs::write(empty.join("rows.csv"), "method,seed,epoch,train_loss,train_acc,eval_acc\n").unwrap();
    fs::write(empty.join("confusion.csv"), "method,seed,truth,predicted,count\n").unwrap();
    let o = supnorm(&["compare", "--report", s(&empty)]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("empty-report"), "{}", stderr(&o));
}
