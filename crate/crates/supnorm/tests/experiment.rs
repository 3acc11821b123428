use std::fs;
use std::path::Path;

use supnorm::config::{ContextSpec, ExperimentConfig};
use supnorm::experiment::{resolve_dataset, run_experiment, TRAIN_FRACTION};
use supnorm::report::MetricsReport;
use supnorm_core::data::stratified_split;

const BASE: &str = r#"{
    "dataset": {"generator": "mixture", "k": 3, "classes": 3, "n_per_context": 60, "dim": 5,
                "context_shift": 10.0, "class_margin": 3.0, "seed": 2},
    "contexts": {"source": "ground_truth"},
    "methods": ["bn", "sbn", "mn"],
    "model": {"hidden": [12]},
    "training": {"epochs": 3, "batch_size": 16, "lr": 0.002, "weight_decay": 0.0001, "seeds": [4, 9]}
}"#;

fn records(path: &Path) -> Vec<Vec<String>> {
    fs::read_to_string(path).unwrap().lines().skip(1).map(|l| l.split(',').map(str::to_string).collect()).collect()
}

fn mean_std(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = if v.len() > 1 { v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0) } else { 0.0 };
    (mean, var.sqrt())
}

#[test]
fn outputs_follow_the_row_contract_and_totals_recompute() {
    let dir = tempfile::tempdir().unwrap();
    let config = ExperimentConfig::from_json(BASE).unwrap();
    run_experiment(&config, Some(dir.path())).unwrap();

    let rows = records(&dir.path().join("rows.csv"));
    assert_eq!(rows.len(), 3 * 2 * 3);
    let confusion = records(&dir.path().join("confusion.csv"));
    assert_eq!(confusion.len(), 3 * 2 * 9);
    assert_eq!(records(&dir.path().join("timing.csv")).len(), 6);
    assert_eq!(fs::read_dir(dir.path().join("checkpoints")).unwrap().count(), 6);
    let saved = ExperimentConfig::from_json(&fs::read_to_string(dir.path().join("config.json")).unwrap()).unwrap();
    assert_eq!(saved, config);

    let summary = records(&dir.path().join("summary.csv"));
    assert_eq!(summary.iter().map(|r| r[0].as_str()).collect::<Vec<_>>(), ["bn", "sbn", "mn"]);
    for line in &summary {
        let method = &line[0];
        let finals: Vec<f64> = rows.iter().filter(|r| &r[0] == method && r[2] == "3").map(|r| r[5].parse().unwrap()).collect();
        let (mean, std) = mean_std(&finals);
        assert!((line[1].parse::<f64>().unwrap() - mean).abs() < 1e-12);
        assert!((line[2].parse::<f64>().unwrap() - std).abs() < 1e-12);

        // Macro precision and recall from the raw cells, averaged over seeds.
        let (mut precs, mut recs) = (Vec::new(), Vec::new());
        for seed in ["4", "9"] {
            let mut m = [[0.0f64; 3]; 3];
            for r in confusion.iter().filter(|r| &r[0] == method && r[1] == seed) {
                m[r[2].parse::<usize>().unwrap()][r[3].parse::<usize>().unwrap()] = r[4].parse().unwrap();
            }
            let total: f64 = m.iter().flatten().sum();
            let acc = (0..3).map(|c| m[c][c]).sum::<f64>() / total;
            let last = rows.iter().find(|r| &r[0] == method && r[1] == seed && r[2] == "3").unwrap();
            assert!((acc - last[5].parse::<f64>().unwrap()).abs() < 1e-12);
            let ratio = |num: f64, den: f64| if den > 0.0 { num / den } else { 0.0 };
            precs.push((0..3).map(|c| ratio(m[c][c], (0..3).map(|t| m[t][c]).sum())).sum::<f64>() / 3.0);
            recs.push((0..3).map(|c| ratio(m[c][c], m[c].iter().sum())).sum::<f64>() / 3.0);
        }
        assert!((line[3].parse::<f64>().unwrap() - mean_std(&precs).0).abs() < 1e-12);
        assert!((line[4].parse::<f64>().unwrap() - mean_std(&recs).0).abs() < 1e-12);
        assert_eq!(line[6], "");
    }
}

#[test]
fn truncated_rows_still_load() {
    let dir = tempfile::tempdir().unwrap();
    run_experiment(&ExperimentConfig::from_json(BASE).unwrap(), Some(dir.path())).unwrap();
    let path = dir.path().join("rows.csv");
    let text = fs::read_to_string(&path).unwrap();
    let keep: String = text.lines().take(5).map(|l| format!("{l}\n")).collect();
    fs::write(&path, keep).unwrap();
    let report = MetricsReport::load(dir.path()).unwrap();
    assert_eq!(report.rows.len(), 4);
    assert_eq!(report.summarize(false).unwrap().len(), 1);
}

#[test]
fn thread_count_does_not_change_results() {
    let one = ExperimentConfig::from_json(&BASE.replace("\"seeds\": [4, 9]", "\"seeds\": [4, 9], \"threads\": 1")).unwrap();
    let many = ExperimentConfig::from_json(&BASE.replace("\"seeds\": [4, 9]", "\"seeds\": [4, 9], \"threads\": 5")).unwrap();
    let untimed = |config: &ExperimentConfig| {
        let mut report = run_experiment(config, None).unwrap();
        report.runs.iter_mut().for_each(|r| r.wall_s = None);
        report
    };
    assert_eq!(untimed(&one), untimed(&many));
}

#[test]
fn adaptation_evaluates_only_held_out_target_rows() {
    let text = r#"{
        "dataset": {"generator": "domain_shift", "classes": 3, "n_source": 90, "n_target": 60, "dim": 4,
                    "scale_shift": 3.0, "mean_shift": 5.0, "seed": 3},
        "methods": ["sbn"],
        "model": {"hidden": [8]},
        "training": {"epochs": 2, "batch_size": 16, "lr": 0.001, "weight_decay": 0.0,
                     "seeds": [1, 2], "protocol": "adaptation", "target_context": 1}
    }"#;
    let config = ExperimentConfig::from_json(text).unwrap();
    let ds = resolve_dataset(&config.dataset).unwrap();
    let report = run_experiment(&config, None).unwrap();
    for run in &report.runs {
        let (_, eval) = stratified_split(&ds.class_labels, ds.class_count, TRAIN_FRACTION, run.seed);
        let target = eval.iter().filter(|&&i| ds.context_labels.as_ref().unwrap()[i] == 1).count() as u64;
        assert_eq!(run.confusion.total(), target);
    }
}

#[test]
fn superclass_contexts_run() {
    let config = ExperimentConfig::from_json(
        &BASE.replace(r#""contexts": {"source": "ground_truth"}"#, r#""contexts": {"source": "labels", "superclass_map": [0, 0, 1]}"#),
    )
    .unwrap();
    assert_eq!(config.contexts, ContextSpec::Labels { superclass_map: vec![0, 0, 1] });
    assert_eq!(run_experiment(&config, None).unwrap().runs.len(), 6);
}

/// With eight true contexts, finer k-means contexts help rather than hurt.
#[test]
fn more_contexts_do_not_hurt_on_eight_context_data() {
    let accuracy = |k: usize| {
        let text = format!(
            r#"{{
                "dataset": {{"generator": "mixture", "k": 8, "classes": 4, "n_per_context": 250, "dim": 16,
                            "context_shift": 20.0, "class_margin": 3.0, "seed": 7}},
                "contexts": {{"source": "kmeans", "k": {k}}},
                "methods": ["sbn"],
                "model": {{"hidden": [32, 32]}},
                "training": {{"epochs": 10, "batch_size": 64, "lr": 0.001, "weight_decay": 0.0001, "seeds": [0, 1, 2]}}
            }}"#
        );
        let report = run_experiment(&ExperimentConfig::from_json(&text).unwrap(), None).unwrap();
        report.summarize(false).unwrap()[0].accuracy.mean
    };
    let sweep: Vec<f64> = [2, 4, 8].into_iter().map(accuracy).collect();
    assert!(sweep.windows(2).all(|w| w[1] >= w[0] - 0.01), "{sweep:?}");
}
