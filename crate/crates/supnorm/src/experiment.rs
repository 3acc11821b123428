//! Trains every configured (method, seed) pair and collects the report.
//!
//! Jobs run on a pool of worker threads, each owning its model and
//! normalization state. A single writer receives their epoch rows and writes
//! them strictly in job order (methods in config order, then seeds), so the
//! output files do not depend on scheduling.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::mpsc;
use std::thread;
use std::time::Instant;

use supnorm_core::context::{context_proportions, kmeans_assign, kmeans_fit};
use supnorm_core::data::stratified_split;
use supnorm_core::metrics::ConfusionMatrix;
use supnorm_core::model::{AdamWConfig, MlpConfig, NormChoice, NormType};
use supnorm_core::train::{train_model, EvalSet, TrainConfig, TrainSet};
use supnorm_core::{ContextAssignment, Dataset, Mlp};

use crate::config::{ContextSpec, DatasetSpec, ExperimentConfig, Protocol};
use crate::error::{Error, Result};
use crate::formats::{load_dataset, save};
use crate::report::{
    compare_table, write_text, CsvAppender, EpochRow, MetricsReport, RunResult, TimingRow, CONFUSION_FILE, ROWS_FILE, SUMMARY_FILE,
    TIMING_FILE,
};

/// Share of each class used for training; the rest is held out.
pub const TRAIN_FRACTION: f64 = 0.8;
const KMEANS_MAX_ITER: usize = 300;
const KMEANS_TOL: f64 = 1e-8;

pub fn resolve_dataset(spec: &DatasetSpec) -> Result<Dataset> {
    match spec {
        DatasetSpec::File { path } => load_dataset(path),
        DatasetSpec::Generated(g) => g.generate(),
    }
}

/// Per-sample context indices for the whole dataset and the number of
/// contexts. k-means is fitted on the training rows only.
fn context_indices(config: &ExperimentConfig, ds: &Dataset, train_rows: &[usize], seed: u64) -> Result<(Vec<usize>, usize)> {
    let (indices, k) = match &config.contexts {
        ContextSpec::GroundTruth => {
            let labels = ds.context_labels.clone().ok_or_else(|| Error::config("contexts.source", "dataset has no context labels"))?;
            (labels, 0)
        }
        ContextSpec::Labels { superclass_map } => {
            if superclass_map.len() < ds.class_count {
                return Err(Error::config(
                    "contexts.superclass_map",
                    format!("maps {} classes, dataset has {}", superclass_map.len(), ds.class_count),
                ));
            }
            (ds.class_labels.iter().map(|&c| superclass_map[c]).collect(), 0)
        }
        ContextSpec::Kmeans { k } => {
            let model = kmeans_fit(&ds.features.select_rows(train_rows), *k, KMEANS_MAX_ITER, KMEANS_TOL, seed)?;
            (kmeans_assign(&model, &ds.features)?.indices().to_vec(), *k)
        }
    };
    let k = k.max(indices.iter().max().map_or(1, |m| m + 1));
    Ok((indices, k))
}

/// Everything a job needs besides the method: the split and its contexts.
struct Prepared {
    train_x: supnorm_core::Matrix,
    train_labels: Vec<Option<usize>>,
    train_contexts: ContextAssignment,
    eval_x: supnorm_core::Matrix,
    eval_labels: Vec<usize>,
    eval_contexts: ContextAssignment,
}

fn prepare(config: &ExperimentConfig, ds: &Dataset, seed: u64) -> Result<Prepared> {
    let (train_rows, eval_rows) = stratified_split(&ds.class_labels, ds.class_count, TRAIN_FRACTION, seed);
    let (ctx, k) = context_indices(config, ds, &train_rows, seed)?;
    let (train_labels, eval_rows): (Vec<Option<usize>>, Vec<usize>) = match config.training.protocol {
        Protocol::Supervised => (train_rows.iter().map(|&i| Some(ds.class_labels[i])).collect(), eval_rows),
        Protocol::Adaptation => {
            let target = config.training.target_context.expect("validated");
            if target >= k {
                return Err(Error::config("training.target_context", format!("{target} is not one of the {k} contexts")));
            }
            let labels = train_rows.iter().map(|&i| (ctx[i] != target).then_some(ds.class_labels[i])).collect();
            (labels, eval_rows.into_iter().filter(|&i| ctx[i] == target).collect())
        }
    };
    if eval_rows.is_empty() {
        return Err(supnorm_core::Error::EmptySelection.into());
    }
    let pick = |rows: &[usize]| rows.iter().map(|&i| ctx[i]).collect::<Vec<_>>();
    let lambda = context_proportions(&pick(&train_rows), k)?;
    Ok(Prepared {
        train_x: ds.features.select_rows(&train_rows),
        train_labels,
        train_contexts: ContextAssignment::new(pick(&train_rows), k, lambda.clone())?,
        eval_x: ds.features.select_rows(&eval_rows),
        eval_labels: eval_rows.iter().map(|&i| ds.class_labels[i]).collect(),
        eval_contexts: ContextAssignment::new(pick(&eval_rows), k, lambda)?,
    })
}

/// Trains one (method, seed) pair, passing each epoch's row to `sink`.
pub fn run_job(
    config: &ExperimentConfig,
    ds: &Dataset,
    method: NormType,
    seed: u64,
    mut sink: impl FnMut(EpochRow),
) -> Result<(RunResult, Mlp)> {
    let start = Instant::now();
    let t = &config.training;
    let data = prepare(config, ds, seed)?;
    let k = data.train_contexts.k();
    let norm = match method {
        NormType::Batch => NormChoice::Batch,
        NormType::Layer => NormChoice::Layer,
        NormType::Instance => NormChoice::Instance,
        NormType::Mixture => NormChoice::Mixture { components: t.mn_components.unwrap_or(k) },
        NormType::Supervised => NormChoice::Supervised { lambda: data.train_contexts.lambda().to_vec() },
    };
    let mut mlp_config = MlpConfig::new(ds.dim(), config.model.hidden.clone(), ds.class_count, norm, seed);
    mlp_config.eps = t.eps;
    mlp_config.momentum_alpha = t.momentum_alpha;
    let mut model = Mlp::new(&mlp_config)?;
    if method == NormType::Mixture {
        model.fit_mixtures(&data.train_x, t.mn_components.unwrap_or(k), seed)?;
    }
    let supervised = method == NormType::Supervised;
    let train = TrainSet { x: &data.train_x, labels: &data.train_labels, contexts: supervised.then_some(&data.train_contexts) };
    let eval = EvalSet { x: &data.eval_x, labels: &data.eval_labels, contexts: supervised.then_some(&data.eval_contexts) };
    let train_config = TrainConfig {
        epochs: t.epochs,
        batch_size: t.batch_size,
        optimizer: AdamWConfig { lr: t.lr, weight_decay: t.weight_decay, ..AdamWConfig::default() },
        seed,
        unknown_contexts_at_eval: supervised && t.unknown_contexts,
    };
    let name = method.name();
    let outcome = train_model(&mut model, &train, &eval, &train_config, |e| {
        sink(EpochRow {
            method: name.to_string(),
            seed,
            epoch: e.epoch,
            train_loss: e.train_loss,
            train_acc: e.train_acc,
            eval_acc: e.eval_acc,
        });
        Ok(())
    })?;
    let confusion = ConfusionMatrix::from_predictions(&data.eval_labels, &outcome.eval_predictions, ds.class_count)?;
    let run = RunResult { method: name.to_string(), seed, confusion, wall_s: Some(start.elapsed().as_secs_f64()) };
    Ok((run, model))
}

enum Message {
    Row(usize, EpochRow),
    Done(usize, Box<Result<(RunResult, Mlp)>>),
}

/// Output files of a run directory, written in job order.
struct Writers {
    rows: CsvAppender,
    confusion: CsvAppender,
    timing: CsvAppender,
}

impl Writers {
    fn create(dir: &Path) -> Result<Self> {
        fs::create_dir_all(dir.join("checkpoints")).map_err(|e| Error::io(dir, e))?;
        Ok(Self {
            rows: CsvAppender::create(&dir.join(ROWS_FILE))?,
            confusion: CsvAppender::create(&dir.join(CONFUSION_FILE))?,
            timing: CsvAppender::create(&dir.join(TIMING_FILE))?,
        })
    }
}

/// Runs every job and returns the report. With `out_dir`, also writes
/// `rows.csv` as results arrive, then `confusion.csv`, `timing.csv`,
/// per-run checkpoints and `summary.csv` (whose `wall_s` column is left
/// empty so that repeated runs produce identical bytes).
pub fn run_experiment(config: &ExperimentConfig, out_dir: Option<&Path>) -> Result<MetricsReport> {
    config.validate()?;
    let methods = config.method_types()?;
    let ds = resolve_dataset(&config.dataset)?;
    let jobs: Vec<(NormType, u64)> = methods.iter().flat_map(|&m| config.training.seeds.iter().map(move |&s| (m, s))).collect();
    let mut writers = out_dir.map(Writers::create).transpose()?;
    if let Some(dir) = out_dir {
        write_text(&dir.join("config.json"), &config.to_json())?;
    }
    let threads = config.training.threads.unwrap_or_else(|| thread::available_parallelism().map_or(1, |n| n.get())).min(jobs.len());

    let next = AtomicUsize::new(0);
    let stop = AtomicBool::new(false);
    let (tx, rx) = mpsc::channel::<Message>();
    let mut report = MetricsReport::default();
    let mut first_error: Option<(usize, Error)> = None;

    thread::scope(|scope| {
        for _ in 0..threads {
            let tx = tx.clone();
            let (next, stop, jobs, ds) = (&next, &stop, &jobs, &ds);
            scope.spawn(move || loop {
                let j = next.fetch_add(1, Ordering::SeqCst);
                if j >= jobs.len() || stop.load(Ordering::SeqCst) {
                    break;
                }
                let (method, seed) = jobs[j];
                let result = run_job(config, ds, method, seed, |row| {
                    let _ = tx.send(Message::Row(j, row));
                });
                let _ = tx.send(Message::Done(j, Box::new(result)));
            });
        }
        drop(tx);

        let mut pending_rows: BTreeMap<usize, Vec<EpochRow>> = BTreeMap::new();
        let mut finished: BTreeMap<usize, Result<(RunResult, Mlp)>> = BTreeMap::new();
        let mut cursor = 0;
        for msg in rx {
            match msg {
                Message::Row(j, row) => pending_rows.entry(j).or_default().push(row),
                Message::Done(j, result) => {
                    finished.insert(j, *result);
                }
            }
            // Flush everything that is now in order.
            loop {
                for row in pending_rows.remove(&cursor).unwrap_or_default() {
                    if let Some(w) = writers.as_mut() {
                        if let Err(e) = w.rows.append(&row) {
                            first_error.get_or_insert((cursor, e));
                            stop.store(true, Ordering::SeqCst);
                        }
                    }
                    report.rows.push(row);
                }
                let Some(result) = finished.remove(&cursor) else { break };
                match result.and_then(|(run, model)| finish_job(writers.as_mut(), out_dir, &run, &model).map(|_| run)) {
                    Ok(run) => report.runs.push(run),
                    Err(e) => {
                        if first_error.as_ref().is_none_or(|(j, _)| cursor < *j) {
                            first_error = Some((cursor, e));
                        }
                        stop.store(true, Ordering::SeqCst);
                    }
                }
                cursor += 1;
            }
        }
    });

    if let Some((_, e)) = first_error {
        return Err(e);
    }
    if let Some(dir) = out_dir {
        let (_, csv) = compare_table(&report, false)?;
        write_text(&dir.join(SUMMARY_FILE), &csv)?;
    }
    Ok(report)
}

fn finish_job(writers: Option<&mut Writers>, out_dir: Option<&Path>, run: &RunResult, model: &Mlp) -> Result<()> {
    let (Some(w), Some(dir)) = (writers, out_dir) else { return Ok(()) };
    for cell in run.confusion_rows() {
        w.confusion.append(&cell)?;
    }
    w.timing.append(&TimingRow { method: run.method.clone(), seed: run.seed, wall_s: run.wall_s.unwrap_or(0.0) })?;
    save(model, &dir.join("checkpoints").join(format!("{}-seed{}.json", run.method, run.seed)))
}
