//! Run reports: per-epoch rows, final confusion matrices, timings and the
//! per-method comparison table.

use std::fs::File;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use supnorm_core::metrics::{mean_std, ConfusionMatrix};

use crate::error::{Error, Result};

pub const ROWS_FILE: &str = "rows.csv";
pub const CONFUSION_FILE: &str = "confusion.csv";
pub const TIMING_FILE: &str = "timing.csv";
pub const SUMMARY_FILE: &str = "summary.csv";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRow {
    pub method: String,
    pub seed: u64,
    pub epoch: usize,
    pub train_loss: f64,
    pub train_acc: f64,
    pub eval_acc: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfusionRow {
    pub method: String,
    pub seed: u64,
    pub truth: usize,
    pub predicted: usize,
    pub count: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimingRow {
    pub method: String,
    pub seed: u64,
    pub wall_s: f64,
}

/// Final evaluation of one (method, seed) run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunResult {
    pub method: String,
    pub seed: u64,
    pub confusion: ConfusionMatrix,
    pub wall_s: Option<f64>,
}

impl RunResult {
    pub fn confusion_rows(&self) -> Vec<ConfusionRow> {
        let k = self.confusion.classes;
        (0..k * k)
            .map(|i| ConfusionRow {
                method: self.method.clone(),
                seed: self.seed,
                truth: i / k,
                predicted: i % k,
                count: self.confusion.counts[i],
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct MetricsReport {
    pub rows: Vec<EpochRow>,
    pub runs: Vec<RunResult>,
}

/// Mean and sample standard deviation across seeds.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Stat {
    pub mean: f64,
    pub std: f64,
}

impl Stat {
    fn of(values: &[f64]) -> Self {
        let (mean, std) = mean_std(values);
        Self { mean, std }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub method: String,
    pub seeds: usize,
    pub accuracy: Stat,
    pub precision: Stat,
    pub recall: Stat,
    pub f1: Stat,
    /// Total wall-clock seconds of the method's runs, when requested.
    pub wall_s: Option<f64>,
}

impl MetricsReport {
    /// Methods in order of first appearance.
    pub fn methods(&self) -> Vec<String> {
        let mut out: Vec<String> = Vec::new();
        for m in self.runs.iter().map(|r| &r.method).chain(self.rows.iter().map(|r| &r.method)) {
            if !out.contains(m) {
                out.push(m.clone());
            }
        }
        out
    }

    /// Eval accuracy of the last epoch of a run.
    pub fn final_accuracy(&self, method: &str, seed: u64) -> Option<f64> {
        self.rows.iter().filter(|r| r.method == method && r.seed == seed).max_by_key(|r| r.epoch).map(|r| r.eval_acc)
    }

    /// One row per method over its completed runs. Accuracy comes from the
    /// last epoch's rows; precision, recall and F1 are macro averages from
    /// the final confusion matrices.
    pub fn summarize(&self, with_timing: bool) -> Result<Vec<SummaryRow>> {
        let mut out = Vec::new();
        for method in self.methods() {
            let runs: Vec<&RunResult> = self.runs.iter().filter(|r| r.method == method).collect();
            let mut acc = Vec::new();
            let (mut prec, mut rec, mut f1) = (Vec::new(), Vec::new(), Vec::new());
            for run in &runs {
                let Some(a) = self.final_accuracy(&method, run.seed) else { continue };
                let s = run.confusion.scores();
                acc.push(a);
                prec.push(s.precision);
                rec.push(s.recall);
                f1.push(s.f1);
            }
            if acc.is_empty() {
                continue;
            }
            let wall_s = if with_timing { runs.iter().map(|r| r.wall_s).sum::<Option<f64>>() } else { None };
            out.push(SummaryRow {
                method,
                seeds: acc.len(),
                accuracy: Stat::of(&acc),
                precision: Stat::of(&prec),
                recall: Stat::of(&rec),
                f1: Stat::of(&f1),
                wall_s,
            });
        }
        if out.is_empty() {
            return Err(Error::EmptyReport("no completed runs".into()));
        }
        Ok(out)
    }

    /// Reads `rows.csv`, `confusion.csv` and (if present) `timing.csv` from a
    /// run directory.
    pub fn load(dir: &Path) -> Result<Self> {
        let rows: Vec<EpochRow> = read_csv(&dir.join(ROWS_FILE))?;
        let confusion: Vec<ConfusionRow> = read_csv(&dir.join(CONFUSION_FILE))?;
        let timing_path = dir.join(TIMING_FILE);
        let timing: Vec<TimingRow> = if timing_path.exists() { read_csv(&timing_path)? } else { Vec::new() };

        let mut runs: Vec<RunResult> = Vec::new();
        let mut i = 0;
        while i < confusion.len() {
            let (method, seed) = (&confusion[i].method, confusion[i].seed);
            let end = confusion[i..].iter().position(|c| &c.method != method || c.seed != seed).map_or(confusion.len(), |p| i + p);
            let cells = &confusion[i..end];
            let k = (cells.len() as f64).sqrt() as usize;
            if k * k != cells.len() {
                return Err(csv_error(CONFUSION_FILE, format!("run {method}/{seed} has {} cells", cells.len())));
            }
            let mut m = ConfusionMatrix::new(k);
            for c in cells {
                if c.truth >= k || c.predicted >= k {
                    return Err(csv_error(CONFUSION_FILE, format!("cell ({}, {}) outside {k} classes", c.truth, c.predicted)));
                }
                m.counts[c.truth * k + c.predicted] = c.count;
            }
            let wall_s = timing.iter().find(|t| &t.method == method && t.seed == seed).map(|t| t.wall_s);
            runs.push(RunResult { method: method.clone(), seed, confusion: m, wall_s });
            i = end;
        }
        Ok(Self { rows, runs })
    }
}

fn csv_error(file: &str, message: String) -> Error {
    Error::Parse { what: file.to_string(), line: 0, column: 0, message }
}

fn read_csv<T: serde::de::DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::Reader::from_reader(file);
    reader
        .deserialize()
        .map(|r| {
            r.map_err(|e| {
                let line = e.position().map_or(0, |p| p.line() as usize);
                Error::Parse { what: path.display().to_string(), line, column: 0, message: e.to_string() }
            })
        })
        .collect()
}

/// Plain-text table and `summary.csv` contents. The CSV depends only on the
/// report, so identical reports give identical bytes.
pub fn compare_table(report: &MetricsReport, with_timing: bool) -> Result<(String, String)> {
    let summary = report.summarize(with_timing)?;
    Ok((render_text(&summary), render_csv(&summary)))
}

fn render_csv(summary: &[SummaryRow]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["method", "acc_mean", "acc_std", "prec", "rec", "f1", "wall_s"]).expect("in-memory write");
    for s in summary {
        let wall = s.wall_s.map(|v| v.to_string()).unwrap_or_default();
        w.write_record([
            s.method.clone(),
            s.accuracy.mean.to_string(),
            s.accuracy.std.to_string(),
            s.precision.mean.to_string(),
            s.recall.mean.to_string(),
            s.f1.mean.to_string(),
            wall,
        ])
        .expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("csv output is utf-8")
}

fn render_text(summary: &[SummaryRow]) -> String {
    let cell = |s: &Stat| format!("{:6.2} ± {:5.2}", 100.0 * s.mean, 100.0 * s.std);
    let width = summary.iter().map(|s| s.method.len()).max().unwrap_or(0).max("method".len());
    let timed = summary.iter().any(|s| s.wall_s.is_some());
    let mut out = format!(
        "{:<width$}  {:>5}  {:>15}  {:>15}  {:>15}  {:>15}",
        "method", "seeds", "accuracy (%)", "precision (%)", "recall (%)", "f1 (%)"
    );
    if timed {
        out.push_str(&format!("  {:>9}", "wall (s)"));
    }
    out.push('\n');
    for s in summary {
        out.push_str(&format!(
            "{:<width$}  {:>5}  {}  {}  {}  {}",
            s.method,
            s.seeds,
            cell(&s.accuracy),
            cell(&s.precision),
            cell(&s.recall),
            cell(&s.f1)
        ));
        if let Some(w) = s.wall_s {
            out.push_str(&format!("  {w:>9.2}"));
        }
        out.push('\n');
    }
    out
}

/// Appends CSV records and flushes after each one, so an interrupted run
/// leaves a readable prefix.
pub(crate) struct CsvAppender {
    inner: csv::Writer<File>,
}

impl CsvAppender {
    pub fn create(path: &Path) -> Result<Self> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        Ok(Self { inner: csv::Writer::from_writer(file) })
    }

    pub fn append<T: Serialize>(&mut self, record: &T) -> Result<()> {
        let io = |e: std::io::Error| Error::io("report", e);
        self.inner.serialize(record).map_err(|e| io(std::io::Error::other(e)))?;
        self.inner.flush().map_err(io)
    }
}

pub(crate) fn write_text(path: &Path, text: &str) -> Result<()> {
    let mut f = File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(text.as_bytes()).map_err(|e| Error::io(path, e))
}
