//! Command-line entry points.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::error::ErrorKind;
use clap::{Parser, Subcommand};
use supnorm_core::context::kmeans_fit;

use crate::config::{ExperimentConfig, GeneratorSpec};
use crate::error::Result;
use crate::experiment::run_experiment;
use crate::formats::{load_dataset, read_text, save, save_dataset};
use crate::report::{compare_table, write_text, MetricsReport, SUMMARY_FILE};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "supnorm", version, about = "Compare normalization layers on synthetic heterogeneous data")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a dataset from a generator spec.
    GenData {
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Fit k-means to a dataset's features.
    Cluster {
        #[arg(long)]
        data: PathBuf,
        #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
        k: u64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train every method and seed of an experiment config.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Print the comparison table of a run directory and write its summary.csv.
    Compare {
        #[arg(long)]
        report: PathBuf,
        /// Fill the wall_s column from timing.csv.
        #[arg(long)]
        timing: bool,
    },
}

/// Runs the command line and returns the process exit code: 0 on success,
/// 1 on usage errors, 2 on data or config errors.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let text = e.render().ansi().to_string();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
                    let _ = write!(out, "{text}");
                    EXIT_OK
                }
                _ => {
                    let _ = write!(err, "{text}");
                    EXIT_USAGE
                }
            };
        }
    };
    match execute(cli.command, out) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            EXIT_DATA
        }
    }
}

fn execute(command: Command, out: &mut dyn Write) -> Result<()> {
    match command {
        Command::GenData { spec, out: path } => {
            let ds = GeneratorSpec::from_json(&read_text(&spec)?)?.generate()?;
            save_dataset(&ds, &path)?;
            let _ = writeln!(out, "wrote {} samples ({} features, {} classes) to {}", ds.len(), ds.dim(), ds.class_count, path.display());
        }
        Command::Cluster { data, k, seed, out: path } => {
            let ds = load_dataset(&data)?;
            let model = kmeans_fit(&ds.features, k as usize, 300, 1e-8, seed)?;
            save(&model, &path)?;
            let _ = writeln!(out, "k={} inertia={} iterations={}", model.k(), model.inertia, model.iterations_run);
        }
        Command::Train { config, out: dir } => {
            let config = ExperimentConfig::load(&config)?;
            let report = run_experiment(&config, Some(&dir))?;
            let (text, _) = compare_table(&report, false)?;
            let _ = write!(out, "{text}");
        }
        Command::Compare { report, timing } => compare(&report, timing, out)?,
    }
    Ok(())
}

fn compare(dir: &Path, timing: bool, out: &mut dyn Write) -> Result<()> {
    let report = MetricsReport::load(dir)?;
    let (text, csv) = compare_table(&report, timing)?;
    write_text(&dir.join(SUMMARY_FILE), &csv)?;
    let _ = write!(out, "{text}");
    Ok(())
}
