//! Command-line entry point: `run`, `grid`, `detect-eval`, `plot`.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::defense::{
    corpus_accuracy, read_corpus, write_corpus, CorpusProtocol, DetectorKind, DetectorParams, Normalization,
};
use crate::error::{Error, Result};
use crate::harness::{
    emit_csv, emit_plot, parse_csv, run_grid_search, run_with_data, DataBundle, ExperimentConfig, GridSpace, PlotEntry,
};

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 1;
pub const EXIT_RUNTIME: i32 = 2;

#[derive(Debug, Parser)]
#[command(
    name = "fedgauntlet",
    version,
    about = "Federated-learning poisoning and defense simulator"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct Common {
    /// Experiment config (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Output directory.
    #[arg(long, default_value = ".")]
    out: PathBuf,
    /// MNIST directory; overrides the config and FEDGAUNTLET_DATA_DIR.
    #[arg(long)]
    data_dir: Option<PathBuf>,
    /// Full-scale client counts (100, or 50 for trees).
    #[arg(long)]
    paper_scale: bool,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run one experiment; writes report.csv and report.svg.
    Run {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        seed: Option<u64>,
        /// Also write the per-client detector corpus here.
        #[arg(long)]
        corpus: Option<PathBuf>,
    },
    /// Grid search over the `[grid]` table of the config; writes grid.csv.
    Grid {
        #[command(flatten)]
        common: Common,
    },
    /// Score outlier detectors on a recorded corpus.
    DetectEval {
        /// Corpus CSV; repeat to pool several runs.
        #[arg(long, required = true)]
        corpus: Vec<PathBuf>,
        /// ocsvm, isolation_forest, robust_covariance, lof or all.
        #[arg(long, default_value = "all")]
        detector: String,
        #[arg(long, default_value = "holdout")]
        protocol: String,
        #[arg(long, default_value = "rank")]
        normalization: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Grouped bar chart from report CSVs given as MODEL:LABEL=PATH.
    Plot {
        #[arg(long)]
        out: PathBuf,
        #[arg(required = true)]
        entries: Vec<String>,
    },
}

/// Parses `args` (including the program name), runs, and returns the exit code.
pub fn cli_main<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => EXIT_OK,
                _ => EXIT_CONFIG,
            };
        }
    };
    match dispatch(cli.command) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_config() {
                EXIT_CONFIG
            } else {
                EXIT_RUNTIME
            }
        }
    }
}

fn load_config(common: &Common) -> Result<(ExperimentConfig, Option<GridSpace>)> {
    let path = &common.config;
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut table: toml::Table = text
        .parse()
        .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    let grid = table
        .remove("grid")
        .map(|g| match g {
            toml::Value::Table(t) => t
                .into_iter()
                .map(|(k, v)| match v {
                    toml::Value::Array(values) => Ok((k, values)),
                    _ => Err(Error::Config(format!("grid entry '{k}' must be an array"))),
                })
                .collect::<Result<GridSpace>>(),
            _ => Err(Error::Config("[grid] must be a table".into())),
        })
        .transpose()?;
    let mut cfg: ExperimentConfig = toml::Value::Table(table)
        .try_into()
        .map_err(|e: toml::de::Error| Error::Config(format!("{}: {e}", path.display())))?;
    if common.data_dir.is_some() {
        cfg.data_dir = common.data_dir.clone();
    }
    cfg.paper_scale |= common.paper_scale;
    cfg.validate()?;
    Ok((cfg, grid))
}

fn ensure_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn dispatch(command: Command) -> Result<()> {
    match command {
        Command::Run { common, seed, corpus } => {
            let (mut cfg, _) = load_config(&common)?;
            if let Some(seed) = seed {
                cfg.seed = seed;
            }
            let data = DataBundle::load(&cfg.resolve_data_dir()?)?;
            let report = run_with_data(&cfg, &data)?;
            ensure_dir(&common.out)?;
            emit_csv(&report, &common.out.join("report.csv"))?;
            emit_plot(&[PlotEntry::from(&report)], &common.out.join("report.svg"))?;
            if let Some(path) = corpus {
                write_corpus(&path, &report.corpus)?;
            }
            println!(
                "{} {} final accuracy {:.4} ({:.1}s)",
                report.model,
                report.label,
                report.final_accuracy(),
                report.wall_time.as_secs_f64()
            );
            Ok(())
        }
        Command::Grid { common } => {
            let (cfg, grid) = load_config(&common)?;
            let space = grid.ok_or_else(|| Error::Config("config has no [grid] table".into()))?;
            let data = DataBundle::load(&cfg.resolve_data_dir()?)?;
            let result = run_grid_search(&space, &cfg, &data)?;
            ensure_dir(&common.out)?;
            let path = common.out.join("grid.csv");
            let mut w = csv::Writer::from_path(&path).map_err(|e| Error::Format(e.to_string()))?;
            let mut header: Vec<String> = space.iter().map(|(k, _)| k.clone()).collect();
            header.push("accuracy".into());
            w.write_record(&header).map_err(|e| Error::Format(e.to_string()))?;
            for (i, row) in result.rows.iter().enumerate() {
                let mut rec: Vec<String> = row.assignment.iter().map(|(_, v)| v.to_string()).collect();
                rec.push(row.accuracy.to_string());
                w.write_record(&rec).map_err(|e| Error::Format(e.to_string()))?;
                let mark = if i == result.best_index { " *" } else { "" };
                println!("{}  {:.4}{mark}", rec[..rec.len() - 1].join("  "), row.accuracy);
            }
            w.flush().map_err(|e| Error::io(&path, e))?;
            Ok(())
        }
        Command::DetectEval {
            corpus,
            detector,
            protocol,
            normalization,
            seed,
        } => {
            let mut rows = Vec::new();
            for path in &corpus {
                rows.extend(read_corpus(path)?);
            }
            let kinds: Vec<DetectorKind> = if detector.eq_ignore_ascii_case("all") {
                DetectorKind::ALL.to_vec()
            } else {
                vec![detector.parse()?]
            };
            let protocol: CorpusProtocol = protocol.parse()?;
            let normalization = match normalization.as_str() {
                "rank" => Normalization::Rank,
                "minmax" => Normalization::MinMax,
                other => return Err(Error::Config(format!("unknown normalization '{other}'"))),
            };
            let params = DetectorParams {
                seed,
                ..DetectorParams::default()
            };
            for kind in kinds {
                let acc = corpus_accuracy(&rows, kind, normalization, &params, protocol)?;
                println!("{kind} {acc:.4}");
            }
            Ok(())
        }
        Command::Plot { out, entries } => {
            let mut plot = Vec::with_capacity(entries.len());
            for spec in &entries {
                let (name, path) = spec
                    .split_once('=')
                    .ok_or_else(|| Error::Config(format!("plot entry '{spec}' is not MODEL:LABEL=PATH")))?;
                let (model, label) = name.split_once(':').unwrap_or((name, "none"));
                let rows = parse_csv(Path::new(path))?;
                let last = rows
                    .iter()
                    .find(|r| r.phase == "final")
                    .ok_or_else(|| Error::Format(format!("{path}: no final row")))?;
                plot.push(PlotEntry {
                    model: model.into(),
                    label: label.into(),
                    accuracy: last.accuracy,
                });
            }
            emit_plot(&plot, &out)
        }
    }
}
