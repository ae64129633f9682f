//! The `todlab` command-line front end.
//!
//! Exit codes: 0 success, 1 other runtime failure, 2 bad configuration or
//! arguments, 3 I/O failure, 4 missing artifact.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::activeloop::{
    labeled_file, prepare_data, read_labeled, run_experiment, snapshot_file, ExperimentConfig,
};
use crate::analysis::{
    bucket_mean_loss, capture_curve, default_sampling_fractions, spearman, Correlation,
    DEFAULT_NUM_BUCKETS, DEFAULT_TOP_LOSS_FRACTION,
};
use crate::discrepancy::{
    bound_reports_csv, bound_sweep, cod_scores, output_discrepancy_with, SweepCell,
};
use crate::error::{Error, Result};
use crate::io::{write_atomic, CsvTable};
use crate::nnet::{Label, NetworkSnapshot};
use crate::sampling::{AcquisitionKind, AcquisitionStrategy};
use crate::training::supervised_loss_grad;

/// Environment variable naming the default output root.
pub const OUT_ENV: &str = "TODLAB_OUT";
const DEFAULT_OUT_ROOT: &str = "todlab-out";
const INCOMPLETE: &str = "INCOMPLETE";

#[derive(Debug, Parser)]
#[command(
    name = "todlab",
    version,
    about = "Output-discrepancy active learning lab"
)]
pub struct Cli {
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run an active-learning experiment described by a JSON config.
    Run(RunArgs),
    /// Check the discrepancy bounds on random networks.
    VerifyBounds(BoundArgs),
    /// Relate discrepancy scores to true losses for one saved cycle.
    LossQuality(LossQualityArgs),
    /// Aggregate the runs under a directory into seed-wise means.
    Report(ReportArgs),
}

#[derive(Debug, Args)]
pub struct RunArgs {
    pub config: PathBuf,
    /// Output directory (default: $TODLAB_OUT/run, or todlab-out/run).
    pub out_dir: Option<PathBuf>,
    /// Seeds to run, overriding the config.
    #[arg(long, value_delimiter = ',')]
    pub seeds: Option<Vec<u64>>,
    /// Strategies to run, overriding the config.
    #[arg(long, value_delimiter = ',', value_parser = parse_strategy)]
    pub strategy: Option<Vec<AcquisitionKind>>,
}

#[derive(Debug, Args)]
pub struct BoundArgs {
    #[arg(long, value_delimiter = ',', default_values_t = [1e-4, 1e-3, 1e-1])]
    pub eta: Vec<f64>,
    #[arg(long = "T", value_delimiter = ',', default_values_t = [1, 2, 5, 10])]
    pub steps: Vec<usize>,
    #[arg(long, default_value_t = 1000)]
    pub trials: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output directory (default: $TODLAB_OUT/bounds).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct LossQualityArgs {
    /// A per-seed run directory containing config.json and snapshots.
    pub run_dir: PathBuf,
    pub cycle: usize,
    /// Compare the cycle's model with itself after this many extra
    /// full-batch steps on its labeled pool, instead of with the previous
    /// cycle's model.
    #[arg(long, default_value_t = 0)]
    pub gd_steps: usize,
    #[arg(long, default_value_t = DEFAULT_NUM_BUCKETS)]
    pub buckets: usize,
    #[arg(long, default_value_t = DEFAULT_TOP_LOSS_FRACTION)]
    pub top_loss: f64,
    /// Output directory (default: <run_dir>/loss_quality_c<cycle>).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// Directory holding a `run` output (default: $TODLAB_OUT/run).
    pub root: Option<PathBuf>,
}

fn parse_strategy(s: &str) -> std::result::Result<AcquisitionKind, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn out_root() -> PathBuf {
    std::env::var_os(OUT_ENV)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(DEFAULT_OUT_ROOT))
}

pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_) | Error::Argument(_) | Error::Parse { .. } | Error::Range { .. } => 2,
        Error::Io { .. } => 3,
        Error::MissingArtifact(_) => 4,
        Error::Shape { .. } | Error::Numeric(_) => 1,
    }
}

/// Parses `std::env::args` and runs the selected command.
pub fn main() -> i32 {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match execute(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("todlab: {e}");
            exit_code(&e)
        }
    }
}

/// Runs a parsed command line and returns the process exit code.
pub fn execute(cli: Cli) -> Result<i32> {
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(Error::argument("--threads must be at least 1"));
        }
        pool = pool.num_threads(n);
    }
    let pool = pool
        .build()
        .map_err(|e| Error::config(format!("cannot start worker pool: {e}")))?;
    pool.install(|| match cli.command {
        Command::Run(a) => cmd_run(&a).map(|_| 0),
        Command::VerifyBounds(a) => cmd_verify_bounds(&a),
        Command::LossQuality(a) => cmd_loss_quality(&a).map(|_| 0),
        Command::Report(a) => cmd_report(&a).map(|_| 0),
    })
}

/// Reads and validates an experiment config.
pub fn load_config(path: &Path) -> Result<ExperimentConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let config: ExperimentConfig = serde_json::from_str(&text).map_err(|e| Error::Parse {
        path: path.to_path_buf(),
        line: e.line() as u64,
        message: e.to_string(),
    })?;
    config.validate()?;
    Ok(config)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub config_path: PathBuf,
    pub out_dir: PathBuf,
    pub seeds: Vec<u64>,
    pub strategies: Vec<AcquisitionKind>,
    /// Seconds since the Unix epoch when the run started.
    pub timestamp: u64,
    pub tool_version: String,
    pub config: ExperimentConfig,
}

fn to_json<T: Serialize>(value: &T) -> Result<Vec<u8>> {
    let mut s = serde_json::to_string_pretty(value)
        .map_err(|e| Error::config(format!("cannot serialize: {e}")))?;
    s.push('\n');
    Ok(s.into_bytes())
}

/// Name of the sub-directory holding one (seed, strategy) run.
pub fn job_dir(seed: u64, kind: AcquisitionKind) -> String {
    format!("seed{seed}_{kind}")
}

/// Runs every (seed, strategy) pair and returns the output directory.
pub fn cmd_run(args: &RunArgs) -> Result<PathBuf> {
    let mut config = load_config(&args.config)?;
    if let Some(seeds) = &args.seeds {
        if seeds.is_empty() {
            return Err(Error::argument("--seeds needs at least one seed"));
        }
        config.seeds = seeds.clone();
    }
    let strategies = args
        .strategy
        .clone()
        .unwrap_or_else(|| vec![config.strategy.kind]);
    let out_dir = args
        .out_dir
        .clone()
        .unwrap_or_else(|| out_root().join("run"));

    std::fs::create_dir_all(&out_dir).map_err(|e| Error::io(&out_dir, e))?;
    let marker = out_dir.join(INCOMPLETE);
    write_atomic(&marker, b"run in progress or failed\n")?;
    let timestamp = SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0);
    let manifest = RunManifest {
        config_path: args.config.clone(),
        out_dir: out_dir.clone(),
        seeds: config.seeds.clone(),
        strategies: strategies.clone(),
        timestamp,
        tool_version: env!("CARGO_PKG_VERSION").to_string(),
        config: config.clone(),
    };
    write_atomic(&out_dir.join("manifest.json"), &to_json(&manifest)?)?;
    write_atomic(&out_dir.join("config.json"), &to_json(&config)?)?;

    let mut jobs: Vec<(u64, AcquisitionKind)> = Vec::new();
    for &seed in &config.seeds {
        for &kind in &strategies {
            jobs.push((seed, kind));
        }
    }
    let finals = jobs
        .par_iter()
        .map(|&(seed, kind)| {
            let cfg = ExperimentConfig {
                strategy: AcquisitionStrategy {
                    kind,
                    ..config.strategy
                },
                ..config.clone()
            };
            let dir = out_dir.join(job_dir(seed, kind));
            std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
            write_atomic(&dir.join(INCOMPLETE), b"")?;
            let run = run_experiment(&cfg, seed)?;
            run.write_to(&dir, &cfg)?;
            std::fs::remove_file(dir.join(INCOMPLETE)).map_err(|e| Error::io(&dir, e))?;
            let last = run.records.last().expect("at least one cycle");
            Ok((
                seed,
                kind,
                last.test_accuracy,
                run.final_pool.labeled_fraction(),
            ))
        })
        .collect::<Result<Vec<_>>>()?;

    let mut summary = CsvTable::new(&[
        "seed",
        "strategy",
        "final_test_accuracy",
        "final_labeled_fraction",
    ]);
    let mut sorted = finals;
    sorted.sort_by_key(|r| (r.0, r.1));
    for (seed, kind, acc, frac) in &sorted {
        summary.row(&[seed, kind, acc, frac]);
    }
    summary.write(&out_dir.join("summary.csv"))?;
    std::fs::remove_file(&marker).map_err(|e| Error::io(&marker, e))?;
    Ok(out_dir)
}

fn bound_threshold(cell: &SweepCell) -> Option<f64> {
    if cell.steps == 0 {
        Some(1.0)
    } else if cell.eta <= 1e-3 {
        Some(0.99)
    } else {
        None
    }
}

/// Runs the bound sweep; exit code 0 iff every gated cell meets its threshold.
pub fn cmd_verify_bounds(args: &BoundArgs) -> Result<i32> {
    let sweep = bound_sweep(&args.eta, &args.steps, args.trials, args.seed)?;
    let out = args
        .out
        .clone()
        .unwrap_or_else(|| out_root().join("bounds"));
    bound_reports_csv(&sweep.reports).write(&out.join("bounds.csv"))?;

    let mut summary = CsvTable::new(&[
        "eta",
        "T",
        "passed",
        "total",
        "pass_rate",
        "chain_held",
        "gated",
    ]);
    let mut ok = true;
    for cell in &sweep.cells {
        let threshold = bound_threshold(cell);
        let cell_ok =
            threshold.is_none_or(|t| cell.pass_rate() >= t) && cell.chain_held == cell.total;
        ok &= cell_ok;
        let label = if cell.steps == 0 {
            "relu-lipschitz".to_string()
        } else {
            format!("eta={} T={}", cell.eta, cell.steps)
        };
        println!(
            "{label}: pass rate {:.4} ({}/{}), chain {}/{}{}",
            cell.pass_rate(),
            cell.passed,
            cell.total,
            cell.chain_held,
            cell.total,
            match threshold {
                Some(t) if cell_ok => format!(", required {t}: ok"),
                Some(t) => format!(", required {t}: FAILED"),
                None => ", reported only".to_string(),
            }
        );
        summary.row(&[
            &cell.eta,
            &cell.steps,
            &cell.passed,
            &cell.total,
            &cell.pass_rate(),
            &cell.chain_held,
            &threshold.is_some(),
        ]);
    }
    summary.write(&out.join("bounds_summary.csv"))?;
    Ok(if ok { 0 } else { 1 })
}

/// Result of a loss-quality analysis.
#[derive(Debug, Clone, PartialEq)]
pub struct LossQuality {
    pub out_dir: PathBuf,
    pub spearman: Correlation,
    pub samples: usize,
}

fn load_snapshot(path: PathBuf) -> Result<NetworkSnapshot> {
    if !path.exists() {
        return Err(Error::MissingArtifact(path));
    }
    NetworkSnapshot::load(&path)
}

/// `steps` full-batch gradient steps on the supervised loss of `batch`.
fn extra_steps(
    start: &NetworkSnapshot,
    batch: &[(&[f64], Label)],
    eta: f64,
    steps: usize,
) -> Result<NetworkSnapshot> {
    let mut model = start.clone();
    for _ in 0..steps {
        let (_, grad) = supervised_loss_grad(&model, batch)?;
        model = model.sgd_step(&grad, eta)?;
    }
    Ok(model)
}

pub fn cmd_loss_quality(args: &LossQualityArgs) -> Result<LossQuality> {
    if args.cycle == 0 {
        return Err(Error::argument("cycles are numbered from 1"));
    }
    let config_path = args.run_dir.join("config.json");
    if !config_path.exists() {
        return Err(Error::MissingArtifact(config_path));
    }
    let config = load_config(&config_path)?;
    let seed = config.seeds[0];
    let current = load_snapshot(args.run_dir.join(snapshot_file(args.cycle)))?;
    let labeled = read_labeled(&args.run_dir.join(labeled_file(args.cycle)))?;
    let data = prepare_data(&config, seed)?;
    let train = &data.train;
    let repr = config.train.output_repr;

    let unlabeled: Vec<usize> = {
        let mut is_labeled = vec![false; train.len()];
        for &i in &labeled {
            *is_labeled.get_mut(i).ok_or(Error::Range {
                index: i,
                len: train.len(),
            })? = true;
        }
        (0..train.len()).filter(|&i| !is_labeled[i]).collect()
    };

    let scores = if args.gd_steps == 0 {
        let previous = load_snapshot(args.run_dir.join(snapshot_file(args.cycle - 1)))?;
        cod_scores(&current, &previous, train.features(), &unlabeled, repr)?
    } else {
        let batch: Vec<(&[f64], Label)> = labeled
            .iter()
            .map(|&i| (train.row(i), train.label(i)))
            .collect();
        let later = extra_steps(&current, &batch, config.train.eta, args.gd_steps)?;
        unlabeled
            .par_iter()
            .map(|&i| {
                Ok(crate::discrepancy::DiscrepancyScore {
                    sample_index: i,
                    value: output_discrepancy_with(&later, &current, train.row(i), repr)?,
                })
            })
            .collect::<Result<Vec<_>>>()?
    };
    let losses = unlabeled
        .par_iter()
        .map(|&i| current.loss(train.row(i), train.label(i)))
        .collect::<Result<Vec<f64>>>()?;

    let out_dir = args.out.clone().unwrap_or_else(|| {
        let suffix = if args.gd_steps == 0 {
            String::new()
        } else {
            format!("_k{}", args.gd_steps)
        };
        args.run_dir
            .join(format!("loss_quality_c{}{suffix}", args.cycle))
    });
    let buckets = bucket_mean_loss(&scores, &losses, args.buckets)?;
    let capture = capture_curve(
        &scores,
        &losses,
        args.top_loss,
        &default_sampling_fractions(),
    )?;
    let values: Vec<f64> = scores.iter().map(|s| s.value).collect();
    let rho = spearman(&values, &losses)?;
    buckets.to_csv().write(&out_dir.join("buckets.csv"))?;
    capture.to_csv().write(&out_dir.join("capture.csv"))?;
    let summary = format!(
        "cycle={}\ngd_steps={}\nsamples={}\nspearman={rho}\n",
        args.cycle,
        args.gd_steps,
        scores.len()
    );
    write_atomic(&out_dir.join("summary.txt"), summary.as_bytes())?;
    println!(
        "cycle {} spearman {rho} over {} samples",
        args.cycle,
        scores.len()
    );
    Ok(LossQuality {
        out_dir,
        spearman: rho,
        samples: scores.len(),
    })
}

#[derive(Debug, Deserialize)]
struct CycleRow {
    cycle: usize,
    labeled_fraction: f64,
    test_accuracy: f64,
    mean_cod_unlabeled: f64,
    mean_real_loss_unlabeled: f64,
}

fn mean_std(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / n;
    (m, var.sqrt())
}

/// Writes `report.csv`: per strategy and cycle, seed-wise mean and standard
/// deviation of test accuracy plus mean discrepancy and true loss.
pub fn cmd_report(args: &ReportArgs) -> Result<PathBuf> {
    let root = args.root.clone().unwrap_or_else(|| out_root().join("run"));
    let manifest_path = root.join("manifest.json");
    if !manifest_path.exists() {
        return Err(Error::MissingArtifact(manifest_path));
    }
    let text = std::fs::read_to_string(&manifest_path).map_err(|e| Error::io(&manifest_path, e))?;
    let manifest: RunManifest = serde_json::from_str(&text).map_err(|e| Error::Parse {
        path: manifest_path.clone(),
        line: e.line() as u64,
        message: e.to_string(),
    })?;

    type Key = (AcquisitionKind, usize);
    let mut rows: BTreeMap<Key, Vec<CycleRow>> = BTreeMap::new();
    let mut seeds = manifest.seeds.clone();
    seeds.sort_unstable();
    for &kind in &manifest.strategies {
        for &seed in &seeds {
            let path = root.join(job_dir(seed, kind)).join("cycles.csv");
            if !path.exists() {
                return Err(Error::MissingArtifact(path));
            }
            let mut reader = csv::Reader::from_path(&path).map_err(|e| Error::Parse {
                path: path.clone(),
                line: 0,
                message: e.to_string(),
            })?;
            for row in reader.deserialize::<CycleRow>() {
                let row = row.map_err(|e| Error::Parse {
                    path: path.clone(),
                    line: e.position().map_or(0, |p| p.line()),
                    message: e.to_string(),
                })?;
                rows.entry((kind, row.cycle)).or_default().push(row);
            }
        }
    }

    let mut table = CsvTable::new(&[
        "strategy",
        "cycle",
        "labeled_fraction",
        "seeds",
        "test_accuracy_mean",
        "test_accuracy_std",
        "mean_cod_unlabeled",
        "mean_real_loss_unlabeled",
    ]);
    for ((kind, cycle), group) in &rows {
        let acc: Vec<f64> = group.iter().map(|r| r.test_accuracy).collect();
        let (m, s) = mean_std(&acc);
        let cod = mean_std(
            &group
                .iter()
                .map(|r| r.mean_cod_unlabeled)
                .collect::<Vec<_>>(),
        )
        .0;
        let loss = mean_std(
            &group
                .iter()
                .map(|r| r.mean_real_loss_unlabeled)
                .collect::<Vec<_>>(),
        )
        .0;
        table.row(&[
            kind,
            cycle,
            &group[0].labeled_fraction,
            &group.len(),
            &m,
            &s,
            &cod,
            &loss,
        ]);
        println!(
            "{kind:>6} cycle {cycle}: accuracy {m:.4} ± {s:.4} over {} seeds",
            group.len()
        );
    }
    let out = root.join("report.csv");
    table.write(&out)?;
    Ok(out)
}
