//! The multi-cycle active-learning experiment: pool bookkeeping, the label
//! oracle, per-cycle training, acquisition and metric capture.

use std::collections::BTreeSet;
use std::path::Path;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, DatasetSource, Standardizer};
use crate::discrepancy::{cod_scores, grad_norm_stats, grad_norm_trace, DiscrepancyScore};
use crate::error::{Error, Result};
use crate::io::{write_atomic, CsvTable};
use crate::nnet::{init_network, Head, Label, NetworkSnapshot, NetworkSpec, DEFAULT_INIT_SCALE};
use crate::sampling::{acquire, AcquisitionKind, AcquisitionStrategy, SelectionResult};
use crate::seeding::{self, Stream};
use crate::training::{train_cycle, TrainConfig, TrainHistory};

/// Partition of the training pool into labeled and unlabeled indices.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PoolState {
    labeled: BTreeSet<usize>,
    n: usize,
}

impl PoolState {
    pub fn from_labeled(n: usize, labeled: impl IntoIterator<Item = usize>) -> Result<Self> {
        let labeled: BTreeSet<usize> = labeled.into_iter().collect();
        if let Some(&bad) = labeled.iter().find(|&&i| i >= n) {
            return Err(Error::Range { index: bad, len: n });
        }
        Ok(PoolState { labeled, n })
    }

    /// Size of the whole training pool.
    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn labeled_count(&self) -> usize {
        self.labeled.len()
    }

    pub fn unlabeled_count(&self) -> usize {
        self.n - self.labeled.len()
    }

    pub fn labeled_fraction(&self) -> f64 {
        self.labeled.len() as f64 / self.n as f64
    }

    pub fn is_labeled(&self, i: usize) -> bool {
        self.labeled.contains(&i)
    }

    /// Sorted labeled indices.
    pub fn labeled_indices(&self) -> Vec<usize> {
        self.labeled.iter().copied().collect()
    }

    /// Sorted unlabeled indices.
    pub fn unlabeled_indices(&self) -> Vec<usize> {
        (0..self.n).filter(|i| !self.labeled.contains(i)).collect()
    }

    /// Moves `indices` from the unlabeled to the labeled pool.
    pub fn mark_labeled(&mut self, indices: &[usize]) -> Result<()> {
        for &i in indices {
            if i >= self.n {
                return Err(Error::Range {
                    index: i,
                    len: self.n,
                });
            }
            if self.labeled.contains(&i) {
                return Err(Error::argument(format!("index {i} is already labeled")));
            }
        }
        self.labeled.extend(indices.iter().copied());
        Ok(())
    }
}

/// `round(start_fraction·n)` labeled indices chosen uniformly at random.
pub fn init_pools(n: usize, start_fraction: f64, seed: u64) -> Result<PoolState> {
    if !(start_fraction > 0.0 && start_fraction < 1.0) {
        return Err(Error::config(format!(
            "start_fraction must lie in (0, 1), got {start_fraction}"
        )));
    }
    let count = (start_fraction * n as f64).round() as usize;
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut seeding::rng_for(seed));
    PoolState::from_labeled(n, order.into_iter().take(count))
}

/// Holds the hidden labels of the training pool and hands them out on request.
#[derive(Debug, Clone)]
pub struct Oracle {
    hidden: Vec<Label>,
    revealed: Vec<Option<Label>>,
    reveal_count: usize,
    repeat_requests: usize,
}

impl Oracle {
    pub fn new(hidden: Vec<Label>) -> Self {
        let revealed = vec![None; hidden.len()];
        Oracle {
            hidden,
            revealed,
            reveal_count: 0,
            repeat_requests: 0,
        }
    }

    /// Labels revealed so far, indexed by training-pool position.
    pub fn revealed(&self) -> &[Option<Label>] {
        &self.revealed
    }

    /// Number of distinct indices revealed.
    pub fn reveal_count(&self) -> usize {
        self.reveal_count
    }

    /// Requests for an index that had already been revealed.
    pub fn repeat_requests(&self) -> usize {
        self.repeat_requests
    }

    /// Ground truth for evaluation-only metrics. Never reaches training.
    fn ground_truth(&self, i: usize) -> Label {
        self.hidden[i]
    }
}

/// Reveals the label of `index`. Asking twice returns the same label and is
/// counted as a repeat, not a second reveal.
pub fn oracle_label(oracle: &mut Oracle, index: usize) -> Result<Label> {
    let len = oracle.hidden.len();
    let label = *oracle
        .hidden
        .get(index)
        .ok_or(Error::Range { index, len })?;
    if oracle.revealed[index].is_some() {
        oracle.repeat_requests += 1;
    } else {
        oracle.revealed[index] = Some(label);
        oracle.reveal_count += 1;
    }
    Ok(label)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NetworkConfig {
    /// Hidden layer widths; input and output widths come from the dataset.
    pub hidden: Vec<usize>,
    pub init_scale: f64,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        NetworkConfig {
            hidden: vec![32, 32],
            init_scale: DEFAULT_INIT_SCALE,
        }
    }
}

fn default_test_fraction() -> f64 {
    0.2
}
fn default_true() -> bool {
    true
}
fn default_start() -> f64 {
    0.10
}
fn default_budget() -> f64 {
    0.05
}
fn default_cycles() -> usize {
    7
}
fn default_strategy() -> AcquisitionStrategy {
    AcquisitionStrategy::new(AcquisitionKind::Cod)
}
fn default_seeds() -> Vec<u64> {
    vec![0]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub dataset: DatasetSource,
    /// Fraction of the generated data held out for testing.
    #[serde(default = "default_test_fraction")]
    pub test_fraction: f64,
    /// Standardize features with statistics of the training split.
    #[serde(default = "default_true")]
    pub standardize: bool,
    #[serde(default)]
    pub network: NetworkConfig,
    #[serde(default = "default_start")]
    pub start_fraction: f64,
    #[serde(default = "default_budget")]
    pub budget_fraction: f64,
    #[serde(default = "default_cycles")]
    pub num_cycles: usize,
    #[serde(default = "default_strategy")]
    pub strategy: AcquisitionStrategy,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    /// Also acquire a batch after the last training cycle, so the final pool
    /// holds `start + num_cycles·budget` of the data.
    #[serde(default = "default_true")]
    pub acquire_after_final_cycle: bool,
}

impl ExperimentConfig {
    /// Default schedule (10 % start, 5 % per cycle, 7 cycles) on `dataset`.
    pub fn new(dataset: DatasetSource) -> Self {
        ExperimentConfig {
            dataset,
            test_fraction: default_test_fraction(),
            standardize: true,
            network: NetworkConfig::default(),
            start_fraction: default_start(),
            budget_fraction: default_budget(),
            num_cycles: default_cycles(),
            strategy: default_strategy(),
            train: TrainConfig::default(),
            seeds: default_seeds(),
            acquire_after_final_cycle: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.start_fraction > 0.0 && self.start_fraction < 1.0) {
            return Err(Error::config("start_fraction must lie in (0, 1)"));
        }
        if !(self.budget_fraction > 0.0 && self.budget_fraction < 1.0) {
            return Err(Error::config("budget_fraction must lie in (0, 1)"));
        }
        if self.num_cycles == 0 {
            return Err(Error::config("num_cycles must be positive"));
        }
        if self.start_fraction + self.num_cycles as f64 * self.budget_fraction > 1.0 + 1e-12 {
            return Err(Error::config(
                "start_fraction + num_cycles * budget_fraction exceeds 1",
            ));
        }
        if !(self.test_fraction > 0.0 && self.test_fraction < 1.0) {
            return Err(Error::config("test_fraction must lie in (0, 1)"));
        }
        if self.network.hidden.contains(&0) {
            return Err(Error::config("network.hidden widths must be positive"));
        }
        if !(self.network.init_scale.is_finite() && self.network.init_scale > 0.0) {
            return Err(Error::config("network.init_scale must be positive"));
        }
        if self.seeds.is_empty() {
            return Err(Error::config("seeds must list at least one seed"));
        }
        self.train.validate()
    }

    pub fn network_spec(&self, data: &Dataset) -> NetworkSpec {
        let mut widths = vec![data.dim()];
        widths.extend(&self.network.hidden);
        let spec = if data.is_classification() {
            widths.push(data.num_classes());
            NetworkSpec::classifier(widths)
        } else {
            widths.push(1);
            NetworkSpec::regression(widths)
        };
        spec.with_init_scale(self.network.init_scale)
    }
}

/// Per-component seeds derived from one experiment seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ExperimentSeeds(pub u64);

impl ExperimentSeeds {
    pub fn data(&self) -> u64 {
        seeding::derive(self.0, Stream::Data, 0)
    }
    pub fn split(&self) -> u64 {
        seeding::derive(self.0, Stream::Split, 0)
    }
    pub fn pool(&self) -> u64 {
        seeding::derive(self.0, Stream::Pool, 0)
    }
    /// Network initialization; `cycle` is 0 for the initial model and the
    /// cycle number for re-initializations.
    pub fn init(&self, cycle: usize) -> u64 {
        seeding::derive(self.0, Stream::Init, cycle as u64)
    }
    pub fn train(&self, cycle: usize) -> u64 {
        seeding::derive(self.0, Stream::Train, cycle as u64)
    }
    pub fn acquire(&self, cycle: usize) -> u64 {
        seeding::derive(self.0, Stream::Acquire, cycle as u64)
    }
}

/// Train/test data for one experiment seed.
#[derive(Debug, Clone)]
pub struct PreparedData {
    pub train: Dataset,
    pub test: Dataset,
    pub standardizer: Option<Standardizer>,
}

pub fn prepare_data(config: &ExperimentConfig, seed: u64) -> Result<PreparedData> {
    let seeds = ExperimentSeeds(seed);
    let full = config.dataset.load(seeds.data())?;
    let (train, test) = full.split(config.test_fraction, seeds.split())?;
    if !config.standardize {
        return Ok(PreparedData {
            train,
            test,
            standardizer: None,
        });
    }
    let st = Standardizer::fit(train.features());
    Ok(PreparedData {
        train: st.apply(&train)?,
        test: st.apply(&test)?,
        standardizer: Some(st),
    })
}

/// Metrics captured at the end of one cycle.
#[derive(Debug, Clone, PartialEq)]
pub struct CycleRecord {
    pub cycle: usize,
    pub labeled_count: usize,
    /// Labeled share of the training pool during this cycle's training.
    pub labeled_fraction: f64,
    /// Test accuracy for classifiers; test loss for regression.
    pub test_accuracy: f64,
    pub test_loss: f64,
    /// Mean discrepancy between this and the previous cycle's model over the
    /// remaining unlabeled pool.
    pub mean_cod_unlabeled: f64,
    /// Mean true loss over the remaining unlabeled pool (evaluation only).
    pub mean_real_loss_unlabeled: f64,
    pub grad_norm_mean: f64,
    pub selection: SelectionResult,
}

/// Per-sample diagnostics over the unlabeled pool at the end of a cycle.
#[derive(Debug, Clone, PartialEq)]
pub struct CycleDiagnostics {
    pub cod: Vec<DiscrepancyScore>,
    /// True loss of each scored sample, aligned with `cod`.
    pub oracle_losses: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct ExperimentRun {
    pub seed: u64,
    pub records: Vec<CycleRecord>,
    pub histories: Vec<TrainHistory>,
    /// `snapshots[0]` is the initial model, `snapshots[c]` the model after cycle `c`.
    pub snapshots: Vec<NetworkSnapshot>,
    /// EMA model after each cycle (`ema_snapshots[c - 1]` for cycle `c`).
    pub ema_snapshots: Vec<NetworkSnapshot>,
    /// Labeled indices used for training in each cycle.
    pub labeled_per_cycle: Vec<Vec<usize>>,
    pub diagnostics: Vec<CycleDiagnostics>,
    pub final_pool: PoolState,
    pub reveal_count: usize,
    pub warnings: Vec<String>,
    pub data: PreparedData,
}

/// Accuracy (or, for regression, loss) and mean loss of `model` on `data`.
pub fn evaluate(model: &NetworkSnapshot, data: &Dataset) -> Result<(f64, f64)> {
    let per_sample = (0..data.len())
        .into_par_iter()
        .map(|i| {
            let x = data.row(i);
            let y = data.label(i);
            let loss = model.loss(x, y)?;
            let hit = match y {
                Label::Class(c) => argmax(&model.logits(x)?) == c,
                Label::Real(_) => false,
            };
            Ok((loss, hit))
        })
        .collect::<Result<Vec<_>>>()?;
    let n = data.len() as f64;
    let mean_loss = per_sample.iter().map(|p| p.0).sum::<f64>() / n;
    let metric = if model.spec().head == Head::SoftmaxClassification {
        per_sample.iter().filter(|p| p.1).count() as f64 / n
    } else {
        mean_loss
    };
    Ok((metric, mean_loss))
}

fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if *x > v[best] {
            best = i;
        }
    }
    best
}

/// True per-sample losses on the unlabeled pool for analysis plots. Reads
/// the oracle's hidden labels without revealing them.
pub fn oracle_losses(
    oracle: &Oracle,
    model: &NetworkSnapshot,
    data: &Dataset,
    indices: &[usize],
) -> Result<Vec<f64>> {
    indices
        .par_iter()
        .map(|&i| model.loss(data.row(i), oracle.ground_truth(i)))
        .collect()
}

fn mean(values: impl Iterator<Item = f64>) -> f64 {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}

/// Runs every cycle of `config` for one seed.
pub fn run_experiment(config: &ExperimentConfig, seed: u64) -> Result<ExperimentRun> {
    config.validate()?;
    let seeds = ExperimentSeeds(seed);
    let data = prepare_data(config, seed)?;
    let train = &data.train;
    let n = train.len();
    let mut warnings = Vec::new();

    let mut pools = init_pools(n, config.start_fraction, seeds.pool())?;
    let budget = ((config.budget_fraction * n as f64).round() as usize).max(1);
    let mut oracle = Oracle::new(train.labels().to_vec());
    for i in pools.labeled_indices() {
        oracle_label(&mut oracle, i)?;
    }

    let spec = config.network_spec(train);
    let w0 = init_network(&spec, seeds.init(0))?;
    let repr = config.train.output_repr;
    let all_indices: Vec<usize> = (0..n).collect();

    let mut model = w0.clone();
    let mut ema = w0.clone();
    let mut snapshots = vec![w0.clone()];
    let mut ema_snapshots = Vec::new();
    let mut records = Vec::new();
    let mut histories = Vec::new();
    let mut labeled_per_cycle = Vec::new();
    let mut diagnostics = Vec::new();

    for cycle in 1..=config.num_cycles {
        if config.train.reinit_per_cycle && cycle > 1 {
            model = init_network(&spec, seeds.init(cycle))?;
            ema = model.clone();
        }
        let previous = snapshots.last().expect("initial snapshot").clone();
        let train_cfg = TrainConfig {
            seed: seeds.train(cycle),
            ..config.train.clone()
        };
        let labeled_now = pools.labeled_indices();
        let (next, next_ema, history) = train_cycle(
            &train_cfg,
            &pools,
            train.features(),
            oracle.revealed(),
            &model,
            &ema,
        )?;
        model = next;
        ema = next_ema;

        let unlabeled = pools.unlabeled_indices();
        let cod = cod_scores(&model, &previous, train.features(), &unlabeled, repr)?;
        let losses = oracle_losses(&oracle, &model, train, &unlabeled)?;
        let (test_accuracy, test_loss) = evaluate(&model, &data.test)?;
        let grad_norm_mean = grad_norm_stats(&model, train.features(), &all_indices)?.mean;

        let acquire_now = cycle < config.num_cycles || config.acquire_after_final_cycle;
        let selection = if acquire_now && !unlabeled.is_empty() {
            if budget > unlabeled.len() {
                warnings.push(format!(
                    "cycle {cycle}: budget {budget} clipped to {} unlabeled samples",
                    unlabeled.len()
                ));
            }
            let comparison = match config.strategy.kind {
                AcquisitionKind::Random => None,
                AcquisitionKind::Cod => Some(&previous),
                AcquisitionKind::Emaod => Some(&ema),
            };
            let sel = acquire(
                &config.strategy,
                &pools,
                &model,
                comparison,
                train.features(),
                budget,
                seeds.acquire(cycle),
                repr,
            )?;
            for &i in &sel.chosen {
                oracle_label(&mut oracle, i)?;
            }
            pools.mark_labeled(&sel.chosen)?;
            sel
        } else {
            SelectionResult {
                chosen: Vec::new(),
                scores_used: None,
            }
        };

        records.push(CycleRecord {
            cycle,
            labeled_count: labeled_now.len(),
            labeled_fraction: labeled_now.len() as f64 / n as f64,
            test_accuracy,
            test_loss,
            mean_cod_unlabeled: mean(cod.iter().map(|s| s.value)),
            mean_real_loss_unlabeled: mean(losses.iter().copied()),
            grad_norm_mean,
            selection,
        });
        diagnostics.push(CycleDiagnostics {
            cod,
            oracle_losses: losses,
        });
        histories.push(history);
        labeled_per_cycle.push(labeled_now);
        snapshots.push(model.clone());
        ema_snapshots.push(ema.clone());
    }

    Ok(ExperimentRun {
        seed,
        records,
        histories,
        snapshots,
        ema_snapshots,
        labeled_per_cycle,
        diagnostics,
        final_pool: pools,
        reveal_count: oracle.reveal_count(),
        warnings,
        data,
    })
}

pub fn cycles_csv(records: &[CycleRecord]) -> CsvTable {
    let mut t = CsvTable::new(&[
        "cycle",
        "labeled_count",
        "labeled_fraction",
        "test_accuracy",
        "test_loss",
        "mean_cod_unlabeled",
        "mean_real_loss_unlabeled",
        "grad_norm_mean",
        "selected_count",
    ]);
    for r in records {
        t.row(&[
            &r.cycle,
            &r.labeled_count,
            &r.labeled_fraction,
            &r.test_accuracy,
            &r.test_loss,
            &r.mean_cod_unlabeled,
            &r.mean_real_loss_unlabeled,
            &r.grad_norm_mean,
            &r.selection.chosen.len(),
        ]);
    }
    t
}

pub fn selections_csv(records: &[CycleRecord]) -> CsvTable {
    let mut t = CsvTable::new(&["cycle", "index", "score"]);
    for r in records {
        for (pos, idx) in r.selection.chosen.iter().enumerate() {
            let score = r
                .selection
                .score_of(pos)
                .map(|s| s.to_string())
                .unwrap_or_default();
            t.row(&[&r.cycle, idx, &score]);
        }
    }
    t
}

pub fn snapshot_file(cycle: usize) -> String {
    format!("snapshot_c{cycle}.txt")
}

pub fn ema_snapshot_file(cycle: usize) -> String {
    format!("ema_c{cycle}.txt")
}

pub fn labeled_file(cycle: usize) -> String {
    format!("labeled_c{cycle}.txt")
}

impl ExperimentRun {
    /// Writes every artifact of the run into `dir`:
    /// `cycles.csv`, `selections.csv`, `train_history_c<k>.csv`,
    /// `grad_norm.csv`, `config.json`, and per-cycle snapshot and pool files.
    pub fn write_to(&self, dir: &Path, config: &ExperimentConfig) -> Result<()> {
        cycles_csv(&self.records).write(&dir.join("cycles.csv"))?;
        selections_csv(&self.records).write(&dir.join("selections.csv"))?;
        for (k, h) in self.histories.iter().enumerate() {
            h.to_csv()
                .write(&dir.join(format!("train_history_c{}.csv", k + 1)))?;
        }
        let train_idx: Vec<usize> = (0..self.data.train.len()).collect();
        grad_norm_trace(&self.snapshots[1..], self.data.train.features(), &train_idx)?
            .to_csv()
            .write(&dir.join("grad_norm.csv"))?;
        let echo = ExperimentConfig {
            seeds: vec![self.seed],
            ..config.clone()
        };
        let json = serde_json::to_string_pretty(&echo)
            .map_err(|e| Error::config(format!("cannot serialize config: {e}")))?;
        write_atomic(&dir.join("config.json"), json.as_bytes())?;
        for (c, s) in self.snapshots.iter().enumerate() {
            s.save(&dir.join(snapshot_file(c)))?;
        }
        for (k, s) in self.ema_snapshots.iter().enumerate() {
            s.save(&dir.join(ema_snapshot_file(k + 1)))?;
        }
        for (k, labeled) in self.labeled_per_cycle.iter().enumerate() {
            let mut text = crate::io::join_list(labeled);
            text.push('\n');
            write_atomic(&dir.join(labeled_file(k + 1)), text.as_bytes())?;
        }
        if !self.warnings.is_empty() {
            let mut text = self.warnings.join("\n");
            text.push('\n');
            write_atomic(&dir.join("warnings.txt"), text.as_bytes())?;
        }
        Ok(())
    }
}

/// Reads a `labeled_c<k>.txt` file back into sorted indices.
pub fn read_labeled(path: &Path) -> Result<Vec<usize>> {
    if !path.exists() {
        return Err(Error::MissingArtifact(path.to_path_buf()));
    }
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.split_whitespace()
        .map(|t| {
            t.parse::<usize>().map_err(|_| Error::Parse {
                path: path.to_path_buf(),
                line: 1,
                message: format!("bad index `{t}`"),
            })
        })
        .collect()
}
