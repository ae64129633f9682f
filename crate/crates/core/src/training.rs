//! Semi-supervised optimization for one active-learning cycle.
//!
//! The objective is `L_S + λ·L_U`: mean task loss over a labeled batch plus
//! the mean squared output distance between the current model and its
//! exponential moving average on an unlabeled batch. The EMA outputs are
//! treated as constants, so `L_U` only moves the current model.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::activeloop::PoolState;
use crate::data::Features;
use crate::error::{Error, Result};
use crate::io::CsvTable;
use crate::nnet::{ema_update, softmax, GradientVector, Head, Label, NetworkSnapshot, OutputRepr};
use crate::seeding;

pub const DEFAULT_LAMBDA: f64 = 0.05;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    /// SGD learning rate, constant over the cycle.
    pub eta: f64,
    /// Weight of the unsupervised consistency term.
    pub lambda: f64,
    /// EMA decay rate.
    pub alpha: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub unsup_batch_size: usize,
    pub seed: u64,
    /// Output used by the consistency loss (and by discrepancy scores).
    pub output_repr: OutputRepr,
    /// Start every cycle from a fresh initialization instead of the previous
    /// cycle's weights.
    pub reinit_per_cycle: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            eta: 0.1,
            lambda: DEFAULT_LAMBDA,
            alpha: crate::nnet::DEFAULT_EMA_DECAY,
            epochs: 50,
            batch_size: 32,
            unsup_batch_size: 32,
            seed: 0,
            output_repr: OutputRepr::Probabilities,
            reinit_per_cycle: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.eta.is_finite() && self.eta > 0.0) {
            return Err(Error::config("train.eta must be positive"));
        }
        if !(self.lambda.is_finite() && self.lambda >= 0.0) {
            return Err(Error::config("train.lambda must be non-negative"));
        }
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(Error::config("train.alpha must lie in [0, 1]"));
        }
        if self.epochs == 0 {
            return Err(Error::config("train.epochs must be positive"));
        }
        if self.batch_size == 0 || self.unsup_batch_size == 0 {
            return Err(Error::config("train batch sizes must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochLosses {
    pub supervised: f64,
    pub unsupervised: f64,
    pub overall: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrainHistory {
    pub epochs: Vec<EpochLosses>,
}

impl TrainHistory {
    pub fn to_csv(&self) -> CsvTable {
        let mut t = CsvTable::new(&["epoch", "sup_loss", "unsup_loss", "overall_loss"]);
        for (i, e) in self.epochs.iter().enumerate() {
            t.row(&[&(i + 1), &e.supervised, &e.unsupervised, &e.overall]);
        }
        t
    }
}

/// Mean of `‖f(x; current) − f(x; ema)‖²` over the batch.
pub fn unsupervised_loss(
    current: &NetworkSnapshot,
    ema: &NetworkSnapshot,
    batch: &[&[f64]],
    repr: OutputRepr,
) -> Result<f64> {
    current.check_same_spec(ema)?;
    if batch.is_empty() {
        return Err(Error::argument("unsupervised loss needs a non-empty batch"));
    }
    let mut total = 0.0;
    for x in batch {
        let a = current.output(x, repr)?;
        let b = ema.output(x, repr)?;
        total += a
            .iter()
            .zip(&b)
            .map(|(p, q)| (p - q) * (p - q))
            .sum::<f64>();
    }
    Ok(total / batch.len() as f64)
}

/// [`unsupervised_loss`] and its gradient with respect to the current model only.
pub fn unsupervised_loss_grad(
    current: &NetworkSnapshot,
    ema: &NetworkSnapshot,
    batch: &[&[f64]],
    repr: OutputRepr,
) -> Result<(f64, GradientVector)> {
    let mut grad = GradientVector::zeros(current.params().len());
    let loss = accumulate_unsupervised(current, ema, batch, repr, 1.0, &mut grad.0)?;
    Ok((loss, grad))
}

fn accumulate_unsupervised(
    current: &NetworkSnapshot,
    ema: &NetworkSnapshot,
    batch: &[&[f64]],
    repr: OutputRepr,
    weight: f64,
    grad: &mut [f64],
) -> Result<f64> {
    current.check_same_spec(ema)?;
    if batch.is_empty() {
        return Err(Error::argument("unsupervised loss needs a non-empty batch"));
    }
    let scale = weight / batch.len() as f64;
    let probabilities =
        repr == OutputRepr::Probabilities && current.spec().head == Head::SoftmaxClassification;
    let mut total = 0.0;
    for x in batch {
        let target = ema.output(x, repr)?;
        if x.len() != current.spec().input_dim() {
            return Err(Error::Shape {
                expected: current.spec().input_dim(),
                got: x.len(),
            });
        }
        let trace = current.trace(x);
        let z = trace.raw_output();
        let d_raw: Vec<f64> = if probabilities {
            let p = softmax(z);
            let diff: Vec<f64> = p.iter().zip(&target).map(|(a, b)| a - b).collect();
            total += diff.iter().map(|d| d * d).sum::<f64>();
            // softmax Jacobian-transpose applied to 2·diff
            let pd: f64 = p.iter().zip(&diff).map(|(a, b)| a * b).sum();
            p.iter()
                .zip(&diff)
                .map(|(pk, dk)| 2.0 * pk * (dk - pd))
                .collect()
        } else {
            let diff: Vec<f64> = z.iter().zip(&target).map(|(a, b)| a - b).collect();
            total += diff.iter().map(|d| d * d).sum::<f64>();
            diff.iter().map(|d| 2.0 * d).collect()
        };
        current.backprop_into(&trace, &d_raw, scale, grad);
    }
    Ok(total / batch.len() as f64)
}

/// Mean task loss over a labeled batch.
pub fn supervised_loss(current: &NetworkSnapshot, batch: &[(&[f64], Label)]) -> Result<f64> {
    if batch.is_empty() {
        return Err(Error::argument("supervised loss needs a non-empty batch"));
    }
    let mut total = 0.0;
    for (x, y) in batch {
        total += current.loss(x, *y)?;
    }
    Ok(total / batch.len() as f64)
}

pub fn supervised_loss_grad(
    current: &NetworkSnapshot,
    batch: &[(&[f64], Label)],
) -> Result<(f64, GradientVector)> {
    let mut grad = GradientVector::zeros(current.params().len());
    let loss = accumulate_supervised(current, batch, &mut grad.0)?;
    Ok((loss, grad))
}

fn accumulate_supervised(
    current: &NetworkSnapshot,
    batch: &[(&[f64], Label)],
    grad: &mut [f64],
) -> Result<f64> {
    if batch.is_empty() {
        return Err(Error::argument("supervised loss needs a non-empty batch"));
    }
    let scale = 1.0 / batch.len() as f64;
    let mut total = 0.0;
    for (x, y) in batch {
        if x.len() != current.spec().input_dim() {
            return Err(Error::Shape {
                expected: current.spec().input_dim(),
                got: x.len(),
            });
        }
        let trace = current.trace(x);
        let (loss, d_raw) = current.loss_and_raw_grad(trace.raw_output(), *y)?;
        total += loss;
        current.backprop_into(&trace, &d_raw, scale, grad);
    }
    Ok(total / batch.len() as f64)
}

/// Value of the overall objective on one pair of batches, with its gradient.
#[derive(Debug, Clone, PartialEq)]
pub struct ObjectiveValue {
    pub supervised: f64,
    pub unsupervised: f64,
    pub overall: f64,
    pub grad: GradientVector,
}

/// `L_S + λ·L_U` and its gradient. An empty unlabeled batch contributes zero.
pub fn objective_grad(
    current: &NetworkSnapshot,
    ema: &NetworkSnapshot,
    labeled: &[(&[f64], Label)],
    unlabeled: &[&[f64]],
    lambda: f64,
    repr: OutputRepr,
) -> Result<ObjectiveValue> {
    let mut grad = GradientVector::zeros(current.params().len());
    let supervised = accumulate_supervised(current, labeled, &mut grad.0)?;
    let unsupervised = if unlabeled.is_empty() {
        0.0
    } else if lambda > 0.0 {
        accumulate_unsupervised(current, ema, unlabeled, repr, lambda, &mut grad.0)?
    } else {
        unsupervised_loss(current, ema, unlabeled, repr)?
    };
    Ok(ObjectiveValue {
        supervised,
        unsupervised,
        overall: supervised + lambda * unsupervised,
        grad,
    })
}

/// Revealed labels indexed by training-pool position; `None` where the oracle
/// has not been asked.
pub fn revealed_labels(all: &[Label], pools: &PoolState) -> Vec<Option<Label>> {
    let mut out = vec![None; all.len()];
    for i in pools.labeled_indices() {
        out[i] = Some(all[i]);
    }
    out
}

/// Trains `model` for `config.epochs` epochs over the labeled pool.
///
/// Each optimizer step draws the next labeled batch and the next unlabeled
/// batch (both orders reshuffled every epoch from `config.seed`; the
/// unlabeled order wraps around when exhausted), applies one SGD step on
/// `L_S + λ·L_U`, then one EMA update with decay `alpha`.
pub fn train_cycle(
    config: &TrainConfig,
    pools: &PoolState,
    features: Features<'_>,
    labels: &[Option<Label>],
    model: &NetworkSnapshot,
    ema: &NetworkSnapshot,
) -> Result<(NetworkSnapshot, NetworkSnapshot, TrainHistory)> {
    config.validate()?;
    model.check_same_spec(ema)?;
    let mut labeled = pools.labeled_indices();
    let mut unlabeled = pools.unlabeled_indices();
    if labeled.is_empty() {
        return Err(Error::config("labeled pool is empty"));
    }
    if pools.len() != features.len() || labels.len() != features.len() {
        return Err(Error::Shape {
            expected: features.len(),
            got: pools.len().max(labels.len()),
        });
    }
    let mut targets = vec![None; features.len()];
    for &i in &labeled {
        targets[i] =
            Some(labels[i].ok_or_else(|| {
                Error::config(format!("labeled index {i} has no revealed label"))
            })?);
    }

    let mut rng = seeding::rng_for(config.seed);
    let mut model = model.clone();
    let mut ema = ema.clone();
    let mut history = TrainHistory::default();
    for _ in 0..config.epochs {
        labeled.shuffle(&mut rng);
        unlabeled.shuffle(&mut rng);
        let mut cursor = 0;
        let (mut sup, mut unsup, mut overall, mut steps) = (0.0, 0.0, 0.0, 0usize);
        for chunk in labeled.chunks(config.batch_size) {
            let lbatch: Vec<(&[f64], Label)> = chunk
                .iter()
                .map(|&i| (features.row(i), targets[i].expect("checked above")))
                .collect();
            let mut ubatch: Vec<&[f64]> = Vec::new();
            if !unlabeled.is_empty() {
                for _ in 0..config.unsup_batch_size.min(unlabeled.len()) {
                    ubatch.push(features.row(unlabeled[cursor]));
                    cursor = (cursor + 1) % unlabeled.len();
                }
            }
            let value = objective_grad(
                &model,
                &ema,
                &lbatch,
                &ubatch,
                config.lambda,
                config.output_repr,
            )?;
            model = model.sgd_step(&value.grad, config.eta)?;
            ema = ema_update(&ema, &model, config.alpha)?;
            sup += value.supervised;
            unsup += value.unsupervised;
            overall += value.overall;
            steps += 1;
        }
        let n = steps as f64;
        history.epochs.push(EpochLosses {
            supervised: sup / n,
            unsupervised: unsup / n,
            overall: overall / n,
        });
    }
    Ok((model, ema, history))
}
