//! Acquisition: choosing which unlabeled samples to send to the oracle.

use std::cmp::Ordering;
use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::activeloop::PoolState;
use crate::data::Features;
use crate::discrepancy::{cod_scores, DiscrepancyScore};
use crate::error::{Error, Result};
use crate::nnet::{NetworkSnapshot, OutputRepr};
use crate::seeding;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AcquisitionKind {
    /// Uniform sampling without replacement.
    Random,
    /// Largest discrepancy between the models at the end of the current and
    /// previous cycle.
    Cod,
    /// Largest discrepancy between the current model and its EMA.
    Emaod,
}

impl AcquisitionKind {
    pub const ALL: [AcquisitionKind; 3] = [
        AcquisitionKind::Random,
        AcquisitionKind::Cod,
        AcquisitionKind::Emaod,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            AcquisitionKind::Random => "random",
            AcquisitionKind::Cod => "cod",
            AcquisitionKind::Emaod => "emaod",
        }
    }
}

impl fmt::Display for AcquisitionKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for AcquisitionKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        AcquisitionKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| {
                Error::config(format!(
                    "unknown strategy `{s}`; valid strategies: random, cod, emaod"
                ))
            })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TieRule {
    /// Equal scores are ordered by ascending sample index.
    #[default]
    LowestIndex,
    /// Equal scores are ordered by a seeded random permutation.
    SeededShuffle,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AcquisitionStrategy {
    pub kind: AcquisitionKind,
    #[serde(default)]
    pub tie_rule: TieRule,
}

impl AcquisitionStrategy {
    pub fn new(kind: AcquisitionKind) -> Self {
        AcquisitionStrategy {
            kind,
            tie_rule: TieRule::LowestIndex,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SelectionResult {
    pub chosen: Vec<usize>,
    /// Scores of the chosen samples, aligned with `chosen`; `None` for random
    /// acquisition.
    pub scores_used: Option<Vec<DiscrepancyScore>>,
}

impl SelectionResult {
    pub fn score_of(&self, position: usize) -> Option<f64> {
        self.scores_used
            .as_ref()
            .and_then(|s| s.get(position))
            .map(|s| s.value)
    }
}

/// The `b` highest-scoring samples, best first.
///
/// `seed` only matters for [`TieRule::SeededShuffle`].
pub fn select_top_b(
    scores: &[DiscrepancyScore],
    b: usize,
    tie_rule: TieRule,
    seed: u64,
) -> Result<SelectionResult> {
    if b == 0 {
        return Err(Error::argument("budget must be at least 1"));
    }
    if scores.iter().any(|s| s.value.is_nan()) {
        return Err(Error::Numeric("NaN discrepancy score".into()));
    }
    let tiebreak: Vec<usize> = match tie_rule {
        TieRule::LowestIndex => scores.iter().map(|s| s.sample_index).collect(),
        TieRule::SeededShuffle => {
            let mut ranks: Vec<usize> = (0..scores.len()).collect();
            ranks.shuffle(&mut seeding::rng_for(seed));
            ranks
        }
    };
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&i, &j| {
        scores[j]
            .value
            .total_cmp(&scores[i].value)
            .then_with(|| tiebreak[i].cmp(&tiebreak[j]))
            .then(Ordering::Equal)
    });
    order.truncate(b);
    let picked: Vec<DiscrepancyScore> = order.iter().map(|&i| scores[i]).collect();
    Ok(SelectionResult {
        chosen: picked.iter().map(|s| s.sample_index).collect(),
        scores_used: Some(picked),
    })
}

/// Uniform sample of `min(b, |unlabeled|)` indices without replacement.
pub fn select_random(unlabeled: &[usize], b: usize, seed: u64) -> Result<SelectionResult> {
    if unlabeled.is_empty() {
        return Err(Error::argument("cannot sample from an empty pool"));
    }
    if b == 0 {
        return Err(Error::argument("budget must be at least 1"));
    }
    let mut rng = seeding::rng_for(seed);
    let amount = b.min(unlabeled.len());
    let chosen = rand::seq::index::sample(&mut rng, unlabeled.len(), amount)
        .into_iter()
        .map(|i| unlabeled[i])
        .collect();
    Ok(SelectionResult {
        chosen,
        scores_used: None,
    })
}

/// Runs one acquisition step over the unlabeled part of `pool`.
///
/// `comparison` is the previous-cycle model for [`AcquisitionKind::Cod`] and
/// the EMA model for [`AcquisitionKind::Emaod`]; random acquisition ignores
/// both snapshots.
#[allow(clippy::too_many_arguments)]
pub fn acquire(
    strategy: &AcquisitionStrategy,
    pool: &PoolState,
    current: &NetworkSnapshot,
    comparison: Option<&NetworkSnapshot>,
    features: Features<'_>,
    b: usize,
    seed: u64,
    repr: OutputRepr,
) -> Result<SelectionResult> {
    let unlabeled = pool.unlabeled_indices();
    if unlabeled.is_empty() {
        return Err(Error::argument("no unlabeled samples left to acquire"));
    }
    match strategy.kind {
        AcquisitionKind::Random => select_random(&unlabeled, b, seed),
        AcquisitionKind::Cod | AcquisitionKind::Emaod => {
            let baseline = comparison.ok_or_else(|| {
                Error::config(format!(
                    "strategy `{}` needs a comparison snapshot",
                    strategy.kind
                ))
            })?;
            let scores = cod_scores(current, baseline, features, &unlabeled, repr)?;
            select_top_b(&scores, b, strategy.tie_rule, seed)
        }
    }
}
