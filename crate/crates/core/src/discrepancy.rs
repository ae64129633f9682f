//! Temporal output discrepancy scores and numerical checks of the bounds that
//! relate them to the per-sample loss.
//!
//! The one-step bound says that a single gradient step on the Euclidean loss
//! `L = ½(y − f)²` moves the output by at most `η·√(2L)·‖∇_w f‖²`. Chaining
//! `T` steps gives `√2·η·Σ √L_τ·‖∇_w f(w_τ)‖²`, and bounding the gradient norm
//! by a constant `C` then gives `√(2T)·η·C·√(Σ L_τ)`. All three hold up to
//! second-order Taylor terms, so checks accept a relative slack proportional
//! to `η` (see [`BoundTolerance`]).

use rand::Rng;
use rayon::prelude::*;

use crate::data::Features;
use crate::error::{Error, Result};
use crate::io::CsvTable;
use crate::nnet::{init_network, Head, Label, NetworkSnapshot, NetworkSpec, OutputRepr};
use crate::seeding::{self, Stream};

/// Discrepancy of one sample between two snapshots.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DiscrepancyScore {
    pub sample_index: usize,
    pub value: f64,
}

/// `‖f(x; a) − f(x; b)‖₂` on the head output (probabilities for classifiers).
pub fn output_discrepancy(a: &NetworkSnapshot, b: &NetworkSnapshot, x: &[f64]) -> Result<f64> {
    output_discrepancy_with(a, b, x, OutputRepr::Probabilities)
}

pub fn output_discrepancy_with(
    a: &NetworkSnapshot,
    b: &NetworkSnapshot,
    x: &[f64],
    repr: OutputRepr,
) -> Result<f64> {
    a.check_same_spec(b)?;
    let fa = a.output(x, repr)?;
    let fb = b.output(x, repr)?;
    Ok(l2_distance(&fa, &fb))
}

pub(crate) fn l2_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(p, q)| (p - q) * (p - q))
        .sum::<f64>()
        .sqrt()
}

/// Cyclic output discrepancy of `indices`, in the order given.
pub fn cod_scores(
    current: &NetworkSnapshot,
    previous: &NetworkSnapshot,
    features: Features<'_>,
    indices: &[usize],
    repr: OutputRepr,
) -> Result<Vec<DiscrepancyScore>> {
    current.check_same_spec(previous)?;
    indices
        .par_iter()
        .map(|&i| {
            let x = features.get(i)?;
            Ok(DiscrepancyScore {
                sample_index: i,
                value: output_discrepancy_with(current, previous, x, repr)?,
            })
        })
        .collect()
}

/// Acceptance rule for asymptotic bounds: `lhs ≤ rhs·(1 + rel_per_eta·η) + abs`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundTolerance {
    pub rel_per_eta: f64,
    pub abs: f64,
}

impl BoundTolerance {
    /// Tolerance for the first-order bounds.
    pub const TAYLOR: BoundTolerance = BoundTolerance {
        rel_per_eta: 10.0,
        abs: 1e-12,
    };
    /// Tolerance for inequalities that hold exactly.
    pub const EXACT: BoundTolerance = BoundTolerance {
        rel_per_eta: 0.0,
        abs: 1e-12,
    };

    pub fn accepts(&self, lhs: f64, rhs: f64, eta: f64) -> bool {
        lhs <= rhs * (1.0 + self.rel_per_eta * eta) + self.abs
    }
}

/// One numerical instance of an inequality `lhs ≤ rhs`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundReport {
    pub seed: u64,
    pub eta: f64,
    /// Number of gradient steps between the compared snapshots (0 for the
    /// Lipschitz check, which takes no steps).
    pub steps: usize,
    pub lhs: f64,
    pub rhs: f64,
    pub slack: f64,
    pub passed: bool,
}

impl BoundReport {
    fn new(seed: u64, eta: f64, steps: usize, lhs: f64, rhs: f64, tol: BoundTolerance) -> Self {
        BoundReport {
            seed,
            eta,
            steps,
            lhs,
            rhs,
            slack: rhs - lhs,
            passed: tol.accepts(lhs, rhs, eta),
        }
    }
}

pub fn bound_reports_csv(reports: &[BoundReport]) -> CsvTable {
    let mut t = CsvTable::new(&["seed", "eta", "T", "lhs", "rhs", "slack", "passed"]);
    for r in reports {
        t.row(&[
            &r.seed, &r.eta, &r.steps, &r.lhs, &r.rhs, &r.slack, &r.passed,
        ]);
    }
    t
}

pub fn pass_rate(reports: &[BoundReport]) -> f64 {
    if reports.is_empty() {
        return 0.0;
    }
    reports.iter().filter(|r| r.passed).count() as f64 / reports.len() as f64
}

fn require_scalar(snapshot: &NetworkSnapshot) -> Result<()> {
    if snapshot.spec().head != Head::ScalarRegression {
        return Err(Error::config(
            "bound checks are defined for scalar regression heads only",
        ));
    }
    Ok(())
}

/// One step of single-sample gradient descent, returning `(L_t, ‖∇f‖², w_{t+1})`.
fn gd_step(
    s: &NetworkSnapshot,
    x: &[f64],
    y: f64,
    eta: f64,
) -> Result<(f64, f64, NetworkSnapshot)> {
    let (loss, grad) = s.grad_loss(x, Label::Real(y))?;
    let gnorm = s.grad_output_norm_sq(x)?;
    Ok((loss, gnorm, s.sgd_step(&grad, eta)?))
}

/// Checks the one-step bound for an explicit snapshot.
pub fn check_one_step_bound(
    snapshot: &NetworkSnapshot,
    x: &[f64],
    y: f64,
    eta: f64,
    seed: u64,
) -> Result<BoundReport> {
    require_scalar(snapshot)?;
    let (loss, gnorm, next) = gd_step(snapshot, x, y, eta)?;
    let lhs = output_discrepancy_with(&next, snapshot, x, OutputRepr::Logits)?;
    let rhs = eta * (2.0 * loss).sqrt() * gnorm;
    Ok(BoundReport::new(
        seed,
        eta,
        1,
        lhs,
        rhs,
        BoundTolerance::TAYLOR,
    ))
}

/// One-step bound on the network `init_network(spec, seed)`.
pub fn verify_one_step_bound(
    spec: &NetworkSpec,
    seed: u64,
    x: &[f64],
    y: f64,
    eta: f64,
) -> Result<BoundReport> {
    if spec.head != Head::ScalarRegression {
        return Err(Error::config(
            "bound checks are defined for scalar regression heads only",
        ));
    }
    check_one_step_bound(&init_network(spec, seed)?, x, y, eta, seed)
}

/// Result of a `T`-step check: the chained-sum bound and the constant-`C` bound.
#[derive(Debug, Clone, PartialEq)]
pub struct MultiStepReport {
    /// `lhs` against `√(2T)·η·C·√(Σ L_τ)`.
    pub constant_bound: BoundReport,
    /// `lhs` against `√2·η·Σ √L_τ·‖∇f(w_τ)‖²`.
    pub chained_bound: BoundReport,
    /// `L_τ` for τ = t … t+T−1.
    pub step_losses: Vec<f64>,
    /// `‖∇_w f(w_τ)‖²` for the same steps.
    pub grad_norms: Vec<f64>,
    /// Instantiated constant: the largest of `grad_norms`.
    pub c_const: f64,
    /// Whether the chained bound is no larger than the constant bound.
    pub chain_holds: bool,
}

/// Relative float tolerance for comparing two algebraically ordered bounds.
pub const CHAIN_RTOL: f64 = 1e-12;

pub fn check_multi_step_bound(
    snapshot: &NetworkSnapshot,
    x: &[f64],
    y: f64,
    eta: f64,
    steps: usize,
    seed: u64,
) -> Result<MultiStepReport> {
    require_scalar(snapshot)?;
    if steps == 0 {
        return Err(Error::argument("T must be at least 1"));
    }
    let mut current = snapshot.clone();
    let mut step_losses = Vec::with_capacity(steps);
    let mut grad_norms = Vec::with_capacity(steps);
    for _ in 0..steps {
        let (loss, gnorm, next) = gd_step(&current, x, y, eta)?;
        step_losses.push(loss);
        grad_norms.push(gnorm);
        current = next;
    }
    let lhs = output_discrepancy_with(&current, snapshot, x, OutputRepr::Logits)?;

    let chained = std::f64::consts::SQRT_2
        * eta
        * step_losses
            .iter()
            .zip(&grad_norms)
            .map(|(l, g)| l.sqrt() * g)
            .sum::<f64>();
    let c_const = grad_norms.iter().copied().fold(0.0, f64::max);
    let constant =
        (2.0 * steps as f64).sqrt() * eta * c_const * step_losses.iter().sum::<f64>().sqrt();

    Ok(MultiStepReport {
        constant_bound: BoundReport::new(seed, eta, steps, lhs, constant, BoundTolerance::TAYLOR),
        chained_bound: BoundReport::new(seed, eta, steps, lhs, chained, BoundTolerance::TAYLOR),
        chain_holds: chained <= constant * (1.0 + CHAIN_RTOL),
        step_losses,
        grad_norms,
        c_const,
    })
}

/// `T`-step bound on the network `init_network(spec, seed)`.
pub fn verify_multi_step_bound(
    spec: &NetworkSpec,
    seed: u64,
    x: &[f64],
    y: f64,
    eta: f64,
    steps: usize,
) -> Result<MultiStepReport> {
    if spec.head != Head::ScalarRegression {
        return Err(Error::config(
            "bound checks are defined for scalar regression heads only",
        ));
    }
    check_multi_step_bound(&init_network(spec, seed)?, x, y, eta, steps, seed)
}

/// A single dense layer followed by ReLU: `relu(W x + b)`, `W` of shape `(out, in)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ReluLayer {
    pub fan_in: usize,
    pub fan_out: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl ReluLayer {
    /// Weights and (optionally) biases uniform in `[-1, 1]`.
    pub fn random(fan_in: usize, fan_out: usize, seed: u64, bias: bool) -> Self {
        let mut rng = seeding::rng(seed, Stream::Bounds, 1);
        let weights = (0..fan_in * fan_out)
            .map(|_| rng.random_range(-1.0..=1.0))
            .collect();
        let bias = if bias {
            (0..fan_out).map(|_| rng.random_range(-1.0..=1.0)).collect()
        } else {
            vec![0.0; fan_out]
        };
        ReluLayer {
            fan_in,
            fan_out,
            weights,
            bias,
        }
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        self.apply_perturbed(x, None)
    }

    fn apply_perturbed(&self, x: &[f64], r: Option<&[f64]>) -> Vec<f64> {
        (0..self.fan_out)
            .map(|j| {
                let z: f64 = (0..self.fan_in)
                    .map(|i| {
                        let k = j * self.fan_in + i;
                        (self.weights[k] + r.map_or(0.0, |r| r[k])) * x[i]
                    })
                    .sum::<f64>()
                    + self.bias[j];
                z.max(0.0)
            })
            .collect()
    }
}

/// Lipschitz check for a ReLU layer:
/// `‖φ(x; W + r) − φ(x; W)‖ ≤ ‖x‖·‖r‖_F`, exact up to `1e-12`.
pub fn verify_relu_lipschitz(
    layer: &ReluLayer,
    x: &[f64],
    r: &[f64],
    seed: u64,
) -> Result<BoundReport> {
    if x.len() != layer.fan_in {
        return Err(Error::Shape {
            expected: layer.fan_in,
            got: x.len(),
        });
    }
    if r.len() != layer.weights.len() {
        return Err(Error::Shape {
            expected: layer.weights.len(),
            got: r.len(),
        });
    }
    let lhs = l2_distance(&layer.apply_perturbed(x, Some(r)), &layer.apply(x));
    let x_norm = x.iter().map(|v| v * v).sum::<f64>().sqrt();
    let r_norm = r.iter().map(|v| v * v).sum::<f64>().sqrt();
    Ok(BoundReport::new(
        seed,
        0.0,
        0,
        lhs,
        x_norm * r_norm,
        BoundTolerance::EXACT,
    ))
}

/// A seeded random input for the bound sweeps: the network is
/// `init_network(spec, seed)`, with `x ~ U[-1, 1]^d` and `y ~ U[-1, 1]`.
#[derive(Debug, Clone)]
pub struct BoundInstance {
    pub seed: u64,
    pub snapshot: NetworkSnapshot,
    pub x: Vec<f64>,
    pub y: f64,
}

pub fn random_instance(spec: &NetworkSpec, seed: u64) -> Result<BoundInstance> {
    let snapshot = init_network(spec, seed)?;
    let mut rng = seeding::rng(seed, Stream::Bounds, 0);
    let x = (0..spec.input_dim())
        .map(|_| rng.random_range(-1.0..=1.0))
        .collect();
    let y = rng.random_range(-1.0..=1.0);
    Ok(BoundInstance {
        seed,
        snapshot,
        x,
        y,
    })
}

/// Random Lipschitz-check instance: layer, input `x ~ U[-2, 2]^in` and
/// perturbation `r ~ U[-1, 1]^(out×in)`.
pub fn random_relu_instance(
    fan_in: usize,
    fan_out: usize,
    seed: u64,
) -> (ReluLayer, Vec<f64>, Vec<f64>) {
    let layer = ReluLayer::random(fan_in, fan_out, seed, true);
    let mut rng = seeding::rng(seed, Stream::Bounds, 2);
    let x = (0..fan_in).map(|_| rng.random_range(-2.0..=2.0)).collect();
    let r = (0..fan_in * fan_out)
        .map(|_| rng.random_range(-1.0..=1.0))
        .collect();
    (layer, x, r)
}

/// Mean and population variance of `‖∇_w f‖²` over a sample set, for one snapshot.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradNormStats {
    pub mean: f64,
    pub variance: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradNormTrace {
    pub entries: Vec<GradNormStats>,
    /// Standard deviation of the per-snapshot means divided by their mean.
    pub cv_across_snapshots: f64,
}

impl GradNormTrace {
    pub fn to_csv(&self) -> CsvTable {
        let mut t = CsvTable::new(&["cycle", "mean", "variance", "cv_across_cycles"]);
        for (i, e) in self.entries.iter().enumerate() {
            t.row(&[&(i + 1), &e.mean, &e.variance, &self.cv_across_snapshots]);
        }
        t
    }
}

pub fn grad_norm_stats(
    snapshot: &NetworkSnapshot,
    features: Features<'_>,
    indices: &[usize],
) -> Result<GradNormStats> {
    if indices.is_empty() {
        return Err(Error::argument(
            "gradient-norm statistics need at least one sample",
        ));
    }
    let values = indices
        .par_iter()
        .map(|&i| snapshot.grad_output_norm_sq(features.get(i)?))
        .collect::<Result<Vec<f64>>>()?;
    let (mean, variance) = mean_variance(&values);
    Ok(GradNormStats { mean, variance })
}

pub fn grad_norm_trace(
    snapshots: &[NetworkSnapshot],
    features: Features<'_>,
    indices: &[usize],
) -> Result<GradNormTrace> {
    if let Some(first) = snapshots.first() {
        for s in &snapshots[1..] {
            first.check_same_spec(s)?;
        }
    }
    let entries = snapshots
        .iter()
        .map(|s| grad_norm_stats(s, features, indices))
        .collect::<Result<Vec<_>>>()?;
    let means: Vec<f64> = entries.iter().map(|e| e.mean).collect();
    let (m, v) = mean_variance(&means);
    let cv_across_snapshots = if m > 0.0 { v.sqrt() / m } else { 0.0 };
    Ok(GradNormTrace {
        entries,
        cv_across_snapshots,
    })
}

/// A small random scalar-head architecture: 1–4 inputs, one or two hidden
/// ReLU layers of width 2–8.
pub fn random_scalar_spec(seed: u64) -> NetworkSpec {
    let mut rng = seeding::rng(seed, Stream::Bounds, 3);
    let mut widths = vec![rng.random_range(1..=4)];
    for _ in 0..rng.random_range(1..=2) {
        widths.push(rng.random_range(2..=8));
    }
    widths.push(1);
    NetworkSpec::regression(widths)
}

/// Pass counts for one `(η, T)` cell of a bound sweep. `T = 0` marks the
/// ReLU Lipschitz check.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepCell {
    pub eta: f64,
    pub steps: usize,
    pub passed: usize,
    pub total: usize,
    /// Instances where the chained bound did not exceed the constant bound
    /// (equal to `total` for `T ≤ 1`).
    pub chain_held: usize,
}

impl SweepCell {
    pub fn pass_rate(&self) -> f64 {
        self.passed as f64 / self.total as f64
    }
}

#[derive(Debug, Clone)]
pub struct BoundSweep {
    pub reports: Vec<BoundReport>,
    pub cells: Vec<SweepCell>,
}

/// Runs `trials` random instances for every `(η, T)` pair plus `trials`
/// Lipschitz-check instances. Instance `i` uses seed
/// `derive(base_seed, Bounds, i)` in every cell, so cells share networks.
pub fn bound_sweep(
    etas: &[f64],
    steps: &[usize],
    trials: usize,
    base_seed: u64,
) -> Result<BoundSweep> {
    if trials == 0 {
        return Err(Error::argument("trials must be at least 1"));
    }
    if etas.iter().any(|&e| !(e.is_finite() && e > 0.0)) {
        return Err(Error::argument("learning rates must be positive"));
    }
    if steps.contains(&0) {
        return Err(Error::argument("T values must be at least 1"));
    }
    let seeds: Vec<u64> = (0..trials as u64)
        .map(|i| seeding::derive(base_seed, Stream::Bounds, i))
        .collect();
    let mut reports = Vec::new();
    let mut cells = Vec::new();
    for &eta in etas {
        for &t in steps {
            let results = seeds
                .par_iter()
                .map(|&seed| {
                    let inst = random_instance(&random_scalar_spec(seed), seed)?;
                    if t == 1 {
                        let r = check_one_step_bound(&inst.snapshot, &inst.x, inst.y, eta, seed)?;
                        Ok((r, true))
                    } else {
                        let c =
                            check_multi_step_bound(&inst.snapshot, &inst.x, inst.y, eta, t, seed)?;
                        Ok((c.constant_bound, c.chain_holds))
                    }
                })
                .collect::<Result<Vec<_>>>()?;
            cells.push(SweepCell {
                eta,
                steps: t,
                passed: results.iter().filter(|r| r.0.passed).count(),
                total: trials,
                chain_held: results.iter().filter(|r| r.1).count(),
            });
            reports.extend(results.into_iter().map(|r| r.0));
        }
    }
    let lipschitz = seeds
        .par_iter()
        .map(|&seed| {
            let mut rng = seeding::rng(seed, Stream::Bounds, 4);
            let (layer, x, r) =
                random_relu_instance(rng.random_range(1..=6), rng.random_range(1..=6), seed);
            verify_relu_lipschitz(&layer, &x, &r, seed)
        })
        .collect::<Result<Vec<_>>>()?;
    cells.push(SweepCell {
        eta: 0.0,
        steps: 0,
        passed: lipschitz.iter().filter(|r| r.passed).count(),
        total: trials,
        chain_held: trials,
    });
    reports.extend(lipschitz);
    Ok(BoundSweep { reports, cells })
}

// Summation in slice order keeps results reproducible.
pub(crate) fn mean_variance(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (0.0, 0.0);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::gen_two_moons;
    use crate::nnet::GradientVector;
    use proptest::prelude::*;

    fn scalar_linear(w: f64) -> NetworkSnapshot {
        NetworkSnapshot::from_params(
            NetworkSpec::regression(vec![1, 1]).without_bias(),
            vec![w],
            0,
        )
        .unwrap()
    }

    #[test]
    fn identical_models_have_zero_discrepancy() {
        let s = init_network(&NetworkSpec::classifier(vec![2, 5, 3]), 1).unwrap();
        assert_eq!(output_discrepancy(&s, &s, &[0.3, 0.1]).unwrap(), 0.0);
    }

    #[test]
    fn scalar_closed_form() {
        let d = output_discrepancy(&scalar_linear(1.0), &scalar_linear(2.0), &[3.0]).unwrap();
        assert_eq!(d, 3.0);
    }

    #[test]
    fn spec_mismatch_is_rejected() {
        let a = init_network(&NetworkSpec::regression(vec![2, 1]), 0).unwrap();
        let b = init_network(&NetworkSpec::regression(vec![2, 3, 1]), 0).unwrap();
        assert!(matches!(
            output_discrepancy(&a, &b, &[0.0, 0.0]),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn discrepancy_matches_independent_forward_passes() {
        let spec = NetworkSpec::classifier(vec![2, 8, 4]);
        let a = init_network(&spec, 3).unwrap();
        let b = init_network(&spec, 4).unwrap();
        for repr in [OutputRepr::Probabilities, OutputRepr::Logits] {
            let x = [0.7, -1.2];
            let fa = a.output(&x, repr).unwrap();
            let fb = b.output(&x, repr).unwrap();
            let mut acc = 0.0;
            for k in 0..fa.len() {
                acc += (fa[k] - fb[k]).powi(2);
            }
            let d = output_discrepancy_with(&a, &b, &x, repr).unwrap();
            assert!((d - acc.sqrt()).abs() < 1e-12);
        }
    }

    #[test]
    fn cod_scores_follow_per_sample_definition() {
        let data = gen_two_moons(200, 0.1, 0).unwrap();
        let spec = NetworkSpec::classifier(vec![2, 8, 2]);
        let cur = init_network(&spec, 1).unwrap();
        let prev = init_network(&spec, 2).unwrap();
        let idx: Vec<usize> = (0..100).map(|i| (i * 37) % 200).collect();
        let scores = cod_scores(
            &cur,
            &prev,
            data.features(),
            &idx,
            OutputRepr::Probabilities,
        )
        .unwrap();
        assert_eq!(scores.len(), 100);
        for (s, &i) in scores.iter().zip(&idx) {
            assert_eq!(s.sample_index, i);
            assert_eq!(
                s.value,
                output_discrepancy(&cur, &prev, data.row(i)).unwrap()
            );
        }
        let same =
            cod_scores(&cur, &cur, data.features(), &idx, OutputRepr::Probabilities).unwrap();
        assert!(same.iter().all(|s| s.value == 0.0));
        let single = cod_scores(
            &cur,
            &prev,
            data.features(),
            &[5],
            OutputRepr::Probabilities,
        )
        .unwrap();
        let expected = output_discrepancy(&cur, &prev, data.row(5)).unwrap();
        assert_eq!(
            single,
            vec![DiscrepancyScore {
                sample_index: 5,
                value: expected
            }]
        );
        assert!(matches!(
            cod_scores(
                &cur,
                &prev,
                data.features(),
                &[200],
                OutputRepr::Probabilities
            ),
            Err(Error::Range { index: 200, .. })
        ));
    }

    #[test]
    fn one_step_bound_is_tight_for_linear_model() {
        let s = scalar_linear(0.0);
        let r = check_one_step_bound(&s, &[1.0], 1.0, 0.1, 0).unwrap();
        assert!((r.lhs - 0.1).abs() < 1e-15);
        assert!((r.rhs - 0.1).abs() < 1e-15);
        assert!(r.slack.abs() < 1e-15);
        assert!(r.passed);
    }

    #[test]
    fn zero_loss_sample_does_not_move() {
        let s = scalar_linear(0.5);
        let r = check_one_step_bound(&s, &[2.0], 1.0, 0.1, 0).unwrap();
        assert_eq!((r.lhs, r.rhs), (0.0, 0.0));
        let c = check_multi_step_bound(&s, &[2.0], 1.0, 0.1, 5, 0).unwrap();
        assert_eq!((c.constant_bound.lhs, c.constant_bound.rhs), (0.0, 0.0));
        assert!(c.constant_bound.passed && c.chain_holds);
    }

    #[test]
    fn classification_heads_are_rejected() {
        let spec = NetworkSpec::classifier(vec![2, 3]);
        assert!(matches!(
            verify_one_step_bound(&spec, 0, &[0.0, 0.0], 1.0, 0.1),
            Err(Error::Config(_))
        ));
        assert!(verify_multi_step_bound(&spec, 0, &[0.0, 0.0], 1.0, 0.1, 3).is_err());
    }

    #[test]
    fn single_step_chain_matches_one_step_bound() {
        let spec = NetworkSpec::regression(vec![2, 4, 1]);
        for seed in 0..50 {
            let inst = random_instance(&spec, seed).unwrap();
            let one = check_one_step_bound(&inst.snapshot, &inst.x, inst.y, 1e-3, seed).unwrap();
            let multi =
                check_multi_step_bound(&inst.snapshot, &inst.x, inst.y, 1e-3, 1, seed).unwrap();
            assert_eq!(one.lhs, multi.constant_bound.lhs);
            assert!((one.rhs - multi.constant_bound.rhs).abs() <= 1e-15 * one.rhs.max(1e-300));
            assert_eq!(one.passed, multi.constant_bound.passed);
            assert_eq!(multi.c_const, multi.grad_norms[0]);
        }
    }

    #[test]
    fn relu_lipschitz_degenerate_cases() {
        let layer = ReluLayer::random(3, 4, 1, true);
        let r = verify_relu_lipschitz(&layer, &[0.5, -1.0, 2.0], &[0.0; 12], 1).unwrap();
        assert_eq!((r.lhs, r.rhs), (0.0, 0.0));
        assert!(r.passed);
        let free = ReluLayer::random(3, 4, 1, false);
        let r = verify_relu_lipschitz(&free, &[0.0; 3], &[0.3; 12], 1).unwrap();
        assert_eq!(r.lhs, 0.0);
        assert!(verify_relu_lipschitz(&layer, &[0.0; 2], &[0.0; 12], 1).is_err());
    }

    #[test]
    fn grad_norm_trace_shapes() {
        let data = gen_two_moons(20, 0.1, 0).unwrap();
        let s = init_network(&NetworkSpec::classifier(vec![2, 4, 2]), 0).unwrap();
        let one = grad_norm_trace(std::slice::from_ref(&s), data.features(), &[3]).unwrap();
        assert_eq!(one.entries.len(), 1);
        assert_eq!(one.entries[0].variance, 0.0);
        let idx: Vec<usize> = (0..20).collect();
        let rep =
            grad_norm_trace(&[s.clone(), s.clone(), s.clone()], data.features(), &idx).unwrap();
        assert!(rep.entries.windows(2).all(|w| w[0] == w[1]));
        assert_eq!(rep.cv_across_snapshots, 0.0);
        assert!(matches!(
            grad_norm_trace(&[s], data.features(), &[]),
            Err(Error::Argument(_))
        ));
    }

    #[test]
    fn csv_columns() {
        let r = check_one_step_bound(&scalar_linear(0.0), &[1.0], 1.0, 0.5, 3).unwrap();
        let csv = bound_reports_csv(&[r]);
        assert!(csv
            .as_str()
            .starts_with("seed,eta,T,lhs,rhs,slack,passed\n3,0.5,1,"));
        assert!(csv.as_str().ends_with(",true\n"));
    }

    fn three_snapshots(seed: u64) -> [NetworkSnapshot; 3] {
        let spec = NetworkSpec::classifier(vec![2, 6, 3]);
        [0, 1, 2].map(|k| init_network(&spec, seed.wrapping_add(k)).unwrap())
    }

    proptest! {
        #[test]
        fn discrepancy_is_a_metric(seed in any::<u64>(), x0 in -3.0f64..3.0, x1 in -3.0f64..3.0) {
            let [a, b, c] = three_snapshots(seed);
            let x = [x0, x1];
            for repr in [OutputRepr::Probabilities, OutputRepr::Logits] {
                let ab = output_discrepancy_with(&a, &b, &x, repr).unwrap();
                let ba = output_discrepancy_with(&b, &a, &x, repr).unwrap();
                let bc = output_discrepancy_with(&b, &c, &x, repr).unwrap();
                let ac = output_discrepancy_with(&a, &c, &x, repr).unwrap();
                prop_assert!(ab >= 0.0);
                prop_assert_eq!(ab, ba);
                prop_assert!(ac <= ab + bc + 1e-12);
            }
        }

        #[test]
        fn linear_models_meet_the_bound_with_equality(
            seed in any::<u64>(), d in 1usize..5, eta in 1e-4f64..0.5,
        ) {
            let spec = NetworkSpec::regression(vec![d, 1]);
            let inst = random_instance(&spec, seed).unwrap();
            let r = check_one_step_bound(&inst.snapshot, &inst.x, inst.y, eta, seed).unwrap();
            prop_assert!((r.lhs - r.rhs).abs() <= 1e-12);
            let half = check_one_step_bound(&inst.snapshot, &inst.x, inst.y, eta / 2.0, seed).unwrap();
            prop_assert!((half.rhs * 2.0 - r.rhs).abs() <= 1e-12 * r.rhs.max(1e-300));
            prop_assert!((half.lhs * 2.0 - r.lhs).abs() <= 1e-12 * r.lhs.max(1e-300) + 1e-15);
        }

        #[test]
        fn chained_bound_never_exceeds_constant_bound(seed in any::<u64>(), steps in 1usize..12) {
            let spec = NetworkSpec::regression(vec![2, 4, 1]);
            let inst = random_instance(&spec, seed).unwrap();
            let rep = check_multi_step_bound(&inst.snapshot, &inst.x, inst.y, 1e-2, steps, seed).unwrap();
            prop_assert!(rep.chain_holds);
            prop_assert_eq!(rep.step_losses.len(), steps);
        }

        #[test]
        fn relu_layer_is_lipschitz_in_weights(seed in any::<u64>(), fan_in in 1usize..6, fan_out in 1usize..6) {
            let (layer, x, r) = random_relu_instance(fan_in, fan_out, seed);
            prop_assert!(verify_relu_lipschitz(&layer, &x, &r, seed).unwrap().passed);
        }
    }

    #[test]
    fn sgd_step_used_by_checks_matches_manual_update() {
        let s = scalar_linear(0.25);
        let (_, g) = s.grad_loss(&[2.0], Label::Real(1.0)).unwrap();
        let manual = s.sgd_step(&g, 0.01).unwrap();
        let expected = 0.25 - 0.01 * (0.5 - 1.0) * 2.0;
        assert!((manual.params()[0] - expected).abs() < 1e-15);
        assert_eq!(g, GradientVector(vec![(0.5 - 1.0) * 2.0]));
    }

    #[test]
    fn sweep_cells_cover_every_pair() {
        let sweep = bound_sweep(&[1e-3, 1e-2], &[1, 5], 50, 7).unwrap();
        let cells: Vec<(f64, usize)> = sweep.cells.iter().map(|c| (c.eta, c.steps)).collect();
        assert_eq!(
            cells,
            vec![(1e-3, 1), (1e-3, 5), (1e-2, 1), (1e-2, 5), (0.0, 0)]
        );
        assert_eq!(sweep.reports.len(), 250);
        assert!(sweep.cells.iter().all(|c| c.chain_held == c.total));
        assert!(
            sweep.cells.iter().all(|c| c.pass_rate() >= 0.99),
            "{:?}",
            sweep.cells
        );
        assert!(matches!(
            bound_sweep(&[1e-3], &[1], 0, 0),
            Err(Error::Argument(_))
        ));
        assert!(bound_sweep(&[1e-3], &[0], 1, 0).is_err());
    }
}
