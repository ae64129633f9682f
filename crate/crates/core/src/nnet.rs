//! Small fully connected networks with exact analytic gradients.
//!
//! A network is described by a [`NetworkSpec`] and its state by an immutable
//! [`NetworkSnapshot`]. Every update (`sgd_step`, [`ema_update`]) returns a new
//! snapshot, so snapshots taken at different optimization steps can be kept
//! side by side and compared.
//!
//! Parameters live in one flat `Vec<f64>`, layer by layer. Within a layer the
//! weight matrix comes first, row-major with shape `(out, in)`, followed by the
//! `out` biases (absent when the spec disables biases).

use std::fmt::Write as _;
use std::path::Path;
use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seeding;

pub const DEFAULT_INIT_SCALE: f64 = 0.5;
pub const DEFAULT_EMA_DECAY: f64 = 0.999;

const SNAPSHOT_MAGIC: &str = "todlab-snapshot";
const SNAPSHOT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Head {
    /// Single raw output, Euclidean loss `½(y − f)²`.
    ScalarRegression,
    /// Softmax over the final layer, cross-entropy loss.
    SoftmaxClassification,
}

/// Which output a discrepancy or consistency loss is measured on.
///
/// For regression heads both variants mean the raw scalar output.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutputRepr {
    #[default]
    Probabilities,
    Logits,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkSpec {
    /// Input width first, output width last.
    pub layer_widths: Vec<usize>,
    pub activation: Activation,
    pub head: Head,
    pub init_scale: f64,
    pub bias: bool,
}

impl NetworkSpec {
    pub fn new(layer_widths: Vec<usize>, head: Head) -> Self {
        NetworkSpec {
            layer_widths,
            activation: Activation::Relu,
            head,
            init_scale: DEFAULT_INIT_SCALE,
            bias: true,
        }
    }

    pub fn regression(layer_widths: Vec<usize>) -> Self {
        Self::new(layer_widths, Head::ScalarRegression)
    }

    pub fn classifier(layer_widths: Vec<usize>) -> Self {
        Self::new(layer_widths, Head::SoftmaxClassification)
    }

    pub fn with_init_scale(mut self, init_scale: f64) -> Self {
        self.init_scale = init_scale;
        self
    }

    pub fn without_bias(mut self) -> Self {
        self.bias = false;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.layer_widths.len() < 2 {
            return Err(Error::config(format!(
                "layer_widths needs at least 2 entries, got {}",
                self.layer_widths.len()
            )));
        }
        if self.layer_widths.contains(&0) {
            return Err(Error::config("layer_widths entries must be >= 1"));
        }
        if self.head == Head::ScalarRegression && self.output_dim() != 1 {
            return Err(Error::config(format!(
                "scalar_regression head requires output width 1, got {}",
                self.output_dim()
            )));
        }
        if !(self.init_scale.is_finite() && self.init_scale > 0.0) {
            return Err(Error::config("init_scale must be a positive finite number"));
        }
        Ok(())
    }

    pub fn input_dim(&self) -> usize {
        self.layer_widths[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.layer_widths.last().expect("validated spec")
    }

    pub fn param_count(&self) -> usize {
        self.layer_shapes()
            .last()
            .map(|l| l.end)
            .unwrap_or_default()
    }

    fn layer_shapes(&self) -> Vec<LayerShape> {
        let mut offset = 0;
        self.layer_widths
            .windows(2)
            .map(|w| {
                let (fan_in, fan_out) = (w[0], w[1]);
                let weights = offset;
                let biases = weights + fan_in * fan_out;
                let end = biases + if self.bias { fan_out } else { 0 };
                offset = end;
                LayerShape {
                    fan_in,
                    fan_out,
                    weights,
                    biases,
                    end,
                }
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy)]
struct LayerShape {
    fan_in: usize,
    fan_out: usize,
    weights: usize,
    biases: usize,
    end: usize,
}

/// Supervision target for one sample.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Label {
    Class(usize),
    Real(f64),
}

impl Label {
    pub fn as_f64(&self) -> f64 {
        match *self {
            Label::Class(c) => c as f64,
            Label::Real(y) => y,
        }
    }
}

/// Flat gradient, same length and order as the snapshot parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientVector(pub Vec<f64>);

impl GradientVector {
    pub fn zeros(len: usize) -> Self {
        GradientVector(vec![0.0; len])
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn norm_sq(&self) -> f64 {
        self.0.iter().map(|g| g * g).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|g| g.is_finite())
    }
}

/// Dense `output_dim × param_count` matrix, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Jacobian {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Jacobian {
    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn frobenius_sq(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum()
    }
}

/// Immutable parameter state of a network.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkSnapshot {
    spec: Arc<NetworkSpec>,
    params: Vec<f64>,
    step_count: u64,
}

/// Intermediate values of one forward pass, kept for backpropagation.
pub(crate) struct Trace {
    /// `inputs[l]` is the input of layer `l`; the last entry is unused.
    inputs: Vec<Vec<f64>>,
    /// Pre-activations of every layer; the last one is the raw output.
    pre: Vec<Vec<f64>>,
}

impl Trace {
    pub(crate) fn raw_output(&self) -> &[f64] {
        self.pre.last().expect("at least one layer")
    }
}

/// Draws parameters uniformly from `[-init_scale, init_scale]`.
pub fn init_network(spec: &NetworkSpec, seed: u64) -> Result<NetworkSnapshot> {
    spec.validate()?;
    let mut rng = seeding::rng_for(seed);
    let scale = spec.init_scale;
    let params = (0..spec.param_count())
        .map(|_| rng.random_range(-scale..=scale))
        .collect();
    Ok(NetworkSnapshot {
        spec: Arc::new(spec.clone()),
        params,
        step_count: 0,
    })
}

/// Element-wise `alpha·ema + (1 − alpha)·current`.
pub fn ema_update(
    ema: &NetworkSnapshot,
    current: &NetworkSnapshot,
    alpha: f64,
) -> Result<NetworkSnapshot> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::config(format!("EMA decay {alpha} outside [0, 1]")));
    }
    ema.check_same_spec(current)?;
    let params = ema
        .params
        .iter()
        .zip(&current.params)
        .map(|(&e, &w)| alpha * e + (1.0 - alpha) * w)
        .collect();
    Ok(NetworkSnapshot {
        spec: Arc::clone(&ema.spec),
        params,
        step_count: current.step_count,
    })
}

impl NetworkSnapshot {
    pub fn from_params(spec: NetworkSpec, params: Vec<f64>, step_count: u64) -> Result<Self> {
        spec.validate()?;
        if params.len() != spec.param_count() {
            return Err(Error::Shape {
                expected: spec.param_count(),
                got: params.len(),
            });
        }
        Ok(NetworkSnapshot {
            spec: Arc::new(spec),
            params,
            step_count,
        })
    }

    /// All-zero parameters.
    pub fn zeros(spec: NetworkSpec) -> Result<Self> {
        let n = spec.param_count();
        Self::from_params(spec, vec![0.0; n], 0)
    }

    pub fn spec(&self) -> &NetworkSpec {
        &self.spec
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn step_count(&self) -> u64 {
        self.step_count
    }

    /// Same spec and step count, different parameters.
    pub fn with_params(&self, params: Vec<f64>) -> Result<Self> {
        if params.len() != self.params.len() {
            return Err(Error::Shape {
                expected: self.params.len(),
                got: params.len(),
            });
        }
        Ok(NetworkSnapshot {
            spec: Arc::clone(&self.spec),
            params,
            step_count: self.step_count,
        })
    }

    pub(crate) fn check_same_spec(&self, other: &NetworkSnapshot) -> Result<()> {
        if Arc::ptr_eq(&self.spec, &other.spec) || self.spec == other.spec {
            Ok(())
        } else {
            Err(Error::config("snapshots have different network specs"))
        }
    }

    fn check_input(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.spec.input_dim() {
            return Err(Error::Shape {
                expected: self.spec.input_dim(),
                got: x.len(),
            });
        }
        Ok(())
    }

    pub(crate) fn trace(&self, x: &[f64]) -> Trace {
        let shapes = self.spec.layer_shapes();
        let mut inputs = Vec::with_capacity(shapes.len() + 1);
        let mut pre = Vec::with_capacity(shapes.len());
        inputs.push(x.to_vec());
        for (l, shape) in shapes.iter().enumerate() {
            let input = &inputs[l];
            let w = &self.params[shape.weights..shape.biases];
            let z: Vec<f64> = (0..shape.fan_out)
                .map(|j| {
                    let row = &w[j * shape.fan_in..(j + 1) * shape.fan_in];
                    let dot: f64 = row.iter().zip(input).map(|(a, b)| a * b).sum();
                    if self.spec.bias {
                        dot + self.params[shape.biases + j]
                    } else {
                        dot
                    }
                })
                .collect();
            if l + 1 < shapes.len() {
                inputs.push(z.iter().map(|&v| relu(v)).collect());
            }
            pre.push(z);
        }
        Trace { inputs, pre }
    }

    /// Accumulates `scale · (∂raw/∂params)ᵀ · d_raw` into `grad`.
    pub(crate) fn backprop_into(&self, trace: &Trace, d_raw: &[f64], scale: f64, grad: &mut [f64]) {
        let shapes = self.spec.layer_shapes();
        let mut delta: Vec<f64> = d_raw.iter().map(|d| d * scale).collect();
        for (l, shape) in shapes.iter().enumerate().rev() {
            let input = &trace.inputs[l];
            for (j, &dj) in delta.iter().enumerate() {
                if dj == 0.0 {
                    continue;
                }
                let row = &mut grad
                    [shape.weights + j * shape.fan_in..shape.weights + (j + 1) * shape.fan_in];
                for (g, &a) in row.iter_mut().zip(input) {
                    *g += dj * a;
                }
                if self.spec.bias {
                    grad[shape.biases + j] += dj;
                }
            }
            if l == 0 {
                break;
            }
            let w = &self.params[shape.weights..shape.biases];
            let below = &trace.pre[l - 1];
            delta = (0..shape.fan_in)
                .map(|i| {
                    if below[i] <= 0.0 {
                        return 0.0;
                    }
                    delta
                        .iter()
                        .enumerate()
                        .map(|(j, &dj)| dj * w[j * shape.fan_in + i])
                        .sum()
                })
                .collect();
        }
    }

    /// Raw final-layer output (logits for classifiers).
    pub fn logits(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_input(x)?;
        Ok(self.trace(x).pre.pop().expect("at least one layer"))
    }

    /// Head output: the raw value for regression, probabilities for classifiers.
    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        let z = self.logits(x)?;
        Ok(match self.spec.head {
            Head::ScalarRegression => z,
            Head::SoftmaxClassification => softmax(&z),
        })
    }

    pub fn output(&self, x: &[f64], repr: OutputRepr) -> Result<Vec<f64>> {
        match repr {
            OutputRepr::Probabilities => self.forward(x),
            OutputRepr::Logits => self.logits(x),
        }
    }

    pub fn loss(&self, x: &[f64], y: Label) -> Result<f64> {
        self.check_input(x)?;
        let z = self.trace(x).pre.pop().expect("at least one layer");
        let (loss, _) = self.loss_and_raw_grad(&z, y)?;
        Ok(loss)
    }

    /// Loss and its derivative with respect to the raw output.
    pub(crate) fn loss_and_raw_grad(&self, z: &[f64], y: Label) -> Result<(f64, Vec<f64>)> {
        match (self.spec.head, y) {
            (Head::ScalarRegression, Label::Real(target)) => {
                let r = z[0] - target;
                Ok((0.5 * r * r, vec![r]))
            }
            (Head::SoftmaxClassification, Label::Class(c)) => {
                if c >= z.len() {
                    return Err(Error::config(format!(
                        "class label {c} out of range for {} outputs",
                        z.len()
                    )));
                }
                let lse = log_sum_exp(z);
                let mut d: Vec<f64> = z.iter().map(|&v| (v - lse).exp()).collect();
                d[c] -= 1.0;
                Ok(((lse - z[c]).max(0.0), d))
            }
            (head, label) => Err(Error::config(format!(
                "label {label:?} does not match head {head:?}"
            ))),
        }
    }

    /// Per-sample loss and its exact gradient with respect to the parameters.
    pub fn grad_loss(&self, x: &[f64], y: Label) -> Result<(f64, GradientVector)> {
        self.check_input(x)?;
        let trace = self.trace(x);
        let (loss, d_raw) = self.loss_and_raw_grad(trace.raw_output(), y)?;
        let mut grad = GradientVector::zeros(self.params.len());
        self.backprop_into(&trace, &d_raw, 1.0, &mut grad.0);
        Ok((loss, grad))
    }

    /// Jacobian of the raw output (logits for classifiers) with respect to the parameters.
    pub fn grad_output(&self, x: &[f64]) -> Result<Jacobian> {
        self.check_input(x)?;
        let trace = self.trace(x);
        let rows = self.spec.output_dim();
        let cols = self.params.len();
        let mut data = vec![0.0; rows * cols];
        let mut unit = vec![0.0; rows];
        for r in 0..rows {
            unit[r] = 1.0;
            self.backprop_into(&trace, &unit, 1.0, &mut data[r * cols..(r + 1) * cols]);
            unit[r] = 0.0;
        }
        Ok(Jacobian { rows, cols, data })
    }

    /// Squared Frobenius norm of [`grad_output`](Self::grad_output).
    pub fn grad_output_norm_sq(&self, x: &[f64]) -> Result<f64> {
        Ok(self.grad_output(x)?.frobenius_sq())
    }

    /// `params − eta·g`, one more step on the counter.
    pub fn sgd_step(&self, g: &GradientVector, eta: f64) -> Result<NetworkSnapshot> {
        if !(eta.is_finite() && eta > 0.0) {
            return Err(Error::config(format!(
                "learning rate must be positive, got {eta}"
            )));
        }
        if g.len() != self.params.len() {
            return Err(Error::Shape {
                expected: self.params.len(),
                got: g.len(),
            });
        }
        if !g.is_finite() {
            return Err(Error::Numeric("non-finite gradient entry".into()));
        }
        let params = self
            .params
            .iter()
            .zip(&g.0)
            .map(|(&w, &d)| w - eta * d)
            .collect();
        Ok(NetworkSnapshot {
            spec: Arc::clone(&self.spec),
            params,
            step_count: self.step_count + 1,
        })
    }

    pub fn to_text(&self) -> String {
        let spec = &self.spec;
        let mut out = String::new();
        let widths: Vec<String> = spec.layer_widths.iter().map(|w| w.to_string()).collect();
        let _ = writeln!(out, "{SNAPSHOT_MAGIC} {SNAPSHOT_VERSION}");
        let _ = writeln!(out, "widths {}", widths.join(" "));
        let _ = writeln!(out, "activation relu");
        let _ = writeln!(
            out,
            "head {}",
            match spec.head {
                Head::ScalarRegression => "scalar_regression",
                Head::SoftmaxClassification => "softmax_classification",
            }
        );
        let _ = writeln!(out, "bias {}", spec.bias);
        let _ = writeln!(out, "init_scale {}", spec.init_scale);
        let _ = writeln!(out, "step_count {}", self.step_count);
        let _ = writeln!(out, "params {}", self.params.len());
        for p in &self.params {
            // `{:?}` is the shortest representation that parses back to the same bits.
            let _ = writeln!(out, "{p:?}");
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let bad = |line: usize, msg: &str| Error::Parse {
            path: "<snapshot>".into(),
            line: line as u64 + 1,
            message: msg.to_string(),
        };
        let lines: Vec<&str> = text.lines().collect();
        let field = |idx: usize, key: &str| -> Result<&str> {
            let line = lines
                .get(idx)
                .ok_or_else(|| bad(idx, "unexpected end of snapshot"))?;
            line.strip_prefix(key)
                .and_then(|rest| rest.strip_prefix(' '))
                .ok_or_else(|| bad(idx, &format!("expected `{key}` field")))
        };
        let version = field(0, SNAPSHOT_MAGIC)?;
        if version != SNAPSHOT_VERSION.to_string() {
            return Err(bad(0, &format!("unsupported snapshot version {version}")));
        }
        let layer_widths = field(1, "widths")?
            .split_whitespace()
            .map(|w| w.parse::<usize>().map_err(|_| bad(1, "bad layer width")))
            .collect::<Result<Vec<_>>>()?;
        if field(2, "activation")? != "relu" {
            return Err(bad(2, "unknown activation"));
        }
        let head = match field(3, "head")? {
            "scalar_regression" => Head::ScalarRegression,
            "softmax_classification" => Head::SoftmaxClassification,
            _ => return Err(bad(3, "unknown head")),
        };
        let bias = field(4, "bias")?
            .parse::<bool>()
            .map_err(|_| bad(4, "bad bias flag"))?;
        let init_scale = field(5, "init_scale")?
            .parse::<f64>()
            .map_err(|_| bad(5, "bad init_scale"))?;
        let step_count = field(6, "step_count")?
            .parse::<u64>()
            .map_err(|_| bad(6, "bad step_count"))?;
        let count = field(7, "params")?
            .parse::<usize>()
            .map_err(|_| bad(7, "bad parameter count"))?;
        let params = (0..count)
            .map(|i| {
                let idx = 8 + i;
                lines
                    .get(idx)
                    .ok_or_else(|| bad(idx, "missing parameter"))?
                    .trim()
                    .parse::<f64>()
                    .map_err(|_| bad(idx, "bad parameter value"))
            })
            .collect::<Result<Vec<_>>>()?;
        let spec = NetworkSpec {
            layer_widths,
            activation: Activation::Relu,
            head,
            init_scale,
            bias,
        };
        Self::from_params(spec, params, step_count)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        crate::io::write_atomic(path, self.to_text().as_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(Error::MissingArtifact(path.to_path_buf()));
        }
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_text(&text).map_err(|e| match e {
            Error::Parse { line, message, .. } => Error::Parse {
                path: path.to_path_buf(),
                line,
                message,
            },
            other => other,
        })
    }
}

fn relu(v: f64) -> f64 {
    if v > 0.0 {
        v
    } else {
        0.0
    }
}

fn log_sum_exp(z: &[f64]) -> f64 {
    let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    m + z.iter().map(|&v| (v - m).exp()).sum::<f64>().ln()
}

pub fn softmax(z: &[f64]) -> Vec<f64> {
    let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = z.iter().map(|&v| (v - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}
