//! Small feedforward networks with exact hand-written gradients.
//!
//! The architecture is fixed per experiment: `layer_sizes = [n_0, ..., n_L]`
//! gives L affine layers. The configured activation applies to hidden layers
//! only; the final layer is always affine and the head interprets its output
//! (Gaussian regression reads means, the categorical head applies a
//! log-sum-exp softmax). With `activation = identity` and a single layer the
//! model is exactly linear, which is what the quadratic-task oracles assume.
//!
//! Parameter flattening convention (load-bearing, shared with every consumer
//! of [`ParamVector`]): layer by layer, weight matrix in row-major order
//! (`fan_out` rows of `fan_in`), then that layer's biases when biases are
//! enabled. Weight init draws in exactly this order.
//!
//! Losses are total negative log-likelihood over a dataset, including the
//! Gaussian normalization constant, so likelihood values are comparable
//! across heads and against closed-form posteriors. Gradients accumulate
//! per example in dataset order; `grad_nll` is bitwise equal to summing
//! `per_example_grads` in the same order.

use serde::{Deserialize, Serialize};

use crate::dataset::{Targets, TaskDataset};
use crate::error::{Error, Result};
use crate::params::ParamVector;
use crate::rng;

/// Hidden-layer nonlinearity.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Tanh,
    Identity,
}

/// Output likelihood model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Head {
    /// Independent Gaussians with fixed, known noise variance.
    GaussianRegression { noise_variance: f64 },
    /// Softmax over the final affine outputs.
    Categorical,
}

/// Network shape plus likelihood head.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Architecture {
    pub layer_sizes: Vec<usize>,
    pub activation: Activation,
    pub head: Head,
    #[serde(default = "default_true")]
    pub use_bias: bool,
}

fn default_true() -> bool {
    true
}

/// Serialized model snapshot: shape plus flat parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub schema_version: u32,
    pub architecture: Architecture,
    pub params: ParamVector,
}

pub const CHECKPOINT_SCHEMA_VERSION: u32 = 1;

struct LayerSpan {
    w_off: usize,
    b_off: Option<usize>,
    fan_in: usize,
    fan_out: usize,
}

impl Architecture {
    pub fn validate(&self) -> Result<()> {
        if self.layer_sizes.len() < 2 {
            return Err(Error::InvalidArgument(
                "layer_sizes needs at least an input and an output width".into(),
            ));
        }
        if self.layer_sizes.contains(&0) {
            return Err(Error::InvalidArgument(
                "layer_sizes entries must be >= 1".into(),
            ));
        }
        match self.head {
            Head::GaussianRegression { noise_variance } => {
                if !noise_variance.is_finite() || noise_variance <= 0.0 {
                    return Err(Error::InvalidArgument(format!(
                        "noise_variance must be finite and positive (got {noise_variance})"
                    )));
                }
            }
            Head::Categorical => {
                if self.output_dim() < 2 {
                    return Err(Error::InvalidArgument(
                        "categorical head needs at least 2 output units".into(),
                    ));
                }
            }
        }
        Ok(())
    }

    pub fn input_dim(&self) -> usize {
        self.layer_sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.layer_sizes.last().expect("validated layer_sizes")
    }

    /// Total flat parameter count under the documented layout.
    pub fn param_count(&self) -> usize {
        self.layer_sizes
            .windows(2)
            .map(|w| w[0] * w[1] + if self.use_bias { w[1] } else { 0 })
            .sum()
    }

    fn layer_spans(&self) -> Vec<LayerSpan> {
        let mut spans = Vec::with_capacity(self.layer_sizes.len() - 1);
        let mut off = 0;
        for w in self.layer_sizes.windows(2) {
            let (fan_in, fan_out) = (w[0], w[1]);
            let w_off = off;
            off += fan_in * fan_out;
            let b_off = if self.use_bias {
                let b = off;
                off += fan_out;
                Some(b)
            } else {
                None
            };
            spans.push(LayerSpan {
                w_off,
                b_off,
                fan_in,
                fan_out,
            });
        }
        spans
    }

    /// Seeded init, uniform in [-r, r] with r = 1/sqrt(fan_in), drawn in
    /// flattening order.
    pub fn init_params(&self, seed: u64) -> Result<ParamVector> {
        self.validate()?;
        let mut r = rng::stream(seed, STREAM_INIT);
        let mut values = Vec::with_capacity(self.param_count());
        for w in self.layer_sizes.windows(2) {
            let (fan_in, fan_out) = (w[0], w[1]);
            let bound = 1.0 / (fan_in as f64).sqrt();
            for _ in 0..fan_in * fan_out {
                values.push(r.next_range(-bound, bound));
            }
            if self.use_bias {
                for _ in 0..fan_out {
                    values.push(r.next_range(-bound, bound));
                }
            }
        }
        ParamVector::new(values)
    }

    fn check_params(&self, params: &ParamVector) -> Result<()> {
        if params.len() != self.param_count() {
            return Err(Error::DimensionMismatch {
                context: "network parameters",
                expected: self.param_count(),
                got: params.len(),
            });
        }
        Ok(())
    }

    /// Full forward pass storing every layer's output; hidden entries are
    /// post-activation, the last entry is the raw affine output.
    fn forward_trace(&self, p: &[f64], x: &[f64]) -> Result<Vec<Vec<f64>>> {
        if x.len() != self.input_dim() {
            return Err(Error::DimensionMismatch {
                context: "forward inputs",
                expected: self.input_dim(),
                got: x.len(),
            });
        }
        let spans = self.layer_spans();
        let last = spans.len() - 1;
        let mut acts: Vec<Vec<f64>> = Vec::with_capacity(spans.len() + 1);
        acts.push(x.to_vec());
        for (l, span) in spans.iter().enumerate() {
            let a = &acts[l];
            let mut z = Vec::with_capacity(span.fan_out);
            for i in 0..span.fan_out {
                let row = &p[span.w_off + i * span.fan_in..span.w_off + (i + 1) * span.fan_in];
                let mut s = span.b_off.map_or(0.0, |b| p[b + i]);
                for (w, v) in row.iter().zip(a) {
                    s += w * v;
                }
                z.push(s);
            }
            if l < last {
                match self.activation {
                    Activation::Tanh => {
                        for v in &mut z {
                            *v = v.tanh();
                        }
                    }
                    Activation::Identity => {}
                }
            }
            acts.push(z);
        }
        Ok(acts)
    }

    /// Head outputs per example: means for the Gaussian head, strictly
    /// positive probabilities summing to one for the categorical head.
    pub fn forward(&self, params: &ParamVector, inputs: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
        self.validate()?;
        self.check_params(params)?;
        let p = params.as_slice();
        let mut out = Vec::with_capacity(inputs.len());
        for x in inputs {
            let acts = self.forward_trace(p, x)?;
            let z = acts.last().expect("trace has final layer");
            out.push(match self.head {
                Head::GaussianRegression { .. } => z.clone(),
                Head::Categorical => {
                    let lse = log_sum_exp(z);
                    z.iter().map(|v| (v - lse).exp()).collect()
                }
            });
        }
        Ok(out)
    }

    /// Verifies that a dataset's target kind and width fit this head.
    pub fn check_targets(&self, data: &TaskDataset) -> Result<()> {
        match (&self.head, data.targets()) {
            (Head::GaussianRegression { .. }, Targets::Regression(t)) => {
                let width = t.first().map_or(0, Vec::len);
                if width != self.output_dim() {
                    return Err(Error::DimensionMismatch {
                        context: "regression targets",
                        expected: self.output_dim(),
                        got: width,
                    });
                }
            }
            (Head::Categorical, Targets::Classification(labels)) => {
                let k = self.output_dim();
                if let Some(i) = labels.iter().position(|l| *l >= k) {
                    return Err(Error::InvalidArgument(format!(
                        "example {i}: label {} out of range for {k} classes",
                        labels[i]
                    )));
                }
            }
            _ => {
                return Err(Error::InvalidArgument(
                    "dataset target kind does not match the model head".into(),
                ))
            }
        }
        Ok(())
    }

    fn example_nll(&self, z: &[f64], data: &TaskDataset, n: usize) -> f64 {
        match (&self.head, data.targets()) {
            (Head::GaussianRegression { noise_variance }, Targets::Regression(t)) => {
                let y = &t[n];
                let k = z.len() as f64;
                let sq: f64 = z.iter().zip(y).map(|(m, y)| (m - y) * (m - y)).sum();
                sq / (2.0 * noise_variance)
                    + 0.5 * k * (2.0 * std::f64::consts::PI * noise_variance).ln()
            }
            (Head::Categorical, Targets::Classification(labels)) => log_sum_exp(z) - z[labels[n]],
            _ => unreachable!("target kind checked before evaluation"),
        }
    }

    /// d(example NLL)/dz at the final affine output.
    fn head_delta(&self, z: &[f64], data: &TaskDataset, n: usize) -> Vec<f64> {
        match (&self.head, data.targets()) {
            (Head::GaussianRegression { noise_variance }, Targets::Regression(t)) => z
                .iter()
                .zip(&t[n])
                .map(|(m, y)| (m - y) / noise_variance)
                .collect(),
            (Head::Categorical, Targets::Classification(labels)) => {
                let lse = log_sum_exp(z);
                let mut d: Vec<f64> = z.iter().map(|v| (v - lse).exp()).collect();
                d[labels[n]] -= 1.0;
                d
            }
            _ => unreachable!("target kind checked before evaluation"),
        }
    }

    /// Total NLL over the dataset, summed in example order.
    pub fn neg_log_likelihood(&self, params: &ParamVector, data: &TaskDataset) -> Result<f64> {
        self.validate()?;
        self.check_params(params)?;
        self.check_targets(data)?;
        let p = params.as_slice();
        let mut total = 0.0;
        for (n, x) in data.inputs().iter().enumerate() {
            let acts = self.forward_trace(p, x)?;
            let nll = self.example_nll(acts.last().expect("final layer"), data, n);
            if !nll.is_finite() {
                return Err(Error::NonFinite {
                    context: "neg_log_likelihood",
                    index: n,
                });
            }
            total += nll;
        }
        Ok(total)
    }

    /// Backprop for one example, adding its gradient into `acc`.
    fn accumulate_example_grad(
        &self,
        p: &[f64],
        data: &TaskDataset,
        n: usize,
        acc: &mut [f64],
    ) -> Result<()> {
        let spans = self.layer_spans();
        let acts = self.forward_trace(p, &data.inputs()[n])?;
        let mut delta = self.head_delta(acts.last().expect("final layer"), data, n);
        for (l, span) in spans.iter().enumerate().rev() {
            let a = &acts[l];
            for i in 0..span.fan_out {
                let row =
                    &mut acc[span.w_off + i * span.fan_in..span.w_off + (i + 1) * span.fan_in];
                for (g, v) in row.iter_mut().zip(a) {
                    *g += delta[i] * v;
                }
                if let Some(b) = span.b_off {
                    acc[b + i] += delta[i];
                }
            }
            if l > 0 {
                // acts[l] is the post-activation of the previous hidden layer,
                // so tanh' = 1 - a^2 comes straight from the stored value.
                let mut prev = vec![0.0; span.fan_in];
                for (i, d) in delta.iter().enumerate() {
                    let row = &p[span.w_off + i * span.fan_in..span.w_off + (i + 1) * span.fan_in];
                    for (pj, w) in prev.iter_mut().zip(row) {
                        *pj += w * d;
                    }
                }
                if let Activation::Tanh = self.activation {
                    for (pj, aj) in prev.iter_mut().zip(a) {
                        *pj *= 1.0 - aj * aj;
                    }
                }
                delta = prev;
            }
        }
        Ok(())
    }

    /// Gradient of the total NLL, accumulated in example order.
    pub fn grad_nll(&self, params: &ParamVector, data: &TaskDataset) -> Result<ParamVector> {
        self.validate()?;
        self.check_params(params)?;
        self.check_targets(data)?;
        let mut acc = vec![0.0; self.param_count()];
        for n in 0..data.len() {
            self.accumulate_example_grad(params.as_slice(), data, n, &mut acc)?;
        }
        ParamVector::new(acc)
    }

    /// One gradient per example, in dataset order. Summing these in order is
    /// bitwise identical to [`Architecture::grad_nll`].
    pub fn per_example_grads(
        &self,
        params: &ParamVector,
        data: &TaskDataset,
    ) -> Result<Vec<ParamVector>> {
        self.validate()?;
        self.check_params(params)?;
        self.check_targets(data)?;
        let mut out = Vec::with_capacity(data.len());
        for n in 0..data.len() {
            let mut g = vec![0.0; self.param_count()];
            self.accumulate_example_grad(params.as_slice(), data, n, &mut g)?;
            out.push(ParamVector::new(g)?);
        }
        Ok(out)
    }
}

/// Stable log(sum(exp(z))).
pub fn log_sum_exp(z: &[f64]) -> f64 {
    let m = z.iter().fold(f64::NEG_INFINITY, |a, b| a.max(*b));
    m + z.iter().map(|v| (v - m).exp()).sum::<f64>().ln()
}

const STREAM_INIT: u64 = 0;

impl Checkpoint {
    pub fn new(architecture: Architecture, params: ParamVector) -> Result<Self> {
        architecture.validate()?;
        architecture.check_params(&params)?;
        Ok(Self {
            schema_version: CHECKPOINT_SCHEMA_VERSION,
            architecture,
            params,
        })
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let ck: Checkpoint = serde_json::from_str(text)?;
        if ck.schema_version != CHECKPOINT_SCHEMA_VERSION {
            return Err(Error::InvalidArgument(format!(
                "unsupported checkpoint schema_version {}",
                ck.schema_version
            )));
        }
        ck.architecture.validate()?;
        ck.architecture.check_params(&ck.params)?;
        Ok(ck)
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        let mut text = self.to_json()?;
        text.push('\n');
        Ok(std::fs::write(path, text)?)
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}
