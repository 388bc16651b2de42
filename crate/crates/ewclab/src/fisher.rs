//! Diagonal empirical Fisher information.
//!
//! The estimate is the per-example average of squared per-example gradients,
//! F_i = (1/N) * sum_n g_{n,i}^2, stored unscaled so that N*F and lambda*F
//! are single multiplies downstream. `Observed` mode takes gradients at the
//! recorded targets; `Sampled` mode first redraws targets from the model's
//! predictive distribution at the given parameters (seeded, one draw per
//! example in dataset order) and is provided because run configs must record
//! which estimator an experiment used.

use serde::{Deserialize, Serialize};

use crate::dataset::{Targets, TaskDataset};
use crate::error::{Error, Result};
use crate::net::{Architecture, Head};
use crate::params::{DiagPrecision, ParamVector};
use crate::rng;

/// Target source for the squared-gradient average.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum FisherMode {
    /// Gradients at the dataset's own targets.
    Observed,
    /// Gradients at targets drawn from the model predictive at the
    /// evaluation parameters.
    Sampled { seed: u64 },
}

/// Diagonal empirical Fisher at `params` over `data`.
pub fn empirical_fisher_diag(
    arch: &Architecture,
    params: &ParamVector,
    data: &TaskDataset,
    mode: FisherMode,
) -> Result<DiagPrecision> {
    let eval_data = match mode {
        FisherMode::Observed => data.clone(),
        FisherMode::Sampled { seed } => resample_targets(arch, params, data, seed)?,
    };
    let grads = arch.per_example_grads(params, &eval_data)?;
    let n = grads.len() as f64;
    let mut acc = vec![0.0; params.len()];
    for g in &grads {
        for (a, v) in acc.iter_mut().zip(g.as_slice()) {
            *a += v * v;
        }
    }
    for a in &mut acc {
        *a /= n;
    }
    DiagPrecision::new(acc)
}

fn resample_targets(
    arch: &Architecture,
    params: &ParamVector,
    data: &TaskDataset,
    seed: u64,
) -> Result<TaskDataset> {
    let preds = arch.forward(params, data.inputs())?;
    let mut r = rng::stream(seed, STREAM_FISHER_TARGETS);
    match (&arch.head, data.targets()) {
        (Head::GaussianRegression { noise_variance }, Targets::Regression(_)) => {
            let sd = noise_variance.sqrt();
            let targets: Vec<Vec<f64>> = preds
                .iter()
                .map(|mu| mu.iter().map(|m| m + sd * r.next_normal()).collect())
                .collect();
            TaskDataset::regression(data.inputs().to_vec(), targets)
        }
        (Head::Categorical, Targets::Classification(_)) => {
            let labels: Vec<usize> = preds
                .iter()
                .map(|p| {
                    let u = r.next_f64();
                    let mut cum = 0.0;
                    let mut chosen = p.len() - 1;
                    for (k, pk) in p.iter().enumerate() {
                        cum += pk;
                        if u < cum {
                            chosen = k;
                            break;
                        }
                    }
                    chosen
                })
                .collect();
            TaskDataset::classification(data.inputs().to_vec(), labels)
        }
        _ => Err(Error::InvalidArgument(
            "dataset target kind does not match the model head".into(),
        )),
    }
}

const STREAM_FISHER_TARGETS: u64 = 40;
