//! Deterministic synthetic task generators.
//!
//! Three families, all pure functions of their spec (and the previous task's
//! [`TaskContext`] when sequences share structure):
//!
//! - `diag_linear_gaussian`: one-hot inputs cycling over coordinates with
//!   Gaussian targets. The design matrix is diagonal, so a linear model's
//!   exact posterior is diagonal too and the oracle module can check
//!   consolidation against closed-form Bayes.
//! - `linear_gaussian`: dense Gaussian inputs, scalar targets from a sparse
//!   ground-truth weight vector.
//! - `permuted_features_classification`: a two-class Gaussian blob with a
//!   sign-alternating mean pattern, coordinates permuted per task, the
//!   standard way to
//!   manufacture task conflict for forgetting experiments.
//!
//! Gaussian target noise is sampled variance-exact: each group of residuals
//! is centered and rescaled so its empirical mean is exactly 0 and its
//! empirical second moment exactly matches `noise_variance`. Curvature
//! statistics computed from the data then equal their nominal values instead
//! of fluctuating with the draw, which keeps oracle comparisons sharp.
//! Groups with a single sample get residual 0.

use serde::{Deserialize, Serialize};

use crate::dataset::TaskDataset;
use crate::error::{Error, Result};
use crate::rng::{self, SplitMix64};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    DiagLinearGaussian,
    LinearGaussian,
    PermutedFeaturesClassification,
}

impl TaskKind {
    pub fn is_regression(self) -> bool {
        !matches!(self, TaskKind::PermutedFeaturesClassification)
    }
}

/// Everything needed to regenerate one task's dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskSpec {
    pub kind: TaskKind,
    pub n_samples: usize,
    pub input_dim: usize,
    pub seed: u64,
    /// Fraction of task structure shared with the previous task: informative
    /// coordinates for the Gaussian kinds, preserved permutation positions
    /// for the classification kind.
    pub overlap: f64,
    /// Target noise variance for the Gaussian kinds; input blob variance for
    /// the classification kind.
    pub noise_variance: f64,
    /// Amplitude of target means / true weights / blob separation.
    #[serde(default = "default_target_scale")]
    pub target_scale: f64,
}

fn default_target_scale() -> f64 {
    1.0
}

impl TaskSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_samples == 0 {
            return Err(Error::InvalidArgument("n_samples must be >= 1".into()));
        }
        if self.input_dim == 0 {
            return Err(Error::InvalidArgument("input_dim must be >= 1".into()));
        }
        if !(0.0..=1.0).contains(&self.overlap) || !self.overlap.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "overlap must lie in [0, 1] (got {})",
                self.overlap
            )));
        }
        if !self.noise_variance.is_finite() || self.noise_variance <= 0.0 {
            return Err(Error::InvalidArgument(format!(
                "noise_variance must be finite and positive (got {})",
                self.noise_variance
            )));
        }
        if !self.target_scale.is_finite() || self.target_scale < 0.0 {
            return Err(Error::InvalidArgument(format!(
                "target_scale must be finite and nonnegative (got {})",
                self.target_scale
            )));
        }
        Ok(())
    }
}

/// Structure a task hands to its successor so overlap has meaning.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskContext {
    pub kind: TaskKind,
    /// Coordinates with nonzero target means / weights (Gaussian kinds).
    pub informative: Vec<usize>,
    /// Per-coordinate target means (diag kind) or true weights (dense kind).
    pub target_means: Option<Vec<f64>>,
    /// Coordinate permutation (classification kind): feature at base
    /// position i appears at position permutation[i].
    pub permutation: Option<Vec<usize>>,
}

const STREAM_STRUCTURE: u64 = 10;
const STREAM_TARGETS: u64 = 11;
const STREAM_NOISE: u64 = 12;
const STREAM_INPUTS: u64 = 13;

/// Number of informative coordinates for the Gaussian kinds. Half the input
/// dimension (rounded down) so that zero overlap is always realizable.
fn informative_count(dim: usize) -> usize {
    (dim / 2).max(1)
}

fn derive_informative(
    dim: usize,
    overlap: f64,
    prev: Option<&[usize]>,
    r: &mut SplitMix64,
) -> Vec<usize> {
    let k = informative_count(dim);
    let mut chosen = match prev {
        None => {
            let mut all: Vec<usize> = (0..dim).collect();
            r.shuffle(&mut all);
            all.truncate(k);
            all
        }
        Some(prev) => {
            let keep = ((overlap * k as f64).round() as usize)
                .min(prev.len())
                .min(k);
            let mut old = prev.to_vec();
            r.shuffle(&mut old);
            old.truncate(keep);
            let mut pool: Vec<usize> = (0..dim).filter(|i| !prev.contains(i)).collect();
            r.shuffle(&mut pool);
            old.extend(pool.into_iter().take(k - keep));
            old
        }
    };
    debug_assert_eq!(chosen.len(), k);
    chosen.sort_unstable();
    chosen
}

fn derive_permutation(
    dim: usize,
    overlap: f64,
    prev: Option<&[usize]>,
    r: &mut SplitMix64,
) -> Vec<usize> {
    match prev {
        // The first task sees features in their base order.
        None => (0..dim).collect(),
        Some(prev) => {
            let keep = ((overlap * dim as f64).round() as usize).min(dim);
            let mut positions: Vec<usize> = (0..dim).collect();
            r.shuffle(&mut positions);
            let reshuffle = &positions[..dim - keep];
            let mut images: Vec<usize> = reshuffle.iter().map(|&i| prev[i]).collect();
            r.shuffle(&mut images);
            let mut out = prev.to_vec();
            for (&pos, img) in reshuffle.iter().zip(images) {
                out[pos] = img;
            }
            out
        }
    }
}

/// Centered, variance-exact residuals: sum 0, sum of squares count * sigma2.
fn normalized_noise(count: usize, sigma2: f64, r: &mut SplitMix64) -> Vec<f64> {
    if count == 0 {
        return Vec::new();
    }
    if count == 1 {
        return vec![0.0];
    }
    let raw: Vec<f64> = (0..count).map(|_| r.next_normal()).collect();
    let mean = raw.iter().sum::<f64>() / count as f64;
    let centered: Vec<f64> = raw.iter().map(|e| e - mean).collect();
    let ss: f64 = centered.iter().map(|e| e * e).sum();
    if ss <= 0.0 {
        // All draws identical cannot happen with a continuous stream, but a
        // zero vector is the only centered answer if it somehow does.
        return vec![0.0; count];
    }
    let scale = (count as f64 * sigma2 / ss).sqrt();
    centered.into_iter().map(|e| e * scale).collect()
}

/// Generates one task. `prev` carries the preceding task's structure so
/// `overlap` can tie consecutive tasks together; pass `None` for the first.
pub fn generate(spec: &TaskSpec, prev: Option<&TaskContext>) -> Result<(TaskDataset, TaskContext)> {
    spec.validate()?;
    if let Some(prev) = prev {
        if prev.kind != spec.kind {
            return Err(Error::InvalidArgument(format!(
                "task kind changed mid-sequence ({:?} after {:?})",
                spec.kind, prev.kind
            )));
        }
        let prev_dim = prev
            .permutation
            .as_ref()
            .map(|p| p.len())
            .or_else(|| prev.target_means.as_ref().map(|m| m.len()));
        if let Some(d) = prev_dim {
            if d != spec.input_dim {
                return Err(Error::DimensionMismatch {
                    context: "task sequence input_dim",
                    expected: d,
                    got: spec.input_dim,
                });
            }
        }
    }
    match spec.kind {
        TaskKind::DiagLinearGaussian => generate_diag(spec, prev),
        TaskKind::LinearGaussian => generate_dense(spec, prev),
        TaskKind::PermutedFeaturesClassification => generate_permuted(spec, prev),
    }
}

/// Generates a whole sequence, threading each task's context into the next.
pub fn generate_sequence(specs: &[TaskSpec]) -> Result<Vec<(TaskDataset, TaskContext)>> {
    if specs.is_empty() {
        return Err(Error::InvalidArgument("task sequence is empty".into()));
    }
    let mut out: Vec<(TaskDataset, TaskContext)> = Vec::with_capacity(specs.len());
    for spec in specs {
        let prev = out.last().map(|(_, ctx)| ctx);
        let next = generate(spec, prev)?;
        out.push(next);
    }
    Ok(out)
}

fn generate_diag(
    spec: &TaskSpec,
    prev: Option<&TaskContext>,
) -> Result<(TaskDataset, TaskContext)> {
    let d = spec.input_dim;
    let mut structure = rng::stream(spec.seed, STREAM_STRUCTURE);
    let informative = derive_informative(
        d,
        spec.overlap,
        prev.map(|c| c.informative.as_slice()),
        &mut structure,
    );

    let mut targets_rng = rng::stream(spec.seed, STREAM_TARGETS);
    let mut means = vec![0.0; d];
    for &i in &informative {
        means[i] = spec.target_scale * targets_rng.next_normal();
    }

    // One-hot inputs cycling over coordinates: example j observes j mod d.
    let mut inputs = Vec::with_capacity(spec.n_samples);
    for j in 0..spec.n_samples {
        let mut row = vec![0.0; d];
        row[j % d] = 1.0;
        inputs.push(row);
    }

    let mut noise_rng = rng::stream(spec.seed, STREAM_NOISE);
    let mut targets = vec![0.0; spec.n_samples];
    for (coord, mean) in means.iter().enumerate() {
        let members: Vec<usize> = (coord..spec.n_samples).step_by(d).collect();
        let eps = normalized_noise(members.len(), spec.noise_variance, &mut noise_rng);
        for (&j, e) in members.iter().zip(eps) {
            targets[j] = mean + e;
        }
    }

    let data = TaskDataset::regression(inputs, targets.into_iter().map(|y| vec![y]).collect())?;
    Ok((
        data,
        TaskContext {
            kind: spec.kind,
            informative,
            target_means: Some(means),
            permutation: None,
        },
    ))
}

fn generate_dense(
    spec: &TaskSpec,
    prev: Option<&TaskContext>,
) -> Result<(TaskDataset, TaskContext)> {
    let d = spec.input_dim;
    let mut structure = rng::stream(spec.seed, STREAM_STRUCTURE);
    let informative = derive_informative(
        d,
        spec.overlap,
        prev.map(|c| c.informative.as_slice()),
        &mut structure,
    );

    let mut targets_rng = rng::stream(spec.seed, STREAM_TARGETS);
    let mut weights = vec![0.0; d];
    for &i in &informative {
        weights[i] = spec.target_scale * targets_rng.next_normal();
    }

    let mut inputs_rng = rng::stream(spec.seed, STREAM_INPUTS);
    let inputs: Vec<Vec<f64>> = (0..spec.n_samples)
        .map(|_| (0..d).map(|_| inputs_rng.next_normal()).collect())
        .collect();

    let mut noise_rng = rng::stream(spec.seed, STREAM_NOISE);
    let eps = normalized_noise(spec.n_samples, spec.noise_variance, &mut noise_rng);
    let targets: Vec<Vec<f64>> = inputs
        .iter()
        .zip(eps)
        .map(|(x, e)| vec![x.iter().zip(&weights).map(|(xi, wi)| xi * wi).sum::<f64>() + e])
        .collect();

    let data = TaskDataset::regression(inputs, targets)?;
    Ok((
        data,
        TaskContext {
            kind: spec.kind,
            informative,
            target_means: Some(weights),
            permutation: None,
        },
    ))
}

fn generate_permuted(
    spec: &TaskSpec,
    prev: Option<&TaskContext>,
) -> Result<(TaskDataset, TaskContext)> {
    let d = spec.input_dim;
    let mut structure = rng::stream(spec.seed, STREAM_STRUCTURE);
    let prev_perm = prev.and_then(|c| c.permutation.as_deref());
    let permutation = derive_permutation(d, spec.overlap, prev_perm, &mut structure);

    // Base blob: the first half of the base coordinates carry the class
    // signal with alternating polarity (+scale, -scale, +scale, ... for
    // class 0; negated for class 1), the rest are pure noise. Alternating
    // signs keep the blob's coordinate sum at zero, so no single
    // permutation-invariant direction separates the classes and distinct
    // permutations genuinely conflict. The permutation then decides where
    // those informative features land for this task.
    let half = informative_count(d);
    let sigma = spec.noise_variance.sqrt();
    let mut noise_rng = rng::stream(spec.seed, STREAM_NOISE);
    let mut inputs = Vec::with_capacity(spec.n_samples);
    let mut labels = Vec::with_capacity(spec.n_samples);
    for j in 0..spec.n_samples {
        let class = j % 2;
        let sign = if class == 0 { 1.0 } else { -1.0 };
        let mut base = vec![0.0; d];
        for (i, b) in base.iter_mut().enumerate() {
            let polarity = if i % 2 == 0 { 1.0 } else { -1.0 };
            let center = if i < half {
                sign * polarity * spec.target_scale
            } else {
                0.0
            };
            *b = center + sigma * noise_rng.next_normal();
        }
        let mut row = vec![0.0; d];
        for (i, b) in base.into_iter().enumerate() {
            row[permutation[i]] = b;
        }
        inputs.push(row);
        labels.push(class);
    }

    let informative: Vec<usize> = {
        let mut v: Vec<usize> = (0..half).map(|i| permutation[i]).collect();
        v.sort_unstable();
        v
    };
    let data = TaskDataset::classification(inputs, labels)?;
    Ok((
        data,
        TaskContext {
            kind: spec.kind,
            informative,
            target_means: None,
            permutation: Some(permutation),
        },
    ))
}
