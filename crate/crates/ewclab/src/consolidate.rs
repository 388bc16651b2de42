//! Quadratic-penalty consolidation state and its algebra.
//!
//! Two interchangeable representations of the same Gaussian posterior
//! approximation over weights are maintained:
//!
//! - [`ConsolidatedPosterior`]: one penalty anchored at the latest optimum,
//!   precision lambda_prior * I + sum_t lambda_t * F_t. Storage is constant
//!   in the number of tasks. Training against it implements the recursive
//!   update in which each new task is learned against the whole accumulated
//!   precision centered at the previous solution.
//! - [`PenaltyBank`]: one quadratic per task plus a center-zero prior term.
//!   Storage grows linearly, but individual task terms can be inspected,
//!   used as per-task loss proxies, or dropped for a revisit.
//!
//! The bank built from biased centers (each task's own optimum, see
//! [`ewc_multi_penalty`]) is the classic multi-penalty baseline and does NOT
//! match the consolidated objective: re-centering every past penalty at each
//! past optimum effectively counts early data more than once. The bank with
//! debiased centers from [`debiased_center`] matches it exactly: for every
//! theta, gradient and value (up to an additive constant) of bank and
//! consolidated penalty agree, which is checked by tests and the verify
//! suite. Degenerate coordinates, where a task's penalty weight
//! lambda_T * F_{T,i} falls below [`DEGENERACY_FLOOR`], get weight exactly
//! zero and keep the anchor as center, so they contribute no gradient.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::params::{DiagPrecision, ParamVector};

/// Stable identifier for a task within one experiment.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TaskId(String);

impl TaskId {
    pub fn new(id: impl Into<String>) -> Self {
        Self(id.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl std::fmt::Display for TaskId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for TaskId {
    fn from(s: &str) -> Self {
        Self(s.to_string())
    }
}

/// Penalty weights: per-task multipliers and the prior precision.
/// Tasks absent from the map default to lambda_t = N_t, which makes
/// lambda_t * F_t the total-loss curvature scale.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hyperparams {
    pub lambda_prior: f64,
    #[serde(default)]
    pub lambda_per_task: std::collections::BTreeMap<TaskId, f64>,
}

impl Hyperparams {
    pub fn new(lambda_prior: f64) -> Self {
        Self {
            lambda_prior,
            lambda_per_task: Default::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !self.lambda_prior.is_finite() || self.lambda_prior < 0.0 {
            return Err(Error::InvalidArgument(format!(
                "lambda_prior must be finite and nonnegative (got {})",
                self.lambda_prior
            )));
        }
        for (id, l) in &self.lambda_per_task {
            if !l.is_finite() || *l <= 0.0 {
                return Err(Error::InvalidArgument(format!(
                    "lambda for task {id} must be finite and positive (got {l})"
                )));
            }
        }
        Ok(())
    }

    pub fn lambda_for(&self, task: &TaskId, n_samples: usize) -> f64 {
        self.lambda_per_task
            .get(task)
            .copied()
            .unwrap_or(n_samples as f64)
    }
}

/// One task's quadratic penalty 0.5 * sum_i q_i (theta_i - c_i)^2.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuadraticPenalty {
    pub task: TaskId,
    center: ParamVector,
    precision: DiagPrecision,
}

impl QuadraticPenalty {
    pub fn new(task: TaskId, center: ParamVector, precision: DiagPrecision) -> Result<Self> {
        if center.len() != precision.len() {
            return Err(Error::DimensionMismatch {
                context: "QuadraticPenalty",
                expected: center.len(),
                got: precision.len(),
            });
        }
        Ok(Self {
            task,
            center,
            precision,
        })
    }

    pub fn center(&self) -> &ParamVector {
        &self.center
    }

    pub fn precision(&self) -> &DiagPrecision {
        &self.precision
    }

    pub fn dim(&self) -> usize {
        self.center.len()
    }

    pub fn value(&self, theta: &ParamVector) -> Result<f64> {
        if theta.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                context: "penalty value",
                expected: self.dim(),
                got: theta.len(),
            });
        }
        let mut v = 0.0;
        for i in 0..self.dim() {
            let d = theta[i] - self.center[i];
            v += 0.5 * self.precision[i] * d * d;
        }
        Ok(v)
    }

    pub fn grad(&self, theta: &ParamVector) -> Result<ParamVector> {
        if theta.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                context: "penalty gradient",
                expected: self.dim(),
                got: theta.len(),
            });
        }
        let g: Vec<f64> = (0..self.dim())
            .map(|i| self.precision[i] * (theta[i] - self.center[i]))
            .collect();
        ParamVector::new(g)
    }
}

/// Per-task penalties plus a center-zero prior term with scalar precision.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PenaltyBank {
    penalties: Vec<QuadraticPenalty>,
    prior_precision: f64,
    dim: usize,
}

impl PenaltyBank {
    /// Bank holding only the prior term.
    pub fn prior_only(lambda_prior: f64, dim: usize) -> Result<Self> {
        if !lambda_prior.is_finite() || lambda_prior < 0.0 {
            return Err(Error::InvalidArgument(format!(
                "lambda_prior must be finite and nonnegative (got {lambda_prior})"
            )));
        }
        Ok(Self {
            penalties: Vec::new(),
            prior_precision: lambda_prior,
            dim,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn prior_precision(&self) -> f64 {
        self.prior_precision
    }

    pub fn penalties(&self) -> &[QuadraticPenalty] {
        &self.penalties
    }

    pub fn task_ids(&self) -> Vec<&TaskId> {
        self.penalties.iter().map(|p| &p.task).collect()
    }

    pub fn penalty(&self, task: &TaskId) -> Option<&QuadraticPenalty> {
        self.penalties.iter().find(|p| &p.task == task)
    }

    /// Appends a task's penalty. Task ids are unique within a bank.
    pub fn push(&mut self, penalty: QuadraticPenalty) -> Result<()> {
        if penalty.dim() != self.dim {
            return Err(Error::DimensionMismatch {
                context: "PenaltyBank::push",
                expected: self.dim,
                got: penalty.dim(),
            });
        }
        if self.penalty(&penalty.task).is_some() {
            return Err(Error::InconsistentState(format!(
                "task {} already has a penalty in the bank",
                penalty.task
            )));
        }
        self.penalties.push(penalty);
        Ok(())
    }

    /// Total penalty value: per-task terms plus 0.5 * lambda_prior * |theta|^2.
    pub fn value(&self, theta: &ParamVector) -> Result<f64> {
        if theta.len() != self.dim {
            return Err(Error::DimensionMismatch {
                context: "bank value",
                expected: self.dim,
                got: theta.len(),
            });
        }
        let mut v = 0.0;
        for p in &self.penalties {
            v += p.value(theta)?;
        }
        v += 0.5 * self.prior_precision * theta.as_slice().iter().map(|t| t * t).sum::<f64>();
        Ok(v)
    }

    pub fn grad(&self, theta: &ParamVector) -> Result<ParamVector> {
        if theta.len() != self.dim {
            return Err(Error::DimensionMismatch {
                context: "bank gradient",
                expected: self.dim,
                got: theta.len(),
            });
        }
        let mut g = vec![0.0; self.dim];
        for p in &self.penalties {
            for i in 0..self.dim {
                g[i] += p.precision()[i] * (theta[i] - p.center()[i]);
            }
        }
        for (gi, ti) in g.iter_mut().zip(theta.as_slice()) {
            *gi += self.prior_precision * ti;
        }
        ParamVector::new(g)
    }

    /// Total curvature: sum of per-task precisions plus the prior.
    pub fn precision_sum(&self) -> Result<DiagPrecision> {
        let mut total = DiagPrecision::constant(self.dim, self.prior_precision)?;
        for p in &self.penalties {
            total = total.add(p.precision())?;
        }
        Ok(total)
    }

    /// Copy of the bank without `task`'s penalty. The prior stays.
    pub fn drop_penalty(&self, task: &TaskId) -> Result<Self> {
        if self.penalty(task).is_none() {
            return Err(Error::UnknownTask(task.as_str().to_string()));
        }
        Ok(Self {
            penalties: self
                .penalties
                .iter()
                .filter(|p| &p.task != task)
                .cloned()
                .collect(),
            prior_precision: self.prior_precision,
            dim: self.dim,
        })
    }
}

/// Single-penalty approximation of the whole task history.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConsolidatedPosterior {
    anchor: ParamVector,
    precision: DiagPrecision,
    /// Consolidation order with the lambda each task entered with.
    task_log: Vec<(TaskId, f64)>,
}

impl ConsolidatedPosterior {
    /// Assembles a posterior from already-computed pieces. Needed when a
    /// task's contribution is rebuilt out of order (a revisit), where the
    /// precision comes from summing the remaining penalties rather than
    /// from a fresh consolidation chain.
    pub fn from_parts(
        anchor: ParamVector,
        precision: DiagPrecision,
        task_log: Vec<(TaskId, f64)>,
    ) -> Result<Self> {
        if anchor.len() != precision.len() {
            return Err(Error::DimensionMismatch {
                context: "ConsolidatedPosterior::from_parts",
                expected: anchor.len(),
                got: precision.len(),
            });
        }
        let mut seen = BTreeSet::new();
        for (id, lambda) in &task_log {
            if !seen.insert(id) {
                return Err(Error::InconsistentState(format!(
                    "task {id} appears twice in the task log"
                )));
            }
            if !lambda.is_finite() || *lambda <= 0.0 {
                return Err(Error::InvalidArgument(format!(
                    "lambda for task {id} must be finite and positive (got {lambda})"
                )));
            }
        }
        Ok(Self {
            anchor,
            precision,
            task_log,
        })
    }

    pub fn anchor(&self) -> &ParamVector {
        &self.anchor
    }

    pub fn precision(&self) -> &DiagPrecision {
        &self.precision
    }

    pub fn task_log(&self) -> &[(TaskId, f64)] {
        &self.task_log
    }

    pub fn dim(&self) -> usize {
        self.anchor.len()
    }

    /// 0.5 * (theta - anchor)' diag(precision) (theta - anchor).
    pub fn value(&self, theta: &ParamVector) -> Result<f64> {
        if theta.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                context: "consolidated value",
                expected: self.dim(),
                got: theta.len(),
            });
        }
        let mut v = 0.0;
        for i in 0..self.dim() {
            let d = theta[i] - self.anchor[i];
            v += 0.5 * self.precision[i] * d * d;
        }
        Ok(v)
    }

    pub fn grad(&self, theta: &ParamVector) -> Result<ParamVector> {
        if theta.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                context: "consolidated gradient",
                expected: self.dim(),
                got: theta.len(),
            });
        }
        let g: Vec<f64> = (0..self.dim())
            .map(|i| self.precision[i] * (theta[i] - self.anchor[i]))
            .collect();
        ParamVector::new(g)
    }
}

/// State before any task: anchor 0, precision lambda_prior * I.
pub fn init_posterior(hyper: &Hyperparams, dim: usize) -> Result<ConsolidatedPosterior> {
    hyper.validate()?;
    if dim == 0 {
        return Err(Error::InvalidArgument(
            "posterior dimension must be >= 1".into(),
        ));
    }
    Ok(ConsolidatedPosterior {
        anchor: ParamVector::zeros(dim),
        precision: DiagPrecision::constant(dim, hyper.lambda_prior)?,
        task_log: Vec::new(),
    })
}

/// Absorbs task `task` into the running posterior: the anchor moves to the
/// new optimum and lambda * F adds to the precision. Precision is
/// order-insensitive; the anchor is not.
pub fn consolidate_single(
    prev: &ConsolidatedPosterior,
    optimum: &ParamVector,
    fisher: &DiagPrecision,
    task: TaskId,
    lambda: f64,
) -> Result<ConsolidatedPosterior> {
    if optimum.len() != prev.dim() || fisher.len() != prev.dim() {
        return Err(Error::DimensionMismatch {
            context: "consolidate_single",
            expected: prev.dim(),
            got: if optimum.len() != prev.dim() {
                optimum.len()
            } else {
                fisher.len()
            },
        });
    }
    if !lambda.is_finite() || lambda <= 0.0 {
        return Err(Error::InvalidArgument(format!(
            "lambda must be finite and positive (got {lambda})"
        )));
    }
    if prev.task_log.iter().any(|(id, _)| id == &task) {
        return Err(Error::InconsistentState(format!(
            "task {task} was already consolidated; revisit it through a penalty bank instead"
        )));
    }
    let mut task_log = prev.task_log.clone();
    task_log.push((task, lambda));
    Ok(ConsolidatedPosterior {
        anchor: optimum.clone(),
        precision: prev.precision.add(&fisher.scaled(lambda)?)?,
        task_log,
    })
}

/// One task's contribution as recorded while a sequence runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskPosteriorRecord {
    pub task: TaskId,
    pub optimum: ParamVector,
    pub fisher: DiagPrecision,
    pub lambda: f64,
}

/// Classic multi-penalty baseline: one quadratic per past task, centered at
/// that task's own optimum with precision lambda_t * F_t, plus the prior.
/// Later training against this bank pulls toward every past optimum
/// separately, which overweights early tasks relative to the consolidated
/// objective (their data also shaped every later optimum used as a center).
pub fn ewc_multi_penalty(
    history: &[TaskPosteriorRecord],
    lambda_prior: f64,
) -> Result<PenaltyBank> {
    let first = history
        .first()
        .ok_or_else(|| Error::InvalidArgument("ewc_multi_penalty over empty history".into()))?;
    let mut bank = PenaltyBank::prior_only(lambda_prior, first.optimum.len())?;
    for rec in history {
        if !rec.lambda.is_finite() || rec.lambda <= 0.0 {
            return Err(Error::InvalidArgument(format!(
                "lambda for task {} must be finite and positive (got {})",
                rec.task, rec.lambda
            )));
        }
        let weighted = rec
            .fisher
            .scaled(rec.lambda)?
            .clamped_below(DEGENERACY_FLOOR);
        bank.push(QuadraticPenalty::new(
            rec.task.clone(),
            rec.optimum.clone(),
            weighted,
        )?)?;
    }
    Ok(bank)
}

/// Coordinates whose penalty weight lambda * F_i falls below this floor are
/// treated as carrying no information from the task: weight becomes exactly
/// zero and the center falls back to the consolidated anchor.
pub const DEGENERACY_FLOOR: f64 = 1e-12;

/// Which divisor converts the matched linear term into a center.
/// `Weighted` is the correct form (the penalty's own weight lambda * F_i);
/// `Unweighted` divides by F_i alone and exists solely so the verify suite
/// can demonstrate that the identity breaks whenever lambda != 1.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CenterDenominator {
    Weighted,
    Unweighted,
}

/// Center for task `task`'s individual penalty such that the bank
/// (prev_bank + this penalty) reproduces the consolidated single penalty
/// exactly: equal gradients everywhere and equal values up to a constant.
///
/// `consolidated` must already include the task (its precision contains
/// lambda * F on top of everything in `prev_bank`). Matching the linear
/// terms of the two quadratics gives, per coordinate,
///
///   center_i = (P_i * opt_i - sum_t q_{t,i} * c_{t,i}) / (lambda * F_i)
///
/// with P the consolidated precision and the sum over penalties already in
/// the bank (the prior's center is zero and contributes nothing).
pub fn debiased_center(
    prev_bank: &PenaltyBank,
    consolidated: &ConsolidatedPosterior,
    optimum: &ParamVector,
    fisher: &DiagPrecision,
    task: &TaskId,
    lambda: f64,
) -> Result<QuadraticPenalty> {
    debiased_center_with(
        prev_bank,
        consolidated,
        optimum,
        fisher,
        task,
        lambda,
        CenterDenominator::Weighted,
    )
}

/// [`debiased_center`] with an explicit denominator choice; see
/// [`CenterDenominator`].
#[allow(clippy::too_many_arguments)]
pub fn debiased_center_with(
    prev_bank: &PenaltyBank,
    consolidated: &ConsolidatedPosterior,
    optimum: &ParamVector,
    fisher: &DiagPrecision,
    task: &TaskId,
    lambda: f64,
    denominator: CenterDenominator,
) -> Result<QuadraticPenalty> {
    let dim = consolidated.dim();
    if prev_bank.dim() != dim || optimum.len() != dim || fisher.len() != dim {
        return Err(Error::DimensionMismatch {
            context: "debiased_center",
            expected: dim,
            got: prev_bank.dim(),
        });
    }
    if !lambda.is_finite() || lambda <= 0.0 {
        return Err(Error::InvalidArgument(format!(
            "lambda must be finite and positive (got {lambda})"
        )));
    }

    // The bank plus this task must describe the same history the
    // consolidated state logged.
    let mut expected: BTreeSet<&TaskId> = prev_bank.task_ids().into_iter().collect();
    if !expected.insert(task) {
        return Err(Error::InconsistentState(format!(
            "task {task} already has a penalty in the bank"
        )));
    }
    let logged: BTreeSet<&TaskId> = consolidated.task_log.iter().map(|(id, _)| id).collect();
    if expected != logged {
        return Err(Error::InconsistentState(format!(
            "bank tasks + {task} do not match the consolidated task log"
        )));
    }

    let mut linear = vec![0.0; dim];
    for p in prev_bank.penalties() {
        for (l, (q, c)) in linear
            .iter_mut()
            .zip(p.precision().as_slice().iter().zip(p.center().as_slice()))
        {
            *l += q * c;
        }
    }

    let mut center = Vec::with_capacity(dim);
    let mut weight = Vec::with_capacity(dim);
    let mut degenerate = 0usize;
    for i in 0..dim {
        let q = lambda * fisher[i];
        if q < DEGENERACY_FLOOR {
            center.push(optimum[i]);
            weight.push(0.0);
            degenerate += 1;
            continue;
        }
        let den = match denominator {
            CenterDenominator::Weighted => q,
            CenterDenominator::Unweighted => fisher[i],
        };
        center.push((consolidated.precision[i] * optimum[i] - linear[i]) / den);
        weight.push(q);
    }
    if degenerate > 0 {
        log::debug!(
            "debiased_center: task {task} has {degenerate} degenerate coordinate(s), \
             centers fall back to the anchor there"
        );
    }
    QuadraticPenalty::new(
        task.clone(),
        ParamVector::new(center)?,
        DiagPrecision::new(weight)?,
    )
}

/// Splits a consolidated posterior into a bank given per-task records with
/// already-debiased centers. Validates that the records actually add up to
/// the consolidated precision before building anything.
pub fn decompose(
    consolidated: &ConsolidatedPosterior,
    records: &[PenaltyRecord],
    lambda_prior: f64,
) -> Result<PenaltyBank> {
    let dim = consolidated.dim();
    let expected: BTreeSet<&TaskId> = records.iter().map(|r| &r.task).collect();
    if expected.len() != records.len() {
        return Err(Error::InconsistentState(
            "duplicate task ids in decomposition records".into(),
        ));
    }
    let logged: BTreeSet<&TaskId> = consolidated.task_log.iter().map(|(id, _)| id).collect();
    if expected != logged {
        return Err(Error::InconsistentState(
            "decomposition records do not cover the consolidated task log".into(),
        ));
    }

    let mut total = vec![lambda_prior; dim];
    for rec in records {
        if rec.fisher.len() != dim || rec.center.len() != dim {
            return Err(Error::DimensionMismatch {
                context: "decompose",
                expected: dim,
                got: rec.fisher.len(),
            });
        }
        for (t, f) in total.iter_mut().zip(rec.fisher.as_slice()) {
            *t += rec.lambda * f;
        }
    }
    for (i, (t, p)) in total
        .iter()
        .zip(consolidated.precision.as_slice())
        .enumerate()
    {
        if (t - p).abs() > DECOMPOSE_PRECISION_TOL {
            return Err(Error::InconsistentState(format!(
                "precision mismatch at coordinate {i}: records give {t}, state has {p}"
            )));
        }
    }

    let mut bank = PenaltyBank::prior_only(lambda_prior, dim)?;
    for rec in records {
        bank.push(QuadraticPenalty::new(
            rec.task.clone(),
            rec.center.clone(),
            rec.fisher
                .scaled(rec.lambda)?
                .clamped_below(DEGENERACY_FLOOR),
        )?)?;
    }
    Ok(bank)
}

/// Agreement required between summed per-task precisions and the
/// consolidated precision when decomposing.
pub const DECOMPOSE_PRECISION_TOL: f64 = 1e-10;

/// A task's share of a decomposition: Fisher, weight, and debiased center.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PenaltyRecord {
    pub task: TaskId,
    pub center: ParamVector,
    pub fisher: DiagPrecision,
    pub lambda: f64,
}

/// Value of one task's penalty at `theta`, used as a cheap stand-in for that
/// task's true loss when its data is gone. Exact for quadratic losses with
/// debiased centers, up to an additive constant.
pub fn per_task_loss_proxy(bank: &PenaltyBank, task: &TaskId, theta: &ParamVector) -> Result<f64> {
    bank.penalty(task)
        .ok_or_else(|| Error::UnknownTask(task.as_str().to_string()))?
        .value(theta)
}

// Serialization envelopes. The normalized byte forms exist to measure state
// size: fixed-width little-endian floats, so byte length depends only on the
// shape of the state, never on which digits a value happens to need.

pub const STATE_SCHEMA_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SavedPosterior {
    schema_version: u32,
    kind: String,
    anchor: ParamVector,
    precision: DiagPrecision,
    task_log: Vec<(TaskId, f64)>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SavedBank {
    schema_version: u32,
    kind: String,
    prior_precision: f64,
    dim: usize,
    penalties: Vec<QuadraticPenalty>,
}

impl ConsolidatedPosterior {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&SavedPosterior {
            schema_version: STATE_SCHEMA_VERSION,
            kind: "consolidated_posterior".into(),
            anchor: self.anchor.clone(),
            precision: self.precision.clone(),
            task_log: self.task_log.clone(),
        })?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let saved: SavedPosterior = serde_json::from_str(text)?;
        if saved.schema_version != STATE_SCHEMA_VERSION {
            return Err(Error::InvalidArgument(format!(
                "unsupported state schema_version {}",
                saved.schema_version
            )));
        }
        if saved.anchor.len() != saved.precision.len() {
            return Err(Error::DimensionMismatch {
                context: "saved posterior",
                expected: saved.anchor.len(),
                got: saved.precision.len(),
            });
        }
        Ok(Self {
            anchor: saved.anchor,
            precision: saved.precision,
            task_log: saved.task_log,
        })
    }

    /// Fixed-width encoding of the algorithmic state (anchor + precision).
    /// Its length is 12 + 16 * dim regardless of how many tasks have been
    /// consolidated, which is the storage property the recursion claims.
    /// The task log is audit metadata and intentionally not part of this.
    pub fn normalized_state_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(12 + 16 * self.dim());
        out.extend_from_slice(&STATE_SCHEMA_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.dim() as u64).to_le_bytes());
        for v in self.anchor.as_slice() {
            out.extend_from_slice(&v.to_le_bytes());
        }
        for v in self.precision.as_slice() {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }
}

impl PenaltyBank {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&SavedBank {
            schema_version: STATE_SCHEMA_VERSION,
            kind: "penalty_bank".into(),
            prior_precision: self.prior_precision,
            dim: self.dim,
            penalties: self.penalties.clone(),
        })?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let saved: SavedBank = serde_json::from_str(text)?;
        if saved.schema_version != STATE_SCHEMA_VERSION {
            return Err(Error::InvalidArgument(format!(
                "unsupported state schema_version {}",
                saved.schema_version
            )));
        }
        let mut bank = PenaltyBank::prior_only(saved.prior_precision, saved.dim)?;
        for p in saved.penalties {
            bank.push(p)?;
        }
        Ok(bank)
    }

    /// Fixed-width encoding of the bank: grows by 8 + id-length + 16 * dim
    /// bytes per stored task.
    pub fn normalized_state_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(&STATE_SCHEMA_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.dim as u64).to_le_bytes());
        out.extend_from_slice(&self.prior_precision.to_le_bytes());
        out.extend_from_slice(&(self.penalties.len() as u64).to_le_bytes());
        for p in &self.penalties {
            let id = p.task.as_str().as_bytes();
            out.extend_from_slice(&(id.len() as u64).to_le_bytes());
            out.extend_from_slice(id);
            for v in p.center().as_slice() {
                out.extend_from_slice(&v.to_le_bytes());
            }
            for v in p.precision().as_slice() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }
}
