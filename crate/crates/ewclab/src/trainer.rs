//! Penalized training and full sequential experiments.
//!
//! [`train_task`] minimizes data NLL plus a quadratic penalty with plain or
//! momentum gradient descent, full batch by default. [`SequenceRun`] drives
//! a whole task sequence under one [`Strategy`], recording after every stage
//! the true loss of each seen task, penalty proxies, distances to the exact
//! conjugate posterior (when the tasks admit one), and the byte size of the
//! strategy's penalty state.
//!
//! Strategy semantics:
//! - `naive`: no penalty at all, the plain sequential baseline.
//! - `ewc_multi`: one penalty per past task anchored at that task's own
//!   optimum (the classic formulation; overweights early data).
//! - `laplace_single`: a single consolidated penalty, constant storage.
//! - `laplace_multi_debiased`: a penalty bank whose centers are chosen so
//!   the bank reproduces the consolidated objective exactly; supports
//!   [`SequenceRun::revisit`].
//! - `joint`: retrains on the concatenation of all data seen so far, the
//!   upper-bound reference.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::consolidate::{
    consolidate_single, debiased_center, ewc_multi_penalty, init_posterior, ConsolidatedPosterior,
    Hyperparams, PenaltyBank, TaskId, TaskPosteriorRecord,
};
use crate::dataset::TaskDataset;
use crate::error::{Error, Result};
use crate::fisher::{empirical_fisher_diag, FisherMode};
use crate::net::{Architecture, Head};
use crate::oracle::exact_sequential_posterior;
use crate::params::ParamVector;
use crate::report::{RunReport, REPORT_SCHEMA_VERSION};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    GradientDescent,
    GradientDescentMomentum,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimizerConfig {
    pub method: Method,
    pub learning_rate: f64,
    #[serde(default)]
    pub momentum: f64,
    pub max_steps: usize,
    /// Stop when the penalized objective's gradient infinity norm falls
    /// below this.
    pub grad_tol: f64,
    /// Seeds minibatch shuffling only; full-batch runs ignore it.
    #[serde(default)]
    pub seed: u64,
    /// `None` trains full batch. Oracle-equality comparisons assume full
    /// batch.
    #[serde(default)]
    pub batch_size: Option<usize>,
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<()> {
        if !self.learning_rate.is_finite() || self.learning_rate <= 0.0 {
            return Err(Error::InvalidConfig(format!(
                "optimizer.learning_rate must be finite and positive (got {})",
                self.learning_rate
            )));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::InvalidConfig(format!(
                "optimizer.momentum must lie in [0, 1) (got {})",
                self.momentum
            )));
        }
        if self.max_steps == 0 {
            return Err(Error::InvalidConfig(
                "optimizer.max_steps must be >= 1".into(),
            ));
        }
        if !self.grad_tol.is_finite() || self.grad_tol <= 0.0 {
            return Err(Error::InvalidConfig(format!(
                "optimizer.grad_tol must be finite and positive (got {})",
                self.grad_tol
            )));
        }
        if self.batch_size == Some(0) {
            return Err(Error::InvalidConfig(
                "optimizer.batch_size must be >= 1".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    Naive,
    EwcMulti,
    LaplaceSingle,
    LaplaceMultiDebiased,
    Joint,
}

impl Strategy {
    pub fn all() -> [Strategy; 5] {
        [
            Strategy::Naive,
            Strategy::EwcMulti,
            Strategy::LaplaceSingle,
            Strategy::LaplaceMultiDebiased,
            Strategy::Joint,
        ]
    }

    pub fn name(self) -> &'static str {
        match self {
            Strategy::Naive => "naive",
            Strategy::EwcMulti => "ewc_multi",
            Strategy::LaplaceSingle => "laplace_single",
            Strategy::LaplaceMultiDebiased => "laplace_multi_debiased",
            Strategy::Joint => "joint",
        }
    }
}

impl std::fmt::Display for Strategy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// The quadratic term added to a task's data NLL during training.
#[derive(Debug, Clone, Copy)]
pub enum PenaltyTerm<'a> {
    None,
    Consolidated(&'a ConsolidatedPosterior),
    Bank(&'a PenaltyBank),
}

impl PenaltyTerm<'_> {
    pub fn value(&self, theta: &ParamVector) -> Result<f64> {
        match self {
            PenaltyTerm::None => Ok(0.0),
            PenaltyTerm::Consolidated(c) => c.value(theta),
            PenaltyTerm::Bank(b) => b.value(theta),
        }
    }

    fn add_grad(&self, theta: &ParamVector, out: &mut [f64]) -> Result<()> {
        let g = match self {
            PenaltyTerm::None => return Ok(()),
            PenaltyTerm::Consolidated(c) => c.grad(theta)?,
            PenaltyTerm::Bank(b) => b.grad(theta)?,
        };
        for (o, gi) in out.iter_mut().zip(g.as_slice()) {
            *o += gi;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub params: ParamVector,
    pub converged: bool,
    pub steps: usize,
    pub final_grad_inf_norm: f64,
}

/// Minimizes `NLL(theta; data) + penalty(theta)` starting from `init`.
/// Returns the last iterate with a convergence flag; a non-finite objective
/// is an error naming the step where it appeared.
pub fn train_task(
    arch: &Architecture,
    data: &TaskDataset,
    init: &ParamVector,
    penalty: &PenaltyTerm,
    opt: &OptimizerConfig,
) -> Result<TrainOutcome> {
    train_task_traced(arch, data, init, penalty, opt, None)
}

/// [`train_task`] that can also record the objective value at every full
/// gradient evaluation (each step when full batch, each epoch otherwise).
pub fn train_task_traced(
    arch: &Architecture,
    data: &TaskDataset,
    init: &ParamVector,
    penalty: &PenaltyTerm,
    opt: &OptimizerConfig,
    trace: Option<&mut Vec<f64>>,
) -> Result<TrainOutcome> {
    opt.validate()?;
    arch.validate()?;
    arch.check_targets(data)?;
    if init.len() != arch.param_count() {
        return Err(Error::DimensionMismatch {
            context: "train_task init",
            expected: arch.param_count(),
            got: init.len(),
        });
    }
    match opt.batch_size {
        Some(b) if b < data.len() => minibatch_loop(arch, data, init, penalty, opt, b, trace),
        _ => full_batch_loop(arch, data, init, penalty, opt, trace),
    }
}

/// Objective and full gradient at `theta`, with divergence mapped to a
/// step-stamped error.
fn eval_full(
    arch: &Architecture,
    data: &TaskDataset,
    penalty: &PenaltyTerm,
    theta: &ParamVector,
    step: usize,
) -> Result<(f64, ParamVector)> {
    let diverged = |what: &str| Error::Diverged {
        step,
        reason: what.to_string(),
    };
    let nll = arch.neg_log_likelihood(theta, data).map_err(|e| match e {
        Error::NonFinite { .. } => diverged("data loss became non-finite"),
        other => other,
    })?;
    let obj = nll + penalty.value(theta)?;
    if !obj.is_finite() {
        return Err(diverged("penalized objective became non-finite"));
    }
    let mut g = arch.grad_nll(theta, data).map_err(|e| match e {
        Error::NonFinite { .. } => diverged("gradient became non-finite"),
        other => other,
    })?;
    penalty.add_grad(theta, g.as_mut_slice())?;
    if g.as_slice().iter().any(|v| !v.is_finite()) {
        return Err(diverged("gradient became non-finite"));
    }
    Ok((obj, g))
}

fn apply_update(
    theta: &mut ParamVector,
    velocity: &mut [f64],
    grad: &[f64],
    opt: &OptimizerConfig,
) {
    match opt.method {
        Method::GradientDescent => {
            for (t, g) in theta.as_mut_slice().iter_mut().zip(grad) {
                *t -= opt.learning_rate * g;
            }
        }
        Method::GradientDescentMomentum => {
            for ((t, v), g) in theta.as_mut_slice().iter_mut().zip(velocity).zip(grad) {
                *v = opt.momentum * *v + g;
                *t -= opt.learning_rate * *v;
            }
        }
    }
}

fn full_batch_loop(
    arch: &Architecture,
    data: &TaskDataset,
    init: &ParamVector,
    penalty: &PenaltyTerm,
    opt: &OptimizerConfig,
    mut trace: Option<&mut Vec<f64>>,
) -> Result<TrainOutcome> {
    let mut theta = init.clone();
    let mut velocity = vec![0.0; theta.len()];
    for step in 0..=opt.max_steps {
        let (obj, grad) = eval_full(arch, data, penalty, &theta, step)?;
        if let Some(t) = trace.as_deref_mut() {
            t.push(obj);
        }
        let gn = grad.inf_norm();
        if gn < opt.grad_tol {
            return Ok(TrainOutcome {
                params: theta,
                converged: true,
                steps: step,
                final_grad_inf_norm: gn,
            });
        }
        if step == opt.max_steps {
            return Ok(TrainOutcome {
                params: theta,
                converged: false,
                steps: step,
                final_grad_inf_norm: gn,
            });
        }
        apply_update(&mut theta, &mut velocity, grad.as_slice(), opt);
    }
    unreachable!("loop exits by return");
}

const STREAM_SHUFFLE: u64 = 20;

fn minibatch_loop(
    arch: &Architecture,
    data: &TaskDataset,
    init: &ParamVector,
    penalty: &PenaltyTerm,
    opt: &OptimizerConfig,
    batch: usize,
    mut trace: Option<&mut Vec<f64>>,
) -> Result<TrainOutcome> {
    let n = data.len();
    let scale = n as f64;
    let mut shuffle_rng = rng::stream(opt.seed, STREAM_SHUFFLE);
    let mut theta = init.clone();
    let mut velocity = vec![0.0; theta.len()];
    let mut steps = 0usize;
    loop {
        // Convergence and divergence are judged on the full objective once
        // per epoch; minibatch gradients are too noisy to stop on.
        let (obj, grad) = eval_full(arch, data, penalty, &theta, steps)?;
        if let Some(t) = trace.as_deref_mut() {
            t.push(obj);
        }
        let gn = grad.inf_norm();
        if gn < opt.grad_tol || steps >= opt.max_steps {
            return Ok(TrainOutcome {
                params: theta,
                converged: gn < opt.grad_tol,
                steps,
                final_grad_inf_norm: gn,
            });
        }

        let mut order: Vec<usize> = (0..n).collect();
        shuffle_rng.shuffle(&mut order);
        for chunk in order.chunks(batch) {
            if steps >= opt.max_steps {
                break;
            }
            let part = data.subset(chunk)?;
            // Chunk mean gradient scaled to full-dataset totals so the
            // penalty keeps its weight relative to the data term.
            let mut g = arch.grad_nll(&theta, &part).map_err(|e| match e {
                Error::NonFinite { .. } => Error::Diverged {
                    step: steps,
                    reason: "minibatch gradient became non-finite".into(),
                },
                other => other,
            })?;
            let factor = scale / part.len() as f64;
            for v in g.as_mut_slice() {
                *v *= factor;
            }
            penalty.add_grad(&theta, g.as_mut_slice())?;
            apply_update(&mut theta, &mut velocity, g.as_slice(), opt);
            steps += 1;
        }
    }
}

/// Everything fixed before a sequence starts.
#[derive(Debug, Clone)]
pub struct SequenceSetup {
    pub architecture: Architecture,
    /// Seeds the first stage's parameter initialization; later stages start
    /// from the previous optimum.
    pub init_seed: u64,
    pub strategy: Strategy,
    pub hyper: Hyperparams,
    pub optimizer: OptimizerConfig,
    pub fisher_mode: FisherMode,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageOutcome {
    pub label: String,
    pub task: TaskId,
    pub converged: bool,
    pub steps: usize,
    pub final_grad_inf_norm: f64,
}

/// A sequential experiment in progress: owns the datasets, the current
/// parameters, and whatever penalty state the strategy maintains.
#[derive(Debug, Clone)]
pub struct SequenceRun {
    setup: SequenceSetup,
    tasks: Vec<(TaskId, TaskDataset)>,
    params: ParamVector,
    next_task: usize,
    consolidated: Option<ConsolidatedPosterior>,
    bank: Option<PenaltyBank>,
    records: Vec<TaskPosteriorRecord>,
    prior_only: ConsolidatedPosterior,
    stages: Vec<StageOutcome>,
    loss: Vec<Vec<Option<f64>>>,
    proxy: Vec<Vec<Option<f64>>>,
    oracle_mean_distance: Vec<Option<f64>>,
    oracle_precision_distance: Vec<Option<f64>>,
    state_bytes: Vec<usize>,
    stage_params: Vec<ParamVector>,
    wall_ms: Vec<f64>,
}

impl SequenceRun {
    pub fn new(setup: SequenceSetup, tasks: Vec<(TaskId, TaskDataset)>) -> Result<Self> {
        setup.architecture.validate()?;
        setup.hyper.validate()?;
        setup.optimizer.validate()?;
        if tasks.is_empty() {
            return Err(Error::InvalidArgument("task sequence is empty".into()));
        }
        for (i, (id, data)) in tasks.iter().enumerate() {
            if data.input_dim() != setup.architecture.input_dim() {
                return Err(Error::DimensionMismatch {
                    context: "task input width vs model",
                    expected: setup.architecture.input_dim(),
                    got: data.input_dim(),
                });
            }
            setup.architecture.check_targets(data)?;
            if tasks[..i].iter().any(|(other, _)| other == id) {
                return Err(Error::InvalidArgument(format!(
                    "duplicate task id {id} in sequence"
                )));
            }
        }
        let dim = setup.architecture.param_count();
        let params = setup.architecture.init_params(setup.init_seed)?;
        let prior_only = init_posterior(&setup.hyper, dim)?;
        let lambda_prior = setup.hyper.lambda_prior;
        let n_tasks = tasks.len();
        let (consolidated, bank) = match setup.strategy {
            Strategy::Naive | Strategy::Joint => (None, None),
            Strategy::EwcMulti => (None, Some(PenaltyBank::prior_only(lambda_prior, dim)?)),
            Strategy::LaplaceSingle => (Some(prior_only.clone()), None),
            Strategy::LaplaceMultiDebiased => (
                Some(prior_only.clone()),
                Some(PenaltyBank::prior_only(lambda_prior, dim)?),
            ),
        };
        Ok(Self {
            setup,
            tasks,
            params,
            next_task: 0,
            consolidated,
            bank,
            records: Vec::new(),
            prior_only,
            stages: Vec::new(),
            loss: vec![Vec::new(); n_tasks],
            proxy: vec![Vec::new(); n_tasks],
            oracle_mean_distance: Vec::new(),
            oracle_precision_distance: Vec::new(),
            state_bytes: Vec::new(),
            stage_params: Vec::new(),
            wall_ms: Vec::new(),
        })
    }

    pub fn params(&self) -> &ParamVector {
        &self.params
    }

    pub fn consolidated(&self) -> Option<&ConsolidatedPosterior> {
        self.consolidated.as_ref()
    }

    pub fn bank(&self) -> Option<&PenaltyBank> {
        self.bank.as_ref()
    }

    pub fn records(&self) -> &[TaskPosteriorRecord] {
        &self.records
    }

    pub fn stages(&self) -> &[StageOutcome] {
        &self.stages
    }

    pub fn tasks(&self) -> &[(TaskId, TaskDataset)] {
        &self.tasks
    }

    pub fn stages_remaining(&self) -> usize {
        self.tasks.len() - self.next_task
    }

    /// Trains the next unseen task and folds it into the strategy state.
    pub fn step_stage(&mut self) -> Result<()> {
        if self.next_task >= self.tasks.len() {
            return Err(Error::InconsistentState(
                "all tasks already trained; use revisit to refine".into(),
            ));
        }
        let t = self.next_task;
        let started = Instant::now();
        let (id, _) = self.tasks[t].clone();
        let lambda = self.setup.hyper.lambda_for(&id, self.tasks[t].1.len());

        // Train against the strategy's current penalty.
        let joint_data;
        let ewc_bank;
        let (data_ref, penalty): (&TaskDataset, PenaltyTerm) = match self.setup.strategy {
            Strategy::Naive => (&self.tasks[t].1, PenaltyTerm::None),
            Strategy::Joint => {
                let parts: Vec<&TaskDataset> = self.tasks[..=t].iter().map(|(_, d)| d).collect();
                joint_data = TaskDataset::concat(&parts)?;
                (&joint_data, PenaltyTerm::Consolidated(&self.prior_only))
            }
            Strategy::EwcMulti => {
                ewc_bank = if self.records.is_empty() {
                    PenaltyBank::prior_only(self.setup.hyper.lambda_prior, self.params.len())?
                } else {
                    ewc_multi_penalty(&self.records, self.setup.hyper.lambda_prior)?
                };
                (&self.tasks[t].1, PenaltyTerm::Bank(&ewc_bank))
            }
            Strategy::LaplaceSingle => (
                &self.tasks[t].1,
                PenaltyTerm::Consolidated(self.consolidated.as_ref().expect("state")),
            ),
            Strategy::LaplaceMultiDebiased => (
                &self.tasks[t].1,
                PenaltyTerm::Bank(self.bank.as_ref().expect("state")),
            ),
        };
        let outcome = train_task(
            &self.setup.architecture,
            data_ref,
            &self.params,
            &penalty,
            &self.setup.optimizer,
        )?;
        self.params = outcome.params.clone();

        // Fold the task into the penalty state.
        match self.setup.strategy {
            Strategy::Naive | Strategy::Joint => {}
            Strategy::EwcMulti => {
                let fisher = empirical_fisher_diag(
                    &self.setup.architecture,
                    &self.params,
                    &self.tasks[t].1,
                    self.setup.fisher_mode,
                )?;
                self.records.push(TaskPosteriorRecord {
                    task: id.clone(),
                    optimum: self.params.clone(),
                    fisher,
                    lambda,
                });
                self.bank = Some(ewc_multi_penalty(
                    &self.records,
                    self.setup.hyper.lambda_prior,
                )?);
            }
            Strategy::LaplaceSingle => {
                let fisher = empirical_fisher_diag(
                    &self.setup.architecture,
                    &self.params,
                    &self.tasks[t].1,
                    self.setup.fisher_mode,
                )?;
                let prev = self.consolidated.take().expect("state");
                self.consolidated = Some(consolidate_single(
                    &prev,
                    &self.params,
                    &fisher,
                    id.clone(),
                    lambda,
                )?);
            }
            Strategy::LaplaceMultiDebiased => {
                let fisher = empirical_fisher_diag(
                    &self.setup.architecture,
                    &self.params,
                    &self.tasks[t].1,
                    self.setup.fisher_mode,
                )?;
                let prev = self.consolidated.take().expect("state");
                let next = consolidate_single(&prev, &self.params, &fisher, id.clone(), lambda)?;
                let bank = self.bank.as_mut().expect("state");
                let pen = debiased_center(bank, &next, &self.params, &fisher, &id, lambda)?;
                bank.push(pen)?;
                self.records.push(TaskPosteriorRecord {
                    task: id.clone(),
                    optimum: self.params.clone(),
                    fisher,
                    lambda,
                });
                self.consolidated = Some(next);
            }
        }

        self.next_task += 1;
        self.finish_stage(id.as_str().to_string(), id, outcome, t, started)
    }

    /// Refines one task's penalty against everything learned since:
    /// drops its penalty, retrains on its data under the remaining ones,
    /// recomputes Fisher and debiased center, reinserts.
    pub fn revisit(&mut self, task: &TaskId) -> Result<()> {
        if self.setup.strategy != Strategy::LaplaceMultiDebiased {
            return Err(Error::Unsupported(format!(
                "revisit requires the laplace_multi_debiased strategy (run uses {})",
                self.setup.strategy
            )));
        }
        if self.next_task < self.tasks.len() {
            return Err(Error::InconsistentState(
                "cannot revisit before the initial sequence finishes".into(),
            ));
        }
        let t = self
            .tasks
            .iter()
            .position(|(id, _)| id == task)
            .ok_or_else(|| Error::UnknownTask(task.as_str().to_string()))?;
        let started = Instant::now();
        let id = task.clone();
        let data = &self.tasks[t].1;
        let lambda = self.setup.hyper.lambda_for(&id, data.len());

        let bank_minus = self.bank.as_ref().expect("state").drop_penalty(&id)?;
        let outcome = train_task(
            &self.setup.architecture,
            data,
            &self.params,
            &PenaltyTerm::Bank(&bank_minus),
            &self.setup.optimizer,
        )?;
        self.params = outcome.params.clone();

        let fisher = empirical_fisher_diag(
            &self.setup.architecture,
            &self.params,
            data,
            self.setup.fisher_mode,
        )?;
        let old = self.consolidated.take().expect("state");
        let mut task_log: Vec<(TaskId, f64)> = old
            .task_log()
            .iter()
            .filter(|(other, _)| other != &id)
            .cloned()
            .collect();
        task_log.push((id.clone(), lambda));
        let precision = bank_minus.precision_sum()?.add(&fisher.scaled(lambda)?)?;
        let next = ConsolidatedPosterior::from_parts(self.params.clone(), precision, task_log)?;
        let pen = debiased_center(&bank_minus, &next, &self.params, &fisher, &id, lambda)?;
        let mut bank = bank_minus;
        bank.push(pen)?;
        self.bank = Some(bank);
        self.consolidated = Some(next);
        if let Some(rec) = self.records.iter_mut().find(|r| r.task == id) {
            rec.optimum = self.params.clone();
            rec.fisher = empirical_fisher_diag(
                &self.setup.architecture,
                &self.params,
                data,
                self.setup.fisher_mode,
            )?;
            rec.lambda = lambda;
        }

        self.finish_stage(format!("revisit:{id}"), id, outcome, t, started)
    }

    /// Runs every remaining initial stage.
    pub fn run(&mut self) -> Result<()> {
        while self.next_task < self.tasks.len() {
            self.step_stage()?;
        }
        Ok(())
    }

    fn finish_stage(
        &mut self,
        label: String,
        task: TaskId,
        outcome: TrainOutcome,
        trained_index: usize,
        started: Instant,
    ) -> Result<()> {
        // Loss column: every task seen so far (all of them once the initial
        // pass is done, i.e. for revisit stages).
        for (tau, (tau_id, data)) in self.tasks.iter().enumerate() {
            let seen = tau < self.next_task;
            let cell = if seen {
                Some(
                    self.setup
                        .architecture
                        .neg_log_likelihood(&self.params, data)?,
                )
            } else {
                None
            };
            self.loss[tau].push(cell);
            let prox = if seen {
                self.bank
                    .as_ref()
                    .and_then(|b| b.penalty(tau_id))
                    .map(|p| p.value(&self.params))
                    .transpose()?
            } else {
                None
            };
            self.proxy[tau].push(prox);
        }

        let (mean_d, prec_d) = self.oracle_distances()?;
        self.oracle_mean_distance.push(mean_d);
        self.oracle_precision_distance.push(prec_d);
        self.state_bytes.push(self.current_state_bytes());
        self.stage_params.push(self.params.clone());
        let wall = started.elapsed().as_secs_f64() * 1e3;
        self.wall_ms.push(wall);
        log::info!(
            "stage {label}: task {task} trained in {} steps ({}), grad {:.3e}, {:.1} ms",
            outcome.steps,
            if outcome.converged {
                "converged"
            } else {
                "hit max_steps"
            },
            outcome.final_grad_inf_norm,
            wall,
        );
        let _ = trained_index;
        self.stages.push(StageOutcome {
            label,
            task,
            converged: outcome.converged,
            steps: outcome.steps,
            final_grad_inf_norm: outcome.final_grad_inf_norm,
        });
        Ok(())
    }

    /// Distances to the exact conjugate posterior over all tasks seen so
    /// far. `None` when the tasks do not admit the closed form (non-one-hot
    /// inputs, classification head, or mixed setups).
    fn oracle_distances(&self) -> Result<(Option<f64>, Option<f64>)> {
        let Head::GaussianRegression { noise_variance } = self.setup.architecture.head else {
            return Ok((None, None));
        };
        // The closed form describes the plain linear map y = theta' x.
        if self.setup.architecture.layer_sizes.len() != 2
            || self.setup.architecture.layer_sizes[1] != 1
            || self.setup.architecture.use_bias
        {
            return Ok((None, None));
        }
        let seen: Vec<&TaskDataset> = self.tasks[..self.next_task]
            .iter()
            .map(|(_, d)| d)
            .collect();
        if seen.is_empty() {
            return Ok((None, None));
        }
        let posterior = match exact_sequential_posterior(
            &seen,
            noise_variance,
            self.setup.hyper.lambda_prior,
        ) {
            Ok(p) => p,
            // Not a diagonal design; the oracle does not apply.
            Err(_) => return Ok((None, None)),
        };
        let mean_d = Some(self.params.inf_dist(&posterior.mean)?);
        let prec = match (&self.consolidated, &self.bank) {
            (Some(c), _) => Some(c.precision().clone()),
            (None, Some(b)) => Some(b.precision_sum()?),
            (None, None) => None,
        };
        let prec_d = prec
            .map(|p| p.inf_dist(&posterior.precision_diag))
            .transpose()?;
        Ok((mean_d, prec_d))
    }

    /// Size of the penalty state on the fixed-width encoding. Naive keeps
    /// nothing; joint keeps raw data, counted as stored floats.
    fn current_state_bytes(&self) -> usize {
        match self.setup.strategy {
            Strategy::Naive => 0,
            Strategy::Joint => self.tasks[..self.next_task]
                .iter()
                .map(|(_, d)| {
                    let width = match d.targets() {
                        crate::dataset::Targets::Regression(t) => t.first().map_or(0, Vec::len),
                        crate::dataset::Targets::Classification(_) => 1,
                    };
                    d.len() * (d.input_dim() + width) * std::mem::size_of::<f64>()
                })
                .sum(),
            Strategy::LaplaceSingle => self
                .consolidated
                .as_ref()
                .map_or(0, |c| c.normalized_state_bytes().len()),
            Strategy::EwcMulti | Strategy::LaplaceMultiDebiased => self
                .bank
                .as_ref()
                .map_or(0, |b| b.normalized_state_bytes().len()),
        }
    }

    /// Snapshot of everything recorded so far.
    pub fn report(&self) -> Result<RunReport> {
        let report = RunReport {
            schema_version: REPORT_SCHEMA_VERSION,
            strategy: self.setup.strategy,
            task_ids: self.tasks.iter().map(|(id, _)| id.clone()).collect(),
            stage_labels: self.stages.iter().map(|s| s.label.clone()).collect(),
            loss: self.loss.clone(),
            proxy: self.proxy.clone(),
            oracle_mean_distance: self.oracle_mean_distance.clone(),
            oracle_precision_distance: self.oracle_precision_distance.clone(),
            converged: self.stages.iter().map(|s| s.converged).collect(),
            steps: self.stages.iter().map(|s| s.steps).collect(),
            final_grad_inf_norm: self.stages.iter().map(|s| s.final_grad_inf_norm).collect(),
            state_bytes: self.state_bytes.clone(),
            stage_params: self.stage_params.clone(),
            final_params: self.params.clone(),
            consolidated_precision: self.consolidated.as_ref().map(|c| c.precision().clone()),
            config_echo: serde_json::Value::Null,
            wall_ms: self.wall_ms.clone(),
        };
        report.validate()?;
        Ok(report)
    }
}

/// Convenience wrapper: build, run all stages, return the report.
pub fn run_sequence(setup: SequenceSetup, tasks: Vec<(TaskId, TaskDataset)>) -> Result<RunReport> {
    let mut run = SequenceRun::new(setup, tasks)?;
    run.run()?;
    run.report()
}
