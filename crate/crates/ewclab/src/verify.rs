//! Built-in self-test: a fixed suite of numerical properties the engine
//! must satisfy, runnable from the CLI on any build. Each property prints
//! pass or fail independently; a fault mode exists to show the suite has
//! teeth (it swaps the debiased-center divisor for the uncorrected one,
//! which must make the penalty-identity properties fail).

use crate::consolidate::{
    consolidate_single, debiased_center_with, decompose, init_posterior, CenterDenominator,
    ConsolidatedPosterior, Hyperparams, PenaltyBank, PenaltyRecord, TaskId,
};
use crate::dataset::{Targets, TaskDataset};
use crate::error::{Error, Result};
use crate::fisher::{empirical_fisher_diag, FisherMode};
use crate::net::{Activation, Architecture, Head};
use crate::params::{DiagPrecision, ParamVector};
use crate::rng;
use crate::tasks::{self, TaskKind, TaskSpec};
use crate::trainer::{Method, OptimizerConfig, SequenceRun, SequenceSetup, Strategy};

/// Deliberate defect switch for demonstrating that the verify suite
/// detects a broken debiasing rule.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum FaultMode {
    #[default]
    None,
    /// Divide matched linear terms by F alone instead of lambda * F when
    /// computing per-task centers.
    UnweightedCenterDenominator,
}

impl FaultMode {
    fn denominator(self) -> CenterDenominator {
        match self {
            FaultMode::None => CenterDenominator::Weighted,
            FaultMode::UnweightedCenterDenominator => CenterDenominator::Unweighted,
        }
    }
}

#[derive(Debug, Clone)]
pub struct PropertyOutcome {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

type Check = fn(FaultMode) -> Result<String>;

/// Runs the whole suite; never panics, every failure is an outcome.
pub fn run_all(fault: FaultMode) -> Vec<PropertyOutcome> {
    let checks: [(&'static str, Check); 8] = [
        ("penalty_gradient_identity", penalty_gradient_identity),
        ("decomposition_roundtrip", decomposition_roundtrip),
        ("conjugate_oracle_match", conjugate_oracle_match),
        ("revisit_fixed_point", revisit_fixed_point),
        ("gradient_check_fd", gradient_check_fd),
        ("fisher_mle_identity", fisher_mle_identity),
        ("storage_constancy", storage_constancy),
        ("order_insensitive_precision", order_insensitive_precision),
    ];
    checks
        .into_iter()
        .map(|(name, f)| match f(fault) {
            Ok(detail) => PropertyOutcome {
                name,
                passed: true,
                detail,
            },
            Err(e) => PropertyOutcome {
                name,
                passed: false,
                detail: e.to_string(),
            },
        })
        .collect()
}

pub fn all_passed(outcomes: &[PropertyOutcome]) -> bool {
    outcomes.iter().all(|o| o.passed)
}

fn fail(msg: String) -> Error {
    Error::InconsistentState(msg)
}

/// Consolidates a few synthetic tasks (weights far from 1 on purpose) and
/// returns the single-penalty state next to the per-task bank whose centers
/// were computed with the given divisor rule.
fn synthetic_chain(
    dim: usize,
    lambdas: &[f64],
    lambda_prior: f64,
    seed: u64,
    den: CenterDenominator,
) -> Result<(ConsolidatedPosterior, PenaltyBank)> {
    let hyper = Hyperparams::new(lambda_prior);
    let mut consolidated = init_posterior(&hyper, dim)?;
    let mut bank = PenaltyBank::prior_only(lambda_prior, dim)?;
    let mut r = rng::stream(seed, 0);
    for (t, &lambda) in lambdas.iter().enumerate() {
        let optimum = ParamVector::new((0..dim).map(|_| r.next_normal()).collect())?;
        let fisher = DiagPrecision::new((0..dim).map(|_| 0.3 + r.next_f64()).collect())?;
        let id = TaskId::new(format!("t{t}"));
        let next = consolidate_single(&consolidated, &optimum, &fisher, id.clone(), lambda)?;
        bank.push(debiased_center_with(
            &bank, &next, &optimum, &fisher, &id, lambda, den,
        )?)?;
        consolidated = next;
    }
    Ok((consolidated, bank))
}

fn random_theta(dim: usize, r: &mut rng::SplitMix64) -> ParamVector {
    ParamVector::new((0..dim).map(|_| 2.0 * r.next_normal()).collect()).expect("finite draws")
}

/// Bank gradient equals consolidated gradient everywhere, and their values
/// differ only by a theta-independent constant; holds with and without a
/// zero-anchored prior.
fn penalty_gradient_identity(fault: FaultMode) -> Result<String> {
    const TOL: f64 = 1e-8;
    let dim = 6;
    let lambdas = [32.0, 24.0, 40.0];
    let mut worst: f64 = 0.0;
    for (case, lambda_prior) in [(0, 0.0), (1, 0.1)] {
        let (consolidated, bank) =
            synthetic_chain(dim, &lambdas, lambda_prior, 90 + case, fault.denominator())?;
        let mut r = rng::stream(17, case);
        let theta0 = random_theta(dim, &mut r);
        let offset = bank.value(&theta0)? - consolidated.value(&theta0)?;
        for _ in 0..100 {
            let theta = random_theta(dim, &mut r);
            let ggap = bank.grad(&theta)?.inf_dist(&consolidated.grad(&theta)?)?;
            let vgap = (bank.value(&theta)? - consolidated.value(&theta)? - offset).abs();
            worst = worst.max(ggap).max(vgap);
        }
    }
    if worst > TOL {
        return Err(fail(format!(
            "bank and consolidated penalty disagree: worst gap {worst:.3e} > {TOL:.0e}"
        )));
    }
    Ok(format!(
        "gradients and value offsets agree within {worst:.3e} (tol {TOL:.0e}, lambda_prior 0 and 0.1)"
    ))
}

/// Splitting a consolidated state into per-task penalties and re-summing
/// reproduces it exactly.
fn decomposition_roundtrip(fault: FaultMode) -> Result<String> {
    const TOL: f64 = 1e-8;
    let dim = 6;
    let lambda_prior = 0.1;
    let (consolidated, bank) = synthetic_chain(
        dim,
        &[32.0, 24.0, 40.0],
        lambda_prior,
        23,
        fault.denominator(),
    )?;
    let records: Vec<PenaltyRecord> = consolidated
        .task_log()
        .iter()
        .map(|(id, lambda)| {
            let p = bank.penalty(id).expect("bank covers the log");
            PenaltyRecord {
                task: id.clone(),
                center: p.center().clone(),
                fisher: p.precision().scaled(1.0 / lambda).expect("positive lambda"),
                lambda: *lambda,
            }
        })
        .collect();
    let rebuilt = decompose(&consolidated, &records, lambda_prior)?;
    let mut r = rng::stream(29, 0);
    let mut worst: f64 = 0.0;
    for _ in 0..50 {
        let theta = random_theta(dim, &mut r);
        worst = worst.max(
            rebuilt
                .grad(&theta)?
                .inf_dist(&consolidated.grad(&theta)?)?,
        );
    }
    if worst > TOL {
        return Err(fail(format!(
            "decomposed bank drifts from its source: worst gradient gap {worst:.3e} > {TOL:.0e}"
        )));
    }
    Ok(format!(
        "roundtrip gradient gap {worst:.3e} (tol {TOL:.0e})"
    ))
}

fn diag_spec(dim: usize, n: usize, seed: u64, scale: f64) -> TaskSpec {
    TaskSpec {
        kind: TaskKind::DiagLinearGaussian,
        n_samples: n,
        input_dim: dim,
        seed,
        overlap: 1.0,
        noise_variance: 1.0,
        target_scale: scale,
    }
}

fn linear_setup(strategy: Strategy, dim: usize) -> SequenceSetup {
    SequenceSetup {
        architecture: Architecture {
            layer_sizes: vec![dim, 1],
            activation: Activation::Identity,
            head: Head::GaussianRegression {
                noise_variance: 1.0,
            },
            use_bias: false,
        },
        init_seed: 7,
        strategy,
        hyper: Hyperparams::new(0.1),
        optimizer: OptimizerConfig {
            method: Method::GradientDescent,
            learning_rate: 0.05,
            momentum: 0.0,
            max_steps: 100_000,
            grad_tol: 1e-10,
            seed: 0,
            batch_size: None,
        },
        fisher_mode: FisherMode::Observed,
    }
}

fn diag_sequence(specs: &[TaskSpec]) -> Result<Vec<(TaskId, TaskDataset)>> {
    Ok(tasks::generate_sequence(specs)?
        .into_iter()
        .enumerate()
        .map(|(i, (d, _))| (TaskId::new(format!("task{i}")), d))
        .collect())
}

/// Sequentially consolidated runs land on the exact conjugate posterior:
/// mean via training, precision via summed curvatures.
fn conjugate_oracle_match(_fault: FaultMode) -> Result<String> {
    const MEAN_TOL: f64 = 1e-6;
    const PREC_TOL: f64 = 1e-8;
    let specs = [diag_spec(8, 32, 811, 5e-6), diag_spec(8, 32, 812, 5e-6)];
    let mut run = SequenceRun::new(
        linear_setup(Strategy::LaplaceSingle, 8),
        diag_sequence(&specs)?,
    )?;
    run.run()?;
    let report = run.report()?;
    let mean_d = report.oracle_mean_distance[1]
        .ok_or_else(|| fail("oracle distance missing for a diagonal design".into()))?;
    let prec_d = report.oracle_precision_distance[1]
        .ok_or_else(|| fail("oracle precision distance missing".into()))?;
    if mean_d > MEAN_TOL || prec_d > PREC_TOL {
        return Err(fail(format!(
            "posterior mismatch: mean {mean_d:.3e} (tol {MEAN_TOL:.0e}), precision {prec_d:.3e} (tol {PREC_TOL:.0e})"
        )));
    }
    Ok(format!(
        "mean distance {mean_d:.3e} (tol {MEAN_TOL:.0e}), precision distance {prec_d:.3e} (tol {PREC_TOL:.0e})"
    ))
}

/// One revisit of a task reproduces the exact joint posterior, and a second
/// revisit does not move it.
fn revisit_fixed_point(_fault: FaultMode) -> Result<String> {
    const TOL: f64 = 1e-6;
    let specs = [diag_spec(8, 32, 821, 2e-3), diag_spec(8, 32, 822, 2e-3)];
    let mut run = SequenceRun::new(
        linear_setup(Strategy::LaplaceMultiDebiased, 8),
        diag_sequence(&specs)?,
    )?;
    run.run()?;
    let first = TaskId::new("task0");
    run.revisit(&first)?;
    let report = run.report()?;
    let dist = report.oracle_mean_distance.last().unwrap().unwrap();
    if dist > TOL {
        return Err(fail(format!(
            "revisit missed the joint posterior by {dist:.3e} (tol {TOL:.0e})"
        )));
    }
    let before = run.params().clone();
    run.revisit(&first)?;
    let moved = run.params().inf_dist(&before)?;
    if moved > TOL {
        return Err(fail(format!(
            "second revisit moved parameters by {moved:.3e} (tol {TOL:.0e})"
        )));
    }
    Ok(format!(
        "joint posterior reached within {dist:.3e}, second revisit moved {moved:.3e} (tol {TOL:.0e})"
    ))
}

/// Analytic gradients match central finite differences for both heads.
fn gradient_check_fd(_fault: FaultMode) -> Result<String> {
    const REL_TOL: f64 = 1e-4;
    const H: f64 = 1e-6;
    let mut worst: f64 = 0.0;
    for (case, arch) in [
        Architecture {
            layer_sizes: vec![4, 3, 1],
            activation: Activation::Tanh,
            head: Head::GaussianRegression {
                noise_variance: 0.5,
            },
            use_bias: true,
        },
        Architecture {
            layer_sizes: vec![4, 3, 2],
            activation: Activation::Tanh,
            head: Head::Categorical,
            use_bias: true,
        },
    ]
    .into_iter()
    .enumerate()
    {
        let mut r = rng::stream(900 + case as u64, 0);
        let inputs: Vec<Vec<f64>> = (0..6)
            .map(|_| (0..4).map(|_| r.next_normal()).collect())
            .collect();
        let data = match arch.head {
            Head::GaussianRegression { .. } => {
                TaskDataset::regression(inputs, (0..6).map(|_| vec![r.next_normal()]).collect())?
            }
            Head::Categorical => {
                TaskDataset::classification(inputs, (0..6).map(|i| i % 2).collect())?
            }
        };
        for _ in 0..4 {
            let params = ParamVector::new(
                (0..arch.param_count())
                    .map(|_| 0.5 * r.next_normal())
                    .collect(),
            )?;
            let grad = arch.grad_nll(&params, &data)?;
            for i in 0..params.len() {
                let mut hi = params.clone();
                hi.as_mut_slice()[i] += H;
                let mut lo = params.clone();
                lo.as_mut_slice()[i] -= H;
                let fd = (arch.neg_log_likelihood(&hi, &data)?
                    - arch.neg_log_likelihood(&lo, &data)?)
                    / (2.0 * H);
                let rel = (grad[i] - fd).abs() / grad[i].abs().max(fd.abs()).max(1.0);
                worst = worst.max(rel);
            }
        }
    }
    if worst > REL_TOL {
        return Err(fail(format!(
            "analytic gradient deviates from finite differences: rel {worst:.3e} > {REL_TOL:.0e}"
        )));
    }
    Ok(format!(
        "worst relative deviation {worst:.3e} (tol {REL_TOL:.0e})"
    ))
}

/// On one-hot regression at the per-coordinate MLE with unit noise, the
/// empirical Fisher times N equals the diagonal of X^T X exactly.
fn fisher_mle_identity(_fault: FaultMode) -> Result<String> {
    const TOL: f64 = 1e-8;
    let spec = diag_spec(8, 32, 831, 1.0);
    let (data, _) = tasks::generate(&spec, None)?;
    let dim = data.input_dim();
    let n = data.len();
    let mut sums = vec![0.0; dim];
    let mut counts = vec![0.0; dim];
    let Targets::Regression(targets) = data.targets() else {
        return Err(fail("expected regression targets".into()));
    };
    for (row, y) in data.inputs().iter().zip(targets) {
        let j = row
            .iter()
            .position(|v| *v == 1.0)
            .ok_or_else(|| fail("expected one-hot input rows".into()))?;
        sums[j] += y[0];
        counts[j] += 1.0;
    }
    let mle = ParamVector::new(
        sums.iter()
            .zip(&counts)
            .map(|(s, c)| if *c > 0.0 { s / c } else { 0.0 })
            .collect(),
    )?;
    let arch = linear_setup(Strategy::Naive, dim).architecture;
    let fisher = empirical_fisher_diag(&arch, &mle, &data, FisherMode::Observed)?;
    let mut worst: f64 = 0.0;
    for i in 0..dim {
        worst = worst.max((n as f64 * fisher[i] - counts[i]).abs());
    }
    if worst > TOL {
        return Err(fail(format!(
            "N * Fisher deviates from diag(X^T X) by {worst:.3e} at the MLE (tol {TOL:.0e})"
        )));
    }
    Ok(format!(
        "N * Fisher matches diag(X^T X) within {worst:.3e} (tol {TOL:.0e})"
    ))
}

/// Consolidated state size is flat in the number of tasks; the per-task
/// bank grows linearly (one fixed-size penalty per task).
fn storage_constancy(_fault: FaultMode) -> Result<String> {
    let specs: Vec<TaskSpec> = (0..4)
        .map(|i| diag_spec(8, 32, 841 + i as u64, 2e-3))
        .collect();
    let single = crate::trainer::run_sequence(
        linear_setup(Strategy::LaplaceSingle, 8),
        diag_sequence(&specs)?,
    )?;
    if !single.state_bytes.windows(2).all(|w| w[0] == w[1]) {
        return Err(fail(format!(
            "consolidated state size varies across stages: {:?}",
            single.state_bytes
        )));
    }
    let multi = crate::trainer::run_sequence(
        linear_setup(Strategy::LaplaceMultiDebiased, 8),
        diag_sequence(&specs)?,
    )?;
    let growth: Vec<isize> = multi
        .state_bytes
        .windows(2)
        .map(|w| w[1] as isize - w[0] as isize)
        .collect();
    if !growth.iter().all(|g| *g > 0) || !growth.windows(2).all(|w| w[0] == w[1]) {
        return Err(fail(format!(
            "bank growth is not one fixed-size penalty per task: {:?}",
            multi.state_bytes
        )));
    }
    Ok(format!(
        "consolidated flat at {} bytes over {} stages; bank grows by {} bytes per task",
        single.state_bytes[0],
        single.state_bytes.len(),
        growth[0]
    ))
}

/// Task order cannot change the consolidated precision (a sum), though it
/// does change the anchor (the last optimum).
fn order_insensitive_precision(_fault: FaultMode) -> Result<String> {
    const TOL: f64 = 1e-12;
    let dim = 6;
    let hyper = Hyperparams::new(0.1);
    let mut r = rng::stream(77, 0);
    let records: Vec<(TaskId, ParamVector, DiagPrecision, f64)> = (0..3)
        .map(|t| {
            (
                TaskId::new(format!("t{t}")),
                random_theta(dim, &mut r),
                DiagPrecision::new((0..dim).map(|_| 0.3 + r.next_f64()).collect()).unwrap(),
                16.0 + t as f64,
            )
        })
        .collect();
    let fold = |order: &[usize]| -> Result<ConsolidatedPosterior> {
        let mut c = init_posterior(&hyper, dim)?;
        for &i in order {
            let (id, opt, fisher, lambda) = &records[i];
            c = consolidate_single(&c, opt, fisher, id.clone(), *lambda)?;
        }
        Ok(c)
    };
    let forward = fold(&[0, 1, 2])?;
    let reversed = fold(&[2, 1, 0])?;
    let gap = forward.precision().inf_dist(reversed.precision())?;
    if gap > TOL {
        return Err(fail(format!(
            "precision depends on task order: gap {gap:.3e} > {TOL:.0e}"
        )));
    }
    let anchor_gap = forward.anchor().inf_dist(reversed.anchor())?;
    if anchor_gap == 0.0 {
        return Err(fail(
            "anchors coincide across orders; expected the last optimum to differ".into(),
        ));
    }
    Ok(format!(
        "precision order-free within {gap:.3e}; anchors differ by {anchor_gap:.3e} as expected"
    ))
}
