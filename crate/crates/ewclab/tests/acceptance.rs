//! End-to-end acceptance checks, one test per headline claim. Each prints
//! a single PASS/FAIL line with the measured quantities and its tolerance,
//! so `--nocapture` gives a readable scorecard.

use std::time::Instant;

use ewclab::consolidate::{
    consolidate_single, debiased_center, init_posterior, Hyperparams, PenaltyBank, TaskId,
};
use ewclab::dataset::TaskDataset;
use ewclab::fisher::{empirical_fisher_diag, FisherMode};
use ewclab::net::{Activation, Architecture, Head};
use ewclab::oracle::{dense_laplace, DEFAULT_FD_STEP};
use ewclab::params::{DiagPrecision, ParamVector};
use ewclab::rng;
use ewclab::tasks::{self, TaskKind, TaskSpec};
use ewclab::trainer::{
    run_sequence, train_task, Method, OptimizerConfig, PenaltyTerm, SequenceRun, SequenceSetup,
    Strategy,
};
use ewclab::verify::{self, FaultMode};

fn check(name: &str, ok: bool, detail: String) {
    if ok {
        println!("PASS {name}: {detail}");
    } else {
        println!("FAIL {name}: {detail}");
        panic!("{name}: {detail}");
    }
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

fn quadratic_setup(strategy: Strategy, dim: usize, lambda_prior: f64) -> SequenceSetup {
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
        hyper: Hyperparams::new(lambda_prior),
        optimizer: OptimizerConfig {
            method: Method::GradientDescent,
            learning_rate: 0.05,
            momentum: 0.0,
            max_steps: 200_000,
            grad_tol: 1e-9,
            seed: 0,
            batch_size: None,
        },
        fisher_mode: FisherMode::Observed,
    }
}

fn named_tasks(specs: &[TaskSpec]) -> Vec<(TaskId, TaskDataset)> {
    tasks::generate_sequence(specs)
        .unwrap()
        .into_iter()
        .enumerate()
        .map(|(i, (d, _))| (TaskId::new(format!("task{i}")), d))
        .collect()
}

/// Sequential consolidation lands on the exact conjugate posterior: anchor
/// within 1e-6 of the mean, precision diagonal within 1e-8, for prior
/// weights 0.1 and 1, in under five seconds.
#[test]
fn exact_posterior_recovery_on_quadratics() {
    const MEAN_TOL: f64 = 1e-6;
    const PREC_TOL: f64 = 1e-8;
    const TIME_BUDGET_S: f64 = 5.0;
    let started = Instant::now();
    let specs: Vec<TaskSpec> = (0..4)
        .map(|i| diag_spec(16, 64, 1101 + i as u64, 5e-6))
        .collect();
    let mut worst_mean: f64 = 0.0;
    let mut worst_prec: f64 = 0.0;
    for lambda_prior in [0.1, 1.0] {
        let report = run_sequence(
            quadratic_setup(Strategy::LaplaceSingle, 16, lambda_prior),
            named_tasks(&specs),
        )
        .unwrap();
        assert!(report.converged.iter().all(|c| *c));
        for stage in 0..specs.len() {
            worst_mean = worst_mean.max(report.oracle_mean_distance[stage].unwrap());
            worst_prec = worst_prec.max(report.oracle_precision_distance[stage].unwrap());
        }
    }
    let elapsed = started.elapsed().as_secs_f64();
    check(
        "exact_posterior_recovery_on_quadratics",
        worst_mean <= MEAN_TOL && worst_prec <= PREC_TOL && elapsed < TIME_BUDGET_S,
        format!(
            "anchor-to-mean {worst_mean:.3e} (tol {MEAN_TOL:.0e}), precision gap {worst_prec:.3e} (tol {PREC_TOL:.0e}), {elapsed:.2}s (budget {TIME_BUDGET_S}s)"
        ),
    );
}

/// Per-task penalties anchored at their own optima keep re-counting the
/// first task's data: the final optimum sits strictly closer to the
/// task-A-only solution, and at least ten times farther from the exact
/// Bayes mean, than the consolidated run's.
#[test]
fn double_counting_pulls_toward_the_first_task() {
    const RATIO: f64 = 10.0;
    const TIME_BUDGET_S: f64 = 5.0;
    let started = Instant::now();
    let specs = [
        diag_spec(16, 64, 101, 2e-3),
        diag_spec(16, 64, 102, 2e-3),
        diag_spec(16, 64, 103, 2e-3),
    ];
    let solo = run_sequence(
        quadratic_setup(Strategy::Naive, 16, 0.1),
        named_tasks(&specs[..1]),
    )
    .unwrap();
    let ewc = run_sequence(
        quadratic_setup(Strategy::EwcMulti, 16, 0.1),
        named_tasks(&specs),
    )
    .unwrap();
    let lap = run_sequence(
        quadratic_setup(Strategy::LaplaceSingle, 16, 0.1),
        named_tasks(&specs),
    )
    .unwrap();
    let ewc_to_solo = ewc.final_params.inf_dist(&solo.final_params).unwrap();
    let lap_to_solo = lap.final_params.inf_dist(&solo.final_params).unwrap();
    let ewc_to_bayes = ewc.oracle_mean_distance.last().unwrap().unwrap();
    let lap_to_bayes = lap.oracle_mean_distance.last().unwrap().unwrap();
    let elapsed = started.elapsed().as_secs_f64();
    check(
        "double_counting_pulls_toward_the_first_task",
        ewc_to_solo < lap_to_solo && ewc_to_bayes >= RATIO * lap_to_bayes && elapsed < TIME_BUDGET_S,
        format!(
            "to-solo {ewc_to_solo:.3e} vs {lap_to_solo:.3e} (must be smaller), to-Bayes {ewc_to_bayes:.3e} vs {lap_to_bayes:.3e} (factor {:.1}, need >= {RATIO}), {elapsed:.2}s (budget {TIME_BUDGET_S}s)",
            ewc_to_bayes / lap_to_bayes
        ),
    );
}

/// The debiased penalty bank reproduces the consolidated penalty's gradient
/// everywhere, on synthetic 50-parameter states and on a real run, before
/// and after a revisit cycle.
#[test]
fn bank_gradient_matches_consolidated_gradient() {
    const TOL: f64 = 1e-8;
    const DIM: usize = 50;
    const THETAS: usize = 100;
    let mut worst: f64 = 0.0;
    let sample =
        |bank: &PenaltyBank, consolidated: &ewclab::ConsolidatedPosterior, seed: u64| -> f64 {
            let mut r = rng::stream(seed, 0);
            let mut local: f64 = 0.0;
            for _ in 0..THETAS {
                let theta =
                    ParamVector::new((0..DIM).map(|_| 2.0 * r.next_normal()).collect()).unwrap();
                local = local.max(
                    bank.grad(&theta)
                        .unwrap()
                        .inf_dist(&consolidated.grad(&theta).unwrap())
                        .unwrap(),
                );
            }
            local
        };

    // Synthetic states with weights far from one.
    let hyper = Hyperparams::new(0.1);
    let mut consolidated = init_posterior(&hyper, DIM).unwrap();
    let mut bank = PenaltyBank::prior_only(0.1, DIM).unwrap();
    let mut r = rng::stream(31, 1);
    for (t, lambda) in [64.0, 48.0, 80.0].into_iter().enumerate() {
        let optimum = ParamVector::new((0..DIM).map(|_| r.next_normal()).collect()).unwrap();
        let fisher = DiagPrecision::new((0..DIM).map(|_| 0.3 + r.next_f64()).collect()).unwrap();
        let id = TaskId::new(format!("t{t}"));
        let next =
            consolidate_single(&consolidated, &optimum, &fisher, id.clone(), lambda).unwrap();
        bank.push(debiased_center(&bank, &next, &optimum, &fisher, &id, lambda).unwrap())
            .unwrap();
        consolidated = next;
    }
    worst = worst.max(sample(&bank, &consolidated, 41));

    // A trained sequence, then again after revisiting its first task.
    let specs: Vec<TaskSpec> = (0..3)
        .map(|i| diag_spec(DIM, 100, 1201 + i as u64, 2e-3))
        .collect();
    let mut run = SequenceRun::new(
        quadratic_setup(Strategy::LaplaceMultiDebiased, DIM, 0.1),
        named_tasks(&specs),
    )
    .unwrap();
    run.run().unwrap();
    worst = worst.max(sample(run.bank().unwrap(), run.consolidated().unwrap(), 42));
    run.revisit(&TaskId::new("task0")).unwrap();
    worst = worst.max(sample(run.bank().unwrap(), run.consolidated().unwrap(), 43));

    check(
        "bank_gradient_matches_consolidated_gradient",
        worst <= TOL,
        format!("worst gradient gap {worst:.3e} over {THETAS} draws per state (tol {TOL:.0e})"),
    );
}

/// One revisit of the first task recovers the exact joint posterior mean;
/// a second revisit of the already-exact state leaves centers in place.
#[test]
fn revisit_recovers_joint_posterior_and_is_idempotent() {
    const TOL: f64 = 1e-6;
    let specs = [diag_spec(16, 64, 1301, 2e-3), diag_spec(16, 64, 1302, 2e-3)];
    let mut run = SequenceRun::new(
        quadratic_setup(Strategy::LaplaceMultiDebiased, 16, 0.1),
        named_tasks(&specs),
    )
    .unwrap();
    run.run().unwrap();
    let first = TaskId::new("task0");
    run.revisit(&first).unwrap();
    let report = run.report().unwrap();
    let joint_gap = report.oracle_mean_distance.last().unwrap().unwrap();

    let centers_before: Vec<Vec<f64>> = run
        .bank()
        .unwrap()
        .penalties()
        .iter()
        .map(|p| p.center().as_slice().to_vec())
        .collect();
    run.revisit(&first).unwrap();
    let moved = run
        .bank()
        .unwrap()
        .penalties()
        .iter()
        .zip(&centers_before)
        .flat_map(|(p, before)| {
            p.center()
                .as_slice()
                .iter()
                .zip(before)
                .map(|(a, b)| (a - b).abs())
        })
        .fold(0.0_f64, f64::max);

    check(
        "revisit_recovers_joint_posterior_and_is_idempotent",
        joint_gap <= TOL && moved < TOL,
        format!(
            "joint posterior gap {joint_gap:.3e}, second-revisit center movement {moved:.3e} (tol {TOL:.0e})"
        ),
    );
}

/// Analytic gradients agree with central finite differences for both heads
/// over twenty random instances.
#[test]
fn gradients_match_finite_differences() {
    const REL_TOL: f64 = 1e-4;
    const H: f64 = 1e-6;
    let gaussian = Architecture {
        layer_sizes: vec![6, 8, 1],
        activation: Activation::Tanh,
        head: Head::GaussianRegression {
            noise_variance: 0.5,
        },
        use_bias: true,
    };
    let categorical = Architecture {
        layer_sizes: vec![5, 6, 3],
        activation: Activation::Tanh,
        head: Head::Categorical,
        use_bias: true,
    };
    assert!(gaussian.param_count() <= 100 && categorical.param_count() <= 100);
    let mut worst: f64 = 0.0;
    let mut instances = 0;
    for (case, arch) in [gaussian, categorical].into_iter().enumerate() {
        let d = arch.input_dim();
        for instance in 0..10 {
            let mut r = rng::stream(1400 + case as u64, instance);
            let inputs: Vec<Vec<f64>> = (0..8)
                .map(|_| (0..d).map(|_| r.next_normal()).collect())
                .collect();
            let data = match arch.head {
                Head::GaussianRegression { .. } => {
                    TaskDataset::regression(inputs, (0..8).map(|_| vec![r.next_normal()]).collect())
                        .unwrap()
                }
                Head::Categorical => {
                    TaskDataset::classification(inputs, (0..8).map(|i| i % 3).collect()).unwrap()
                }
            };
            let params = ParamVector::new(
                (0..arch.param_count())
                    .map(|_| 0.6 * r.next_normal())
                    .collect(),
            )
            .unwrap();
            let grad = arch.grad_nll(&params, &data).unwrap();
            for i in 0..params.len() {
                let mut hi = params.clone();
                hi.as_mut_slice()[i] += H;
                let mut lo = params.clone();
                lo.as_mut_slice()[i] -= H;
                let fd = (arch.neg_log_likelihood(&hi, &data).unwrap()
                    - arch.neg_log_likelihood(&lo, &data).unwrap())
                    / (2.0 * H);
                let rel = (grad[i] - fd).abs() / grad[i].abs().max(fd.abs()).max(1.0);
                worst = worst.max(rel);
            }
            instances += 1;
        }
    }
    check(
        "gradients_match_finite_differences",
        instances == 20 && worst <= REL_TOL,
        format!("{instances} instances, worst relative gap {worst:.3e} (tol {REL_TOL:.0e})"),
    );
}

/// On one-hot designs at the MLE with unit noise, N times the empirical
/// Fisher equals the design diagonal exactly; on a trained near-perfect
/// classifier the gap between the dense Hessian diagonal and N * Fisher +
/// prior is measured and logged, with no threshold.
#[test]
fn fisher_matches_design_diagonal_at_mle() {
    const TOL: f64 = 1e-8;
    let mut worst: f64 = 0.0;
    for seed in [1501, 1502] {
        let spec = diag_spec(16, 64, seed, 1.0);
        let (data, _) = tasks::generate(&spec, None).unwrap();
        let dim = data.input_dim();
        let n = data.len() as f64;
        let mut sums = vec![0.0; dim];
        let mut counts = vec![0.0; dim];
        let ewclab::dataset::Targets::Regression(targets) = data.targets() else {
            unreachable!()
        };
        for (row, y) in data.inputs().iter().zip(targets) {
            let j = row.iter().position(|v| *v == 1.0).unwrap();
            sums[j] += y[0];
            counts[j] += 1.0;
        }
        let mle = ParamVector::new(sums.iter().zip(&counts).map(|(s, c)| s / c).collect()).unwrap();
        let arch = quadratic_setup(Strategy::Naive, dim, 0.1).architecture;
        let fisher = empirical_fisher_diag(&arch, &mle, &data, FisherMode::Observed).unwrap();
        for i in 0..dim {
            worst = worst.max((n * fisher[i] - counts[i]).abs());
        }
    }

    // Neural measurement: train a small classifier to near-perfect
    // predictions under a weight prior, then compare curvatures.
    let lambda_prior = 0.1;
    let arch = Architecture {
        layer_sizes: vec![4, 6, 2],
        activation: Activation::Tanh,
        head: Head::Categorical,
        use_bias: true,
    };
    let mut r = rng::stream(1510, 0);
    let n = 40usize;
    let inputs: Vec<Vec<f64>> = (0..n)
        .map(|j| {
            let sign = if j % 2 == 0 { 1.5 } else { -1.5 };
            (0..4).map(|_| sign + 0.3 * r.next_normal()).collect()
        })
        .collect();
    let labels: Vec<usize> = (0..n).map(|j| j % 2).collect();
    let data = TaskDataset::classification(inputs, labels).unwrap();
    let prior = init_posterior(&Hyperparams::new(lambda_prior), arch.param_count()).unwrap();
    let out = train_task(
        &arch,
        &data,
        &arch.init_params(3).unwrap(),
        &PenaltyTerm::Consolidated(&prior),
        &OptimizerConfig {
            method: Method::GradientDescent,
            learning_rate: 0.01,
            momentum: 0.0,
            max_steps: 200_000,
            grad_tol: 1e-7,
            seed: 0,
            batch_size: None,
        },
    )
    .unwrap();
    assert!(out.converged);
    let nll = arch.neg_log_likelihood(&out.params, &data).unwrap();
    let posterior = dense_laplace(
        |theta| arch.neg_log_likelihood(theta, &data).unwrap() + prior.value(theta).unwrap(),
        &out.params,
        DEFAULT_FD_STEP,
        1e-4,
    )
    .unwrap();
    let fisher = empirical_fisher_diag(&arch, &out.params, &data, FisherMode::Observed).unwrap();
    let mut rel_gaps: Vec<f64> = (0..arch.param_count())
        .map(|i| {
            let h = posterior.precision_diag[i];
            let f = n as f64 * fisher[i] + lambda_prior;
            (h - f).abs() / h.abs().max(f.abs()).max(1e-12)
        })
        .collect();
    rel_gaps.sort_by(f64::total_cmp);
    let median = rel_gaps[rel_gaps.len() / 2];
    let max = *rel_gaps.last().unwrap();

    check(
        "fisher_matches_design_diagonal_at_mle",
        worst <= TOL && median.is_finite(),
        format!(
            "design-diagonal gap {worst:.3e} (tol {TOL:.0e}); neural Hessian-vs-Fisher relative gap median {median:.3} max {max:.3} at per-example loss {:.2e} (measurement only)",
            nll / n as f64
        ),
    );
}

/// Plain sequential training forgets a permuted-features task; the
/// consolidated penalty retains it at modest cost on the newest task.
///
/// The scenario keeps the input dimension low so the class blobs overlap
/// and training cannot drive the loss to zero: a saturated optimum has a
/// vanishing empirical Fisher, which would leave nothing to consolidate.
/// A fixed step budget plays the same role for the naive baseline.
#[test]
fn naive_forgets_permuted_features_where_consolidation_does_not() {
    const FORGET_FACTOR: f64 = 2.0;
    const FINAL_TASK_FACTOR: f64 = 1.5;
    const TIME_BUDGET_S: f64 = 60.0;
    const LAMBDA: f64 = 640.0;
    let started = Instant::now();
    let specs: Vec<TaskSpec> = (0..3)
        .map(|i| TaskSpec {
            kind: TaskKind::PermutedFeaturesClassification,
            n_samples: 512,
            input_dim: 4,
            seed: 1601 + i as u64,
            overlap: 0.0,
            noise_variance: 1.0,
            target_scale: 1.0,
        })
        .collect();
    let mut hyper = Hyperparams::new(0.1);
    for i in 0..specs.len() {
        hyper
            .lambda_per_task
            .insert(TaskId::new(format!("task{i}")), LAMBDA);
    }
    let setup = |strategy| SequenceSetup {
        architecture: Architecture {
            layer_sizes: vec![4, 4, 2],
            activation: Activation::Tanh,
            head: Head::Categorical,
            use_bias: true,
        },
        init_seed: 7,
        strategy,
        hyper: hyper.clone(),
        optimizer: OptimizerConfig {
            method: Method::GradientDescent,
            learning_rate: 1e-3,
            momentum: 0.0,
            max_steps: 2_500,
            grad_tol: 1e-3,
            seed: 0,
            batch_size: None,
        },
        fisher_mode: FisherMode::Observed,
    };
    let naive = run_sequence(setup(Strategy::Naive), named_tasks(&specs)).unwrap();
    let lap = run_sequence(setup(Strategy::LaplaceSingle), named_tasks(&specs)).unwrap();
    let first = TaskId::new("task0");
    let last = TaskId::new("task2");
    let naive_first = naive.final_loss_for(&first).unwrap();
    let lap_first = lap.final_loss_for(&first).unwrap();
    let naive_last = naive.final_loss_for(&last).unwrap();
    let lap_last = lap.final_loss_for(&last).unwrap();
    let elapsed = started.elapsed().as_secs_f64();
    check(
        "naive_forgets_permuted_features_where_consolidation_does_not",
        naive_first >= FORGET_FACTOR * lap_first
            && lap_last <= FINAL_TASK_FACTOR * naive_last
            && elapsed < TIME_BUDGET_S,
        format!(
            "first-task loss {naive_first:.3} vs {lap_first:.3} (factor {:.2}, need >= {FORGET_FACTOR}), last-task loss {lap_last:.3} vs {naive_last:.3} (factor {:.2}, cap {FINAL_TASK_FACTOR}), {elapsed:.1}s (budget {TIME_BUDGET_S}s)",
            naive_first / lap_first,
            lap_last / naive_last
        ),
    );
}

/// The consolidated state's serialized size does not depend on how many
/// tasks it has absorbed; the per-task bank grows by one fixed-size
/// penalty per task.
#[test]
fn consolidated_state_size_is_flat_bank_grows_linearly() {
    let specs: Vec<TaskSpec> = (0..5)
        .map(|i| diag_spec(16, 64, 1701 + i as u64, 2e-3))
        .collect();
    let single = run_sequence(
        quadratic_setup(Strategy::LaplaceSingle, 16, 0.1),
        named_tasks(&specs),
    )
    .unwrap();
    let flat = single.state_bytes.windows(2).all(|w| w[0] == w[1]);
    let multi = run_sequence(
        quadratic_setup(Strategy::LaplaceMultiDebiased, 16, 0.1),
        named_tasks(&specs),
    )
    .unwrap();
    let growth: Vec<isize> = multi
        .state_bytes
        .windows(2)
        .map(|w| w[1] as isize - w[0] as isize)
        .collect();
    let linear = growth.iter().all(|g| *g > 0) && growth.windows(2).all(|w| w[0] == w[1]);
    check(
        "consolidated_state_size_is_flat_bank_grows_linearly",
        flat && linear,
        format!(
            "consolidated sizes {:?} (flat over 5 tasks), bank sizes {:?} (+{} per task)",
            single.state_bytes,
            multi.state_bytes,
            growth.first().copied().unwrap_or(0)
        ),
    );
}

/// The self-test suite detects a deliberately misdivided per-task center:
/// clean build passes everything, the faulted build fails the identity
/// properties.
#[test]
fn verify_suite_catches_the_misdivided_center() {
    let clean = verify::run_all(FaultMode::None);
    let clean_ok = verify::all_passed(&clean);
    let faulted = verify::run_all(FaultMode::UnweightedCenterDenominator);
    let identity_broken = faulted
        .iter()
        .filter(|o| o.name == "penalty_gradient_identity" || o.name == "decomposition_roundtrip")
        .all(|o| !o.passed);
    let fault_detected = !verify::all_passed(&faulted);
    check(
        "verify_suite_catches_the_misdivided_center",
        clean_ok && identity_broken && fault_detected,
        format!(
            "clean suite {}/{} passed; fault flips the identity properties to FAIL ({} of {} fail under fault)",
            clean.iter().filter(|o| o.passed).count(),
            clean.len(),
            faulted.iter().filter(|o| !o.passed).count(),
            faulted.len()
        ),
    );
}
