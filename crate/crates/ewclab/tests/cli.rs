//! End-to-end tests of the installed binary: exit codes, artifact layout,
//! byte-level reproducibility, and the export round trip.

use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;
use tempfile::TempDir;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_ewclab"))
}

fn run_ok(args: &[&str]) -> Output {
    let out = bin().args(args).output().expect("spawn ewclab");
    assert!(
        out.status.success(),
        "expected success for {args:?}\nstdout: {}\nstderr: {}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn exit_code(out: &Output) -> i32 {
    out.status.code().expect("process terminated by signal")
}

/// Two tiny linear-Gaussian tasks; cheap enough that every test here can
/// afford a full run.
fn quadratic_config(dir: &Path, strategies: &[&str], learning_rate: f64) -> String {
    let strategies: Vec<String> = strategies.iter().map(|s| format!("\"{s}\"")).collect();
    format!(
        r#"{{
  "schema_version": 1,
  "model": {{
    "architecture": {{
      "layer_sizes": [8, 1],
      "activation": "identity",
      "head": {{ "type": "gaussian_regression", "noise_variance": 1.0 }},
      "use_bias": false
    }},
    "init_seed": 7
  }},
  "tasks": [
    {{ "kind": "diag_linear_gaussian", "n_samples": 32, "input_dim": 8,
       "seed": 201, "overlap": 1.0, "noise_variance": 1.0, "target_scale": 0.002 }},
    {{ "kind": "diag_linear_gaussian", "n_samples": 32, "input_dim": 8,
       "seed": 202, "overlap": 1.0, "noise_variance": 1.0, "target_scale": 0.002 }}
  ],
  "strategies": [{}],
  "hyperparams": {{ "lambda_prior": 0.1, "lambda_per_task": {{}} }},
  "optimizer": {{
    "method": "gradient_descent", "learning_rate": {learning_rate}, "momentum": 0.0,
    "max_steps": 50000, "grad_tol": 1e-9, "seed": 0, "batch_size": null
  }},
  "fisher": {{ "mode": "observed" }},
  "output": {{ "dir": "{}", "format_version": 1 }}
}}"#,
        strategies.join(", "),
        dir.display()
    )
}

fn write_config(dir: &Path, body: &str) -> std::path::PathBuf {
    let path = dir.join("experiment.json");
    std::fs::write(&path, body).unwrap();
    path
}

#[test]
fn run_produces_reports_and_reruns_are_byte_identical() {
    let tmp = TempDir::new().unwrap();
    let out_a = tmp.path().join("a");
    let out_b = tmp.path().join("b");
    let config = write_config(
        tmp.path(),
        &quadratic_config(&out_a, &["laplace_single", "ewc_multi"], 0.05),
    );

    run_ok(&["run", config.to_str().unwrap()]);
    run_ok(&[
        "run",
        config.to_str().unwrap(),
        "--out-dir",
        out_b.to_str().unwrap(),
    ]);

    for name in [
        "report_laplace_single.json",
        "report_ewc_multi.json",
        "checkpoint_laplace_single.json",
        "checkpoint_ewc_multi.json",
        "summary.json",
    ] {
        let a = std::fs::read(out_a.join(name)).unwrap();
        let b = std::fs::read(out_b.join(name)).unwrap();
        assert_eq!(a, b, "{name} differs between identical runs");
    }

    let report: Value = serde_json::from_str(
        &std::fs::read_to_string(out_a.join("report_laplace_single.json")).unwrap(),
    )
    .unwrap();
    assert_eq!(report["strategy"], "laplace_single");
    assert_eq!(report["loss"].as_array().unwrap().len(), 2);
    assert_eq!(report["loss"][0].as_array().unwrap().len(), 2);
    // The echo must reproduce the run: the output directory is delivery,
    // not experiment, so byte identity above already proves it is absent.
    assert_eq!(report["config_echo"]["optimizer"]["seed"], 0);
}

#[test]
fn seed_override_lands_in_the_config_echo() {
    let tmp = TempDir::new().unwrap();
    let out = tmp.path().join("out");
    let config = write_config(tmp.path(), &quadratic_config(&out, &["naive"], 0.05));
    run_ok(&["run", config.to_str().unwrap(), "--seed-override", "99"]);
    let report: Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("report_naive.json")).unwrap())
            .unwrap();
    assert_eq!(report["config_echo"]["optimizer"]["seed"], 99);
}

#[test]
fn single_task_naive_run_yields_a_one_by_one_loss_matrix() {
    let tmp = TempDir::new().unwrap();
    let out = tmp.path().join("out");
    let mut parsed: Value =
        serde_json::from_str(&quadratic_config(&out, &["naive"], 0.05)).unwrap();
    parsed["tasks"].as_array_mut().unwrap().truncate(1);
    let config = write_config(tmp.path(), &parsed.to_string());
    run_ok(&["run", config.to_str().unwrap()]);
    let report: Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("report_naive.json")).unwrap())
            .unwrap();
    let loss = report["loss"].as_array().unwrap();
    assert_eq!(loss.len(), 1);
    assert_eq!(loss[0].as_array().unwrap().len(), 1);
    assert!(loss[0][0].as_f64().unwrap() >= 0.0);
}

#[test]
fn invalid_config_exits_with_code_two_and_names_the_field() {
    let tmp = TempDir::new().unwrap();
    let out = tmp.path().join("out");
    let body = quadratic_config(&out, &["naive"], 0.05).replace(
        r#""input_dim": 8,
       "seed": 201"#,
        r#""input_dim": 9,
       "seed": 201"#,
    );
    let config = write_config(tmp.path(), &body);
    let result = bin()
        .args(["run", config.to_str().unwrap()])
        .output()
        .unwrap();
    assert_eq!(exit_code(&result), 2);
    let stderr = String::from_utf8_lossy(&result.stderr);
    assert!(
        stderr.contains("tasks[0]"),
        "diagnostic should name the offending field, got: {stderr}"
    );
}

#[test]
fn unknown_config_key_is_rejected() {
    let tmp = TempDir::new().unwrap();
    let out = tmp.path().join("out");
    let body = quadratic_config(&out, &["naive"], 0.05).replace(
        r#""schema_version": 1,"#,
        r#""schema_version": 1, "surprise": true,"#,
    );
    let config = write_config(tmp.path(), &body);
    let result = bin()
        .args(["run", config.to_str().unwrap()])
        .output()
        .unwrap();
    assert_eq!(exit_code(&result), 2);
    assert!(String::from_utf8_lossy(&result.stderr).contains("surprise"));
}

/// The shipped example configs are not decoration: the double-counting one
/// must show ewc_multi drifting from the exact posterior mean while
/// laplace_single stays on it, and the forgetting one must show naive
/// losing the first task where laplace_single keeps it.
#[test]
fn shipped_configs_reproduce_their_headline_effects() {
    let tmp = TempDir::new().unwrap();
    let configs = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");

    let out = tmp.path().join("dc");
    run_ok(&[
        "run",
        configs.join("double_counting.cfg").to_str().unwrap(),
        "--out-dir",
        out.to_str().unwrap(),
    ]);
    let summary: Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("summary.json")).unwrap()).unwrap();
    let dist = |name: &str| -> f64 {
        summary["strategies"]
            .as_array()
            .unwrap()
            .iter()
            .find(|s| s["strategy"] == name)
            .unwrap()["final_oracle_mean_distance"]
            .as_f64()
            .unwrap()
    };
    assert!(
        dist("laplace_single") < 1e-6,
        "laplace {}",
        dist("laplace_single")
    );
    assert!(dist("ewc_multi") > 1e-5, "ewc {}", dist("ewc_multi"));

    let out = tmp.path().join("fg");
    run_ok(&[
        "run",
        configs.join("forgetting.cfg").to_str().unwrap(),
        "--out-dir",
        out.to_str().unwrap(),
    ]);
    let loss = |strategy: &str, task: usize| -> f64 {
        let report: Value = serde_json::from_str(
            &std::fs::read_to_string(out.join(format!("report_{strategy}.json"))).unwrap(),
        )
        .unwrap();
        report["loss"][task][2].as_f64().unwrap()
    };
    assert!(loss("naive", 0) >= 2.0 * loss("laplace_single", 0));
    assert!(loss("laplace_single", 2) <= 1.5 * loss("naive", 2));
}

#[test]
fn divergent_run_exits_with_code_three() {
    let tmp = TempDir::new().unwrap();
    let out = tmp.path().join("out");
    let config = write_config(tmp.path(), &quadratic_config(&out, &["naive"], 1e9));
    let result = bin()
        .args(["run", config.to_str().unwrap()])
        .output()
        .unwrap();
    assert_eq!(exit_code(&result), 3);
    let stderr = String::from_utf8_lossy(&result.stderr);
    assert!(
        stderr.contains("step"),
        "divergence should report the step, got: {stderr}"
    );
}

#[test]
fn export_round_trips_losses_and_rejects_missing_reports() {
    let tmp = TempDir::new().unwrap();
    let out = tmp.path().join("out");
    let config = write_config(
        tmp.path(),
        &quadratic_config(&out, &["laplace_single"], 0.05),
    );
    run_ok(&["run", config.to_str().unwrap()]);

    let report_path = out.join("report_laplace_single.json");
    run_ok(&["export", report_path.to_str().unwrap(), "--format", "csv"]);
    let report: Value =
        serde_json::from_str(&std::fs::read_to_string(&report_path).unwrap()).unwrap();
    let csv = std::fs::read_to_string(out.join("report_laplace_single_loss.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next().unwrap(), "task,after:task0,after:task1");
    for (t, line) in lines.enumerate() {
        for (s, cell) in line.split(',').skip(1).enumerate() {
            let from_report = report["loss"][t][s].as_f64();
            match from_report {
                // Shortest-roundtrip printing means the parse is exact.
                Some(v) => assert_eq!(cell.parse::<f64>().unwrap(), v),
                None => assert!(cell.is_empty()),
            }
        }
    }

    run_ok(&[
        "export",
        report_path.to_str().unwrap(),
        "--format",
        "structured",
    ]);
    let exported = std::fs::read(out.join("report_laplace_single_export.json")).unwrap();
    assert_eq!(exported, std::fs::read(&report_path).unwrap());

    let missing = bin()
        .args([
            "export",
            out.join("nope.json").to_str().unwrap(),
            "--format",
            "csv",
        ])
        .output()
        .unwrap();
    assert_eq!(exit_code(&missing), 2);
}

#[test]
fn verify_command_passes_clean_and_catches_the_injected_fault() {
    let clean = run_ok(&["verify"]);
    let stdout = String::from_utf8_lossy(&clean.stdout);
    assert!(stdout.contains("all 8 properties passed"), "got: {stdout}");

    let faulted = bin()
        .args(["verify", "--fault-unweighted-center"])
        .output()
        .unwrap();
    assert_eq!(exit_code(&faulted), 1);
    let stdout = String::from_utf8_lossy(&faulted.stdout);
    assert!(
        stdout.contains("FAIL penalty_gradient_identity"),
        "got: {stdout}"
    );
    assert!(
        stdout.contains("FAIL decomposition_roundtrip"),
        "got: {stdout}"
    );
}
