//! Command-line harness: batch runs from a config file, the built-in
//! verification suite, and report exports. No interactive state; every
//! invocation is one process whose outputs are fully determined by its
//! inputs.
//!
//! Exit codes: 0 success, 2 invalid config or CLI input, 3 training
//! divergence, 1 anything else (including verification failures).

use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};

use crate::config::ExperimentConfig;
use crate::consolidate::TaskId;
use crate::error::{Error, Result};
use crate::net::Checkpoint;
use crate::report::{ComparisonSummary, RunReport, StrategySummary, REPORT_SCHEMA_VERSION};
use crate::tasks;
use crate::trainer::{run_sequence, SequenceSetup};
use crate::verify::{self, FaultMode};

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_INVALID_INPUT: i32 = 2;
pub const EXIT_DIVERGED: i32 = 3;

#[derive(Parser)]
#[command(
    name = "ewclab",
    version,
    about = "Sequential-learning consolidation experiments with exact posterior checks",
    after_help = "Set EWCLAB_LOG=info (or debug) for progress logging."
)]
pub struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run every strategy listed in a config; write one report per
    /// strategy plus a comparison summary.
    Run {
        /// Path to the experiment config (JSON).
        config: PathBuf,
        /// Replace the optimizer's shuffle seed from the config.
        #[arg(long)]
        seed_override: Option<u64>,
        /// Write outputs here instead of the config's output.dir.
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
    /// Run the built-in property suite; print pass/fail per property.
    Verify {
        /// Deliberately misdivide per-task penalty centers to demonstrate
        /// the suite catches a broken debiasing rule.
        #[arg(long)]
        fault_unweighted_center: bool,
    },
    /// Export a report's loss and proxy matrices (CSV) or the full report.
    Export {
        /// Path to a report written by `run`.
        report: PathBuf,
        #[arg(long, value_enum)]
        format: ExportFormat,
        /// Write exports here instead of next to the report.
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ExportFormat {
    Csv,
    Structured,
}

/// Parses the process arguments, runs the command, and maps errors to exit
/// codes with a diagnostic on stderr.
pub fn main_entry() -> i32 {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("EWCLAB_LOG", "warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run {
            config,
            seed_override,
            out_dir,
        } => cmd_run(&config, seed_override, out_dir.as_deref()),
        Command::Verify {
            fault_unweighted_center,
        } => {
            let fault = if fault_unweighted_center {
                FaultMode::UnweightedCenterDenominator
            } else {
                FaultMode::None
            };
            cmd_verify(fault)
        }
        Command::Export {
            report,
            format,
            out_dir,
        } => cmd_export(&report, format, out_dir.as_deref()),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code_for(&e)
        }
    }
}

fn exit_code_for(e: &Error) -> i32 {
    match e {
        Error::InvalidConfig(_) | Error::InvalidArgument(_) => EXIT_INVALID_INPUT,
        Error::Diverged { .. } => EXIT_DIVERGED,
        _ => EXIT_FAILURE,
    }
}

/// Executes the full strategy comparison a config describes. Writes, under
/// the output directory: `report_<strategy>.json`, `checkpoint_<strategy>.json`,
/// and `summary.json`.
pub fn cmd_run(
    config_path: &Path,
    seed_override: Option<u64>,
    out_dir: Option<&Path>,
) -> Result<i32> {
    let mut config = ExperimentConfig::load(config_path)?;
    if let Some(seed) = seed_override {
        config.optimizer.seed = seed;
    }
    // The echo captures everything that determines the numbers, so a rerun
    // from the report alone reproduces them byte for byte. Where the files
    // land is delivery, not experiment: --out-dir stays out of the echo.
    let echo = serde_json::to_value(&config)?;
    if let Some(dir) = out_dir {
        config.output.dir = dir.to_path_buf();
    }

    let generated = tasks::generate_sequence(&config.tasks)?;
    let named: Vec<(TaskId, crate::dataset::TaskDataset)> = generated
        .into_iter()
        .enumerate()
        .map(|(i, (data, _))| (TaskId::new(format!("task{i}")), data))
        .collect();

    let dir = &config.output.dir;
    std::fs::create_dir_all(dir)?;

    let mut summaries = Vec::with_capacity(config.strategies.len());
    for &strategy in &config.strategies {
        let setup = SequenceSetup {
            architecture: config.model.architecture.clone(),
            init_seed: config.model.init_seed,
            strategy,
            hyper: config.hyperparams.clone(),
            optimizer: config.optimizer.clone(),
            fisher_mode: config.fisher,
        };
        let mut report = run_sequence(setup, named.clone())?;
        report.config_echo = echo.clone();
        report.validate()?;
        report.save(&dir.join(format!("report_{strategy}.json")))?;
        Checkpoint::new(
            config.model.architecture.clone(),
            report.final_params.clone(),
        )?
        .save(&dir.join(format!("checkpoint_{strategy}.json")))?;
        let summary = StrategySummary::from_report(&report);
        print_strategy_line(&summary);
        summaries.push(summary);
    }

    let comparison = ComparisonSummary {
        schema_version: REPORT_SCHEMA_VERSION,
        task_ids: named.iter().map(|(id, _)| id.clone()).collect(),
        strategies: summaries,
        config_echo: echo,
    };
    std::fs::write(dir.join("summary.json"), comparison.to_json()? + "\n")?;
    println!(
        "wrote {} report(s) and summary.json to {}",
        config.strategies.len(),
        dir.display()
    );
    Ok(EXIT_OK)
}

fn print_strategy_line(s: &StrategySummary) {
    let avg = s
        .final_average_loss
        .map_or_else(|| "-".to_string(), |v| format!("{v:.6}"));
    let mean_d = s
        .final_oracle_mean_distance
        .map_or_else(|| "-".to_string(), |v| format!("{v:.3e}"));
    println!(
        "{:<24} final avg loss {:>12}  oracle mean dist {:>10}  state {} bytes",
        s.strategy.to_string(),
        avg,
        mean_d,
        s.state_bytes.last().copied().unwrap_or(0)
    );
}

/// Runs the property suite, printing one line per property.
pub fn cmd_verify(fault: FaultMode) -> Result<i32> {
    if fault != FaultMode::None {
        println!("fault injection: per-task centers use the unweighted divisor");
    }
    let outcomes = verify::run_all(fault);
    for o in &outcomes {
        let status = if o.passed { "PASS" } else { "FAIL" };
        println!("{status} {:<30} {}", o.name, o.detail);
    }
    let failed: Vec<&str> = outcomes
        .iter()
        .filter(|o| !o.passed)
        .map(|o| o.name)
        .collect();
    if failed.is_empty() {
        println!("all {} properties passed", outcomes.len());
        Ok(EXIT_OK)
    } else {
        println!(
            "{} of {} properties failed: {}",
            failed.len(),
            outcomes.len(),
            failed.join(", ")
        );
        Ok(EXIT_FAILURE)
    }
}

/// Writes `<stem>_loss.csv` and `<stem>_proxy.csv`, or `<stem>_export.json`
/// for the structured format.
pub fn cmd_export(report_path: &Path, format: ExportFormat, out_dir: Option<&Path>) -> Result<i32> {
    if !report_path.exists() {
        return Err(Error::InvalidArgument(format!(
            "report {} does not exist",
            report_path.display()
        )));
    }
    let report = RunReport::load(report_path)?;
    let stem = report_path
        .file_stem()
        .and_then(|s| s.to_str())
        .unwrap_or("report");
    let dir = match out_dir {
        Some(d) => d.to_path_buf(),
        None => report_path
            .parent()
            .map_or_else(|| PathBuf::from("."), Path::to_path_buf),
    };
    std::fs::create_dir_all(&dir)?;
    match format {
        ExportFormat::Csv => {
            let loss = dir.join(format!("{stem}_loss.csv"));
            let proxy = dir.join(format!("{stem}_proxy.csv"));
            std::fs::write(&loss, report.loss_csv())?;
            std::fs::write(&proxy, report.proxy_csv())?;
            println!("wrote {}", loss.display());
            println!("wrote {}", proxy.display());
        }
        ExportFormat::Structured => {
            let path = dir.join(format!("{stem}_export.json"));
            std::fs::write(&path, report.to_json()? + "\n")?;
            println!("wrote {}", path.display());
        }
    }
    Ok(EXIT_OK)
}

#[cfg(test)]
mod tests {
    use super::*;
    use clap::CommandFactory;

    #[test]
    fn cli_definition_is_consistent() {
        Cli::command().debug_assert();
    }

    #[test]
    fn exit_codes_distinguish_error_classes() {
        assert_eq!(
            exit_code_for(&Error::InvalidConfig("x".into())),
            EXIT_INVALID_INPUT
        );
        assert_eq!(
            exit_code_for(&Error::Diverged {
                step: 3,
                reason: "x".into()
            }),
            EXIT_DIVERGED
        );
        assert_eq!(
            exit_code_for(&Error::InconsistentState("x".into())),
            EXIT_FAILURE
        );
    }
}
