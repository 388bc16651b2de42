//! Run reports: per-stage loss/proxy matrices, oracle distances, and their
//! serialized forms.
//!
//! A report's matrices are indexed `[task][stage]`. Stage `s` is the state
//! after the run's s-th training event (one per task in sequence order,
//! plus one per revisit). Cells are `None` for tasks not yet seen at that
//! stage, so the task-order part of every matrix is lower triangular.
//! Revisit stages see every task and fill whole columns.
//!
//! Reports serialize to pretty JSON with a schema version. Wall-clock
//! timings are kept in memory for logging but never serialized: two runs of
//! the same config must produce byte-identical report files.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::consolidate::TaskId;
use crate::error::{Error, Result};
use crate::params::{DiagPrecision, ParamVector};
use crate::trainer::Strategy;

pub const REPORT_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunReport {
    pub schema_version: u32,
    pub strategy: Strategy,
    pub task_ids: Vec<TaskId>,
    /// One label per stage: the trained task's id, or "revisit:<id>".
    pub stage_labels: Vec<String>,
    /// True data loss (total negative log-likelihood) of task t's dataset
    /// under the parameters after stage s.
    pub loss: Vec<Vec<Option<f64>>>,
    /// Penalty-based stand-in for the same quantity, defined only for
    /// strategies that keep a per-task penalty around.
    pub proxy: Vec<Vec<Option<f64>>>,
    /// Infinity distance from the stage parameters to the exact Bayes
    /// posterior mean over the tasks seen so far (diagonal-design runs only).
    pub oracle_mean_distance: Vec<Option<f64>>,
    /// Infinity distance from the consolidated precision to the exact
    /// posterior precision diagonal, where a consolidated state exists.
    pub oracle_precision_distance: Vec<Option<f64>>,
    pub converged: Vec<bool>,
    pub steps: Vec<usize>,
    pub final_grad_inf_norm: Vec<f64>,
    /// Size of the strategy's penalty state after each stage, measured on
    /// the fixed-width normalized encoding.
    pub state_bytes: Vec<usize>,
    pub stage_params: Vec<ParamVector>,
    pub final_params: ParamVector,
    pub consolidated_precision: Option<DiagPrecision>,
    /// Full experiment configuration, echoed verbatim for reproducibility.
    pub config_echo: serde_json::Value,
    /// Wall-clock per stage, milliseconds. Logged, not serialized.
    #[serde(skip)]
    pub wall_ms: Vec<f64>,
}

impl RunReport {
    /// Shape and finiteness checks; matrices must be lower triangular over
    /// the initial task stages and dense over revisit stages.
    pub fn validate(&self) -> Result<()> {
        let n_tasks = self.task_ids.len();
        let n_stages = self.stage_labels.len();
        let check_matrix = |m: &Vec<Vec<Option<f64>>>, name: &str| -> Result<()> {
            if m.len() != n_tasks {
                return Err(Error::InconsistentState(format!(
                    "{name} matrix has {} rows for {n_tasks} tasks",
                    m.len()
                )));
            }
            for (t, row) in m.iter().enumerate() {
                if row.len() != n_stages {
                    return Err(Error::InconsistentState(format!(
                        "{name} row {t} has {} stages, expected {n_stages}",
                        row.len()
                    )));
                }
                for (s, cell) in row.iter().enumerate() {
                    if let Some(v) = cell {
                        if !v.is_finite() {
                            return Err(Error::NonFinite {
                                context: "report matrix",
                                index: t * n_stages + s,
                            });
                        }
                    }
                }
            }
            Ok(())
        };
        check_matrix(&self.loss, "loss")?;
        check_matrix(&self.proxy, "proxy")?;
        for (t, row) in self.loss.iter().enumerate() {
            for (s, cell) in row.iter().enumerate() {
                // Stages beyond the task list are revisits and see all tasks.
                let seen = s >= t || s >= n_tasks;
                if seen != cell.is_some() {
                    return Err(Error::InconsistentState(format!(
                        "loss[{t}][{s}] should be {} but is {}",
                        if seen { "present" } else { "absent" },
                        if cell.is_some() { "present" } else { "absent" },
                    )));
                }
            }
        }
        let per_stage_lens = [
            self.oracle_mean_distance.len(),
            self.oracle_precision_distance.len(),
            self.converged.len(),
            self.steps.len(),
            self.final_grad_inf_norm.len(),
            self.state_bytes.len(),
            self.stage_params.len(),
        ];
        if per_stage_lens.iter().any(|l| *l != n_stages) {
            return Err(Error::InconsistentState(
                "per-stage report vectors disagree on the stage count".into(),
            ));
        }
        Ok(())
    }

    /// Mean true loss over all tasks at the final stage.
    pub fn final_average_loss(&self) -> Option<f64> {
        let last = self.stage_labels.len().checked_sub(1)?;
        let mut total = 0.0;
        for row in &self.loss {
            total += row[last]?;
        }
        Some(total / self.loss.len() as f64)
    }

    /// Final-stage loss on one task.
    pub fn final_loss_for(&self, task: &TaskId) -> Option<f64> {
        let t = self.task_ids.iter().position(|id| id == task)?;
        *self.loss[t].last()?
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let report: RunReport = serde_json::from_str(text)?;
        if report.schema_version != REPORT_SCHEMA_VERSION {
            return Err(Error::InvalidArgument(format!(
                "unsupported report schema_version {}",
                report.schema_version
            )));
        }
        report.validate()?;
        Ok(report)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        Ok(std::fs::write(path, self.to_json()? + "\n")?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn loss_csv(&self) -> String {
        matrix_to_csv(&self.task_ids, &self.stage_labels, &self.loss)
    }

    pub fn proxy_csv(&self) -> String {
        matrix_to_csv(&self.task_ids, &self.stage_labels, &self.proxy)
    }
}

/// CSV form of a `[task][stage]` matrix: header row, one row per task,
/// empty cells for undefined entries. Values print in shortest-roundtrip
/// form, so re-parsing recovers them exactly.
fn matrix_to_csv(tasks: &[TaskId], stages: &[String], m: &[Vec<Option<f64>>]) -> String {
    let mut out = String::from("task");
    for s in stages {
        out.push_str(",after:");
        out.push_str(s);
    }
    out.push('\n');
    for (id, row) in tasks.iter().zip(m) {
        out.push_str(id.as_str());
        for cell in row {
            out.push(',');
            if let Some(v) = cell {
                out.push_str(&format!("{v}"));
            }
        }
        out.push('\n');
    }
    out
}

/// Stage labels, task ids, and the `[task][stage]` matrix recovered from
/// a CSV export.
pub type ParsedMatrix = (Vec<String>, Vec<TaskId>, Vec<Vec<Option<f64>>>);

/// Parses a matrix written by [`RunReport::loss_csv`].
pub fn parse_matrix_csv(text: &str) -> Result<ParsedMatrix> {
    let mut lines = text.lines();
    let header = lines
        .next()
        .ok_or_else(|| Error::InvalidArgument("empty CSV".into()))?;
    let mut cols = header.split(',');
    if cols.next() != Some("task") {
        return Err(Error::InvalidArgument(
            "CSV header must start with 'task'".into(),
        ));
    }
    let stages: Vec<String> = cols
        .map(|c| {
            c.strip_prefix("after:")
                .map(str::to_string)
                .ok_or_else(|| Error::InvalidArgument(format!("bad stage column {c:?}")))
        })
        .collect::<Result<_>>()?;
    let mut tasks = Vec::new();
    let mut matrix = Vec::new();
    for line in lines {
        if line.is_empty() {
            continue;
        }
        let mut cells = line.split(',');
        let id = cells
            .next()
            .ok_or_else(|| Error::InvalidArgument("missing task id cell".into()))?;
        tasks.push(TaskId::new(id));
        let row: Vec<Option<f64>> = cells
            .map(|c| {
                if c.is_empty() {
                    Ok(None)
                } else {
                    c.parse::<f64>()
                        .map(Some)
                        .map_err(|e| Error::InvalidArgument(format!("bad CSV number {c:?}: {e}")))
                }
            })
            .collect::<Result<_>>()?;
        if row.len() != stages.len() {
            return Err(Error::InvalidArgument(format!(
                "row for task {id} has {} cells, header has {}",
                row.len(),
                stages.len()
            )));
        }
        matrix.push(row);
    }
    Ok((stages, tasks, matrix))
}

/// Per-strategy digest used in the comparison summary file.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StrategySummary {
    pub strategy: Strategy,
    pub final_average_loss: Option<f64>,
    /// Final-stage loss per task, in task order.
    pub final_losses: Vec<Option<f64>>,
    pub final_oracle_mean_distance: Option<f64>,
    pub final_oracle_precision_distance: Option<f64>,
    pub state_bytes: Vec<usize>,
    pub all_converged: bool,
    pub total_steps: usize,
}

impl StrategySummary {
    pub fn from_report(report: &RunReport) -> Self {
        let last = report.stage_labels.len().saturating_sub(1);
        Self {
            strategy: report.strategy,
            final_average_loss: report.final_average_loss(),
            final_losses: report
                .loss
                .iter()
                .map(|row| row.get(last).copied().flatten())
                .collect(),
            final_oracle_mean_distance: report.oracle_mean_distance.last().copied().flatten(),
            final_oracle_precision_distance: report
                .oracle_precision_distance
                .last()
                .copied()
                .flatten(),
            state_bytes: report.state_bytes.clone(),
            all_converged: report.converged.iter().all(|c| *c),
            total_steps: report.steps.iter().sum(),
        }
    }
}

/// Cross-strategy comparison written once per `run` invocation.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ComparisonSummary {
    pub schema_version: u32,
    pub task_ids: Vec<TaskId>,
    pub strategies: Vec<StrategySummary>,
    pub config_echo: serde_json::Value,
}

impl ComparisonSummary {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_report() -> RunReport {
        RunReport {
            schema_version: REPORT_SCHEMA_VERSION,
            strategy: Strategy::LaplaceSingle,
            task_ids: vec![TaskId::new("A"), TaskId::new("B"), TaskId::new("C")],
            stage_labels: vec!["A".into(), "B".into(), "C".into()],
            loss: vec![
                vec![Some(1.0), Some(1.5), Some(2.5)],
                vec![None, Some(0.5), Some(0.75)],
                vec![None, None, Some(0.25)],
            ],
            proxy: vec![
                vec![None, None, None],
                vec![None, None, None],
                vec![None, None, None],
            ],
            oracle_mean_distance: vec![Some(1e-9), Some(2e-9), Some(3e-9)],
            oracle_precision_distance: vec![Some(0.0), Some(0.0), Some(0.0)],
            converged: vec![true, true, true],
            steps: vec![10, 20, 30],
            final_grad_inf_norm: vec![1e-10, 1e-10, 1e-10],
            state_bytes: vec![60, 60, 60],
            stage_params: vec![
                ParamVector::zeros(2),
                ParamVector::zeros(2),
                ParamVector::zeros(2),
            ],
            final_params: ParamVector::zeros(2),
            consolidated_precision: None,
            config_echo: serde_json::Value::Null,
            wall_ms: vec![1.0, 2.0, 3.0],
        }
    }

    #[test]
    fn validate_accepts_triangular_matrices() {
        sample_report().validate().unwrap();
    }

    #[test]
    fn validate_rejects_upper_triangle_entries() {
        let mut r = sample_report();
        r.loss[2][0] = Some(1.0);
        assert!(r.validate().is_err());
        let mut r = sample_report();
        r.loss[0][2] = None;
        assert!(r.validate().is_err());
    }

    #[test]
    fn validate_rejects_non_finite_and_ragged_rows() {
        let mut r = sample_report();
        r.loss[0][0] = Some(f64::NAN);
        assert!(r.validate().is_err());
        let mut r = sample_report();
        r.loss[1].pop();
        assert!(r.validate().is_err());
    }

    #[test]
    fn final_average_loss_averages_the_last_column() {
        let r = sample_report();
        let expect = (2.5 + 0.75 + 0.25) / 3.0;
        assert!((r.final_average_loss().unwrap() - expect).abs() <= 1e-15);
        assert_eq!(r.final_loss_for(&TaskId::new("C")), Some(0.25));
        assert_eq!(r.final_loss_for(&TaskId::new("missing")), None);
    }

    #[test]
    fn json_roundtrip_preserves_everything_but_wall_clock() {
        let r = sample_report();
        let text = r.to_json().unwrap();
        let back = RunReport::from_json(&text).unwrap();
        assert_eq!(back.to_json().unwrap(), text);
        assert!(back.wall_ms.is_empty());
        assert!(!text.contains("wall_ms"));
    }

    #[test]
    fn wrong_schema_version_is_rejected() {
        let mut r = sample_report();
        r.schema_version = 99;
        let text = serde_json::to_string(&r).unwrap();
        assert!(RunReport::from_json(&text).is_err());
    }

    #[test]
    fn csv_export_shape_and_empty_upper_cells() {
        let r = sample_report();
        let csv = r.loss_csv();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines.len(), 4);
        assert_eq!(lines[0], "task,after:A,after:B,after:C");
        assert_eq!(lines[3].split(',').count(), 4);
        assert!(lines[2].starts_with("B,,"));
        assert!(lines[3].starts_with("C,,,"));
    }

    #[test]
    fn csv_reimport_is_exact() {
        let mut r = sample_report();
        // Awkward values: shortest-roundtrip printing must survive parsing.
        r.loss[0][0] = Some(std::f64::consts::PI);
        r.loss[1][1] = Some(1.0 / 3.0);
        r.loss[2][2] = Some(6.02214076e23);
        let (stages, tasks, matrix) = parse_matrix_csv(&r.loss_csv()).unwrap();
        assert_eq!(stages, r.stage_labels);
        assert_eq!(tasks, r.task_ids);
        assert_eq!(matrix, r.loss);
    }

    #[test]
    fn csv_loss_and_proxy_columns_align() {
        let r = sample_report();
        let (ls, _, _) = parse_matrix_csv(&r.loss_csv()).unwrap();
        let (ps, _, _) = parse_matrix_csv(&r.proxy_csv()).unwrap();
        assert_eq!(ls, ps);
    }

    #[test]
    fn malformed_csv_is_rejected() {
        assert!(parse_matrix_csv("").is_err());
        assert!(parse_matrix_csv("wrong,after:A\nA,1\n").is_err());
        assert!(parse_matrix_csv("task,stage\nA,1\n").is_err());
        assert!(parse_matrix_csv("task,after:A\nA,notanumber\n").is_err());
        assert!(parse_matrix_csv("task,after:A\nA,1,2\n").is_err());
    }

    #[test]
    fn summary_reflects_the_report() {
        let r = sample_report();
        let s = StrategySummary::from_report(&r);
        assert_eq!(s.strategy, Strategy::LaplaceSingle);
        assert_eq!(s.total_steps, 60);
        assert!(s.all_converged);
        assert_eq!(s.final_losses, vec![Some(2.5), Some(0.75), Some(0.25)]);
        assert_eq!(s.final_oracle_mean_distance, Some(3e-9));
    }
}
