//! Experiment configuration: one JSON document describes the model, the
//! task sequence, the strategies to compare, and every seed. Validation is
//! total; any malformed input comes back as a diagnostic naming the field,
//! and unknown keys are rejected at parse time.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::consolidate::Hyperparams;
use crate::error::{Error, Result};
use crate::fisher::FisherMode;
use crate::net::{Architecture, Head};
use crate::tasks::TaskSpec;
use crate::trainer::{OptimizerConfig, Strategy};

pub const CONFIG_SCHEMA_VERSION: u32 = 1;

fn default_fisher() -> FisherMode {
    FisherMode::Observed
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub architecture: Architecture,
    /// Seeds the first stage's parameter initialization.
    #[serde(default)]
    pub init_seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    /// Directory for reports and summaries; `--out-dir` overrides it.
    pub dir: PathBuf,
    /// Version stamp expected on written reports.
    #[serde(default = "default_format_version")]
    pub format_version: u32,
}

fn default_format_version() -> u32 {
    crate::report::REPORT_SCHEMA_VERSION
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema_version: u32,
    pub model: ModelConfig,
    pub tasks: Vec<TaskSpec>,
    pub strategies: Vec<Strategy>,
    pub hyperparams: Hyperparams,
    pub optimizer: OptimizerConfig,
    #[serde(default = "default_fisher")]
    pub fisher: FisherMode,
    pub output: OutputConfig,
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = serde_json::from_str(text)
            .map_err(|e| Error::InvalidConfig(format!("config does not match the schema: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| {
            Error::InvalidConfig(format!("cannot read config {}: {e}", path.display()))
        })?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Structural checks beyond what the schema can express. Every failure
    /// names the offending field.
    pub fn validate(&self) -> Result<()> {
        if self.schema_version != CONFIG_SCHEMA_VERSION {
            return Err(Error::InvalidConfig(format!(
                "schema_version: expected {CONFIG_SCHEMA_VERSION}, got {}",
                self.schema_version
            )));
        }
        self.model
            .architecture
            .validate()
            .map_err(prefix("model.architecture"))?;
        self.hyperparams.validate().map_err(prefix("hyperparams"))?;
        self.optimizer.validate().map_err(prefix("optimizer"))?;

        if self.tasks.is_empty() {
            return Err(Error::InvalidConfig(
                "tasks: must list at least one task".into(),
            ));
        }
        let model_dim = self.model.architecture.input_dim();
        let kind = self.tasks[0].kind;
        if self.tasks.iter().any(|t| t.kind != kind) {
            return Err(Error::InvalidConfig(
                "tasks: all tasks in a sequence must share one kind".into(),
            ));
        }
        for (i, task) in self.tasks.iter().enumerate() {
            task.validate()
                .map_err(prefix_owned(format!("tasks[{i}]")))?;
            if task.input_dim != model_dim {
                return Err(Error::InvalidConfig(format!(
                    "tasks[{i}].input_dim: {} does not match model input width {model_dim}",
                    task.input_dim
                )));
            }
        }
        match (&self.model.architecture.head, kind.is_regression()) {
            (Head::GaussianRegression { .. }, true) | (Head::Categorical, false) => {}
            (Head::GaussianRegression { .. }, false) => {
                return Err(Error::InvalidConfig(
                    "model.architecture.head: gaussian_regression cannot train classification tasks"
                        .into(),
                ));
            }
            (Head::Categorical, true) => {
                return Err(Error::InvalidConfig(
                    "model.architecture.head: categorical cannot train regression tasks".into(),
                ));
            }
        }

        if self.strategies.is_empty() {
            return Err(Error::InvalidConfig(
                "strategies: must list at least one strategy".into(),
            ));
        }
        let mut seen = BTreeSet::new();
        for s in &self.strategies {
            if !seen.insert(s.name()) {
                return Err(Error::InvalidConfig(format!(
                    "strategies: {s} listed more than once"
                )));
            }
        }

        if self.output.format_version != crate::report::REPORT_SCHEMA_VERSION {
            return Err(Error::InvalidConfig(format!(
                "output.format_version: this build writes version {}, config asks for {}",
                crate::report::REPORT_SCHEMA_VERSION,
                self.output.format_version
            )));
        }
        if self.output.dir.as_os_str().is_empty() {
            return Err(Error::InvalidConfig("output.dir: must not be empty".into()));
        }
        Ok(())
    }
}

fn prefix(field: &'static str) -> impl Fn(Error) -> Error {
    move |e| Error::InvalidConfig(format!("{field}: {e}"))
}

fn prefix_owned(field: String) -> impl FnOnce(Error) -> Error {
    move |e| Error::InvalidConfig(format!("{field}: {e}"))
}
