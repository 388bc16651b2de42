//! In-memory task datasets.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Targets for one dataset. The variant must match the model head.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Targets {
    /// One target vector per example (width = model output width).
    Regression(Vec<Vec<f64>>),
    /// One class label per example.
    Classification(Vec<usize>),
}

/// A fixed supervised dataset for one task. Nonempty, rectangular, finite.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskDataset {
    inputs: Vec<Vec<f64>>,
    targets: Targets,
}

impl TaskDataset {
    pub fn regression(inputs: Vec<Vec<f64>>, targets: Vec<Vec<f64>>) -> Result<Self> {
        if targets.len() != inputs.len() {
            return Err(Error::DimensionMismatch {
                context: "TaskDataset targets",
                expected: inputs.len(),
                got: targets.len(),
            });
        }
        let width = targets.first().map_or(0, Vec::len);
        for (i, t) in targets.iter().enumerate() {
            if t.len() != width {
                return Err(Error::InvalidArgument(format!(
                    "regression target {i} has width {}, expected {width}",
                    t.len()
                )));
            }
            if t.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite {
                    context: "regression targets",
                    index: i,
                });
            }
        }
        let ds = Self {
            inputs,
            targets: Targets::Regression(targets),
        };
        ds.validate_inputs()?;
        Ok(ds)
    }

    pub fn classification(inputs: Vec<Vec<f64>>, labels: Vec<usize>) -> Result<Self> {
        if labels.len() != inputs.len() {
            return Err(Error::DimensionMismatch {
                context: "TaskDataset labels",
                expected: inputs.len(),
                got: labels.len(),
            });
        }
        let ds = Self {
            inputs,
            targets: Targets::Classification(labels),
        };
        ds.validate_inputs()?;
        Ok(ds)
    }

    fn validate_inputs(&self) -> Result<()> {
        if self.inputs.is_empty() {
            return Err(Error::InvalidArgument(
                "dataset must contain at least one example".into(),
            ));
        }
        let dim = self.inputs[0].len();
        if dim == 0 {
            return Err(Error::InvalidArgument("inputs must have width >= 1".into()));
        }
        for (i, row) in self.inputs.iter().enumerate() {
            if row.len() != dim {
                return Err(Error::InvalidArgument(format!(
                    "input row {i} has width {}, expected {dim}",
                    row.len()
                )));
            }
            if row.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite {
                    context: "inputs",
                    index: i,
                });
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    pub fn input_dim(&self) -> usize {
        self.inputs[0].len()
    }

    pub fn inputs(&self) -> &[Vec<f64>] {
        &self.inputs
    }

    pub fn targets(&self) -> &Targets {
        &self.targets
    }

    /// Copy of the examples at `indices`, in the given order. Used for
    /// minibatch training.
    pub fn subset(&self, indices: &[usize]) -> Result<Self> {
        if let Some(bad) = indices.iter().find(|i| **i >= self.len()) {
            return Err(Error::InvalidArgument(format!(
                "subset index {bad} out of range for {} examples",
                self.len()
            )));
        }
        let inputs: Vec<Vec<f64>> = indices.iter().map(|i| self.inputs[*i].clone()).collect();
        match &self.targets {
            Targets::Regression(t) => {
                Self::regression(inputs, indices.iter().map(|i| t[*i].clone()).collect())
            }
            Targets::Classification(l) => {
                Self::classification(inputs, indices.iter().map(|i| l[*i]).collect())
            }
        }
    }

    /// Concatenation in argument order. Parts must agree in input width and
    /// target variant. Used by the joint-training baseline.
    pub fn concat(parts: &[&TaskDataset]) -> Result<Self> {
        let first = parts
            .first()
            .ok_or_else(|| Error::InvalidArgument("concat of zero datasets".into()))?;
        let dim = first.input_dim();
        let mut inputs = Vec::new();
        match first.targets {
            Targets::Regression(_) => {
                let mut targets = Vec::new();
                for p in parts {
                    if p.input_dim() != dim {
                        return Err(Error::DimensionMismatch {
                            context: "TaskDataset::concat",
                            expected: dim,
                            got: p.input_dim(),
                        });
                    }
                    let Targets::Regression(t) = &p.targets else {
                        return Err(Error::InvalidArgument(
                            "cannot concatenate regression and classification datasets".into(),
                        ));
                    };
                    inputs.extend(p.inputs.iter().cloned());
                    targets.extend(t.iter().cloned());
                }
                Self::regression(inputs, targets)
            }
            Targets::Classification(_) => {
                let mut labels = Vec::new();
                for p in parts {
                    if p.input_dim() != dim {
                        return Err(Error::DimensionMismatch {
                            context: "TaskDataset::concat",
                            expected: dim,
                            got: p.input_dim(),
                        });
                    }
                    let Targets::Classification(l) = &p.targets else {
                        return Err(Error::InvalidArgument(
                            "cannot concatenate classification and regression datasets".into(),
                        ));
                    };
                    inputs.extend(p.inputs.iter().cloned());
                    labels.extend(l.iter().copied());
                }
                Self::classification(inputs, labels)
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_empty_and_ragged() {
        assert!(TaskDataset::regression(vec![], vec![]).is_err());
        let ragged =
            TaskDataset::regression(vec![vec![1.0, 2.0], vec![3.0]], vec![vec![0.0], vec![0.0]]);
        assert!(ragged.is_err());
    }

    #[test]
    fn rejects_target_count_mismatch() {
        let r = TaskDataset::regression(vec![vec![1.0]], vec![]);
        assert!(matches!(r, Err(Error::DimensionMismatch { .. })));
    }

    #[test]
    fn concat_preserves_order_and_checks_kind() {
        let a = TaskDataset::regression(vec![vec![1.0]], vec![vec![10.0]]).unwrap();
        let b = TaskDataset::regression(vec![vec![2.0]], vec![vec![20.0]]).unwrap();
        let c = TaskDataset::concat(&[&a, &b]).unwrap();
        assert_eq!(c.len(), 2);
        assert_eq!(c.inputs()[1], vec![2.0]);
        let d = TaskDataset::classification(vec![vec![1.0]], vec![0]).unwrap();
        assert!(TaskDataset::concat(&[&a, &d]).is_err());
    }
}
