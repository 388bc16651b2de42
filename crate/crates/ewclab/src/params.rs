//! Flat parameter vectors and diagonal precisions.
//!
//! The network module owns the flattening convention (layer by layer,
//! weight rows then biases); everything downstream treats a [`ParamVector`]
//! as an opaque ordered list of coordinates. Both types validate at
//! construction so arithmetic can assume finite, length-consistent inputs.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Flat vector of model parameters. All entries are finite.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ParamVector(Vec<f64>);

impl ParamVector {
    /// Validating constructor for values crossing an API boundary.
    pub fn new(values: Vec<f64>) -> Result<Self> {
        check_finite(&values, "ParamVector")?;
        Ok(Self(values))
    }

    pub fn zeros(len: usize) -> Self {
        Self(vec![0.0; len])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.0
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }

    pub fn inf_norm(&self) -> f64 {
        self.0.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn l2_norm(&self) -> f64 {
        self.0.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// Elementwise difference, length-checked.
    pub fn sub(&self, other: &Self) -> Result<Self> {
        check_len("ParamVector::sub", self.len(), other.len())?;
        Ok(Self(
            self.0.iter().zip(&other.0).map(|(a, b)| a - b).collect(),
        ))
    }

    /// self += scale * other, length-checked.
    pub fn add_scaled(&mut self, other: &Self, scale: f64) -> Result<()> {
        check_len("ParamVector::add_scaled", self.len(), other.len())?;
        for (a, b) in self.0.iter_mut().zip(&other.0) {
            *a += scale * b;
        }
        Ok(())
    }

    /// Infinity-norm distance, length-checked.
    pub fn inf_dist(&self, other: &Self) -> Result<f64> {
        check_len("ParamVector::inf_dist", self.len(), other.len())?;
        Ok(self
            .0
            .iter()
            .zip(&other.0)
            .fold(0.0, |m, (a, b)| m.max((a - b).abs())))
    }
}

impl std::ops::Index<usize> for ParamVector {
    type Output = f64;
    fn index(&self, i: usize) -> &f64 {
        &self.0[i]
    }
}

/// Diagonal of a precision matrix. Entries are finite and nonnegative.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct DiagPrecision(Vec<f64>);

impl DiagPrecision {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        check_finite(&values, "DiagPrecision")?;
        if let Some(i) = values.iter().position(|v| *v < 0.0) {
            return Err(Error::InvalidArgument(format!(
                "DiagPrecision entry {i} is negative ({})",
                values[i]
            )));
        }
        Ok(Self(values))
    }

    /// Constant diagonal value * I.
    pub fn constant(len: usize, value: f64) -> Result<Self> {
        Self::new(vec![value; len])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }

    pub fn min_entry(&self) -> f64 {
        self.0.iter().fold(f64::INFINITY, |m, v| m.min(*v))
    }

    /// Elementwise sum, length-checked.
    pub fn add(&self, other: &Self) -> Result<Self> {
        check_len("DiagPrecision::add", self.len(), other.len())?;
        Self::new(self.0.iter().zip(&other.0).map(|(a, b)| a + b).collect())
    }

    /// Elementwise scale by a nonnegative factor.
    pub fn scaled(&self, factor: f64) -> Result<Self> {
        if !factor.is_finite() || factor < 0.0 {
            return Err(Error::InvalidArgument(format!(
                "precision scale factor must be finite and nonnegative (got {factor})"
            )));
        }
        Self::new(self.0.iter().map(|v| v * factor).collect())
    }

    /// Adds a scalar to every entry (e.g. a prior precision).
    pub fn add_scalar(&self, value: f64) -> Result<Self> {
        if !value.is_finite() || value < 0.0 {
            return Err(Error::InvalidArgument(format!(
                "scalar precision must be finite and nonnegative (got {value})"
            )));
        }
        Self::new(self.0.iter().map(|v| v + value).collect())
    }

    pub fn inf_dist(&self, other: &Self) -> Result<f64> {
        check_len("DiagPrecision::inf_dist", self.len(), other.len())?;
        Ok(self
            .0
            .iter()
            .zip(&other.0)
            .fold(0.0, |m, (a, b)| m.max((a - b).abs())))
    }

    /// Entries strictly below `floor` are clamped to exactly zero. Used when
    /// assembling per-task penalties so that numerically degenerate
    /// coordinates contribute no gradient at all.
    pub fn clamped_below(&self, floor: f64) -> Self {
        Self(
            self.0
                .iter()
                .map(|v| if *v < floor { 0.0 } else { *v })
                .collect(),
        )
    }
}

impl std::ops::Index<usize> for DiagPrecision {
    type Output = f64;
    fn index(&self, i: usize) -> &f64 {
        &self.0[i]
    }
}

fn check_finite(values: &[f64], context: &'static str) -> Result<()> {
    if let Some(i) = values.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite { context, index: i });
    }
    Ok(())
}

fn check_len(context: &'static str, expected: usize, got: usize) -> Result<()> {
    if expected != got {
        return Err(Error::DimensionMismatch {
            context,
            expected,
            got,
        });
    }
    Ok(())
}
