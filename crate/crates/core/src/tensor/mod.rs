//! Minimal reverse-mode automatic differentiation over small dense tensors.
//!
//! Values live in a [`Graph`] arena. Every operation appends a node holding
//! its output and the rule needed to push gradients back to its parents, so
//! node ids are already a topological order and [`Value::backward`] is a
//! single reverse sweep.
//!
//! Learnable state is kept outside of graphs in a [`ParameterSet`] of plain
//! tensors. A forward pass binds the set into a fresh graph, which lets many
//! threads run forward/backward over the same frozen parameters at once.

mod graph;
mod kernels;
mod ops;
mod params;

pub use graph::{Graph, Value};
pub use ops::{BatchStats, RunningStats, BN_EPS, BN_MOMENTUM};
pub use params::{grad_check, BoundParams, GradCheckReport, Gradients, ParameterSet};

use thiserror::Error;

/// Highest tensor rank supported (T×C and heads×l×d are all the model needs).
pub const MAX_RANK: usize = 3;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TensorError {
    #[error("invalid shape: {0}")]
    InvalidShape(String),
    #[error("empty input: {0}")]
    EmptyInput(String),
    #[error("invalid probability {0}: must satisfy 0 <= p < 1")]
    InvalidProbability(f64),
    #[error("backward root must be a scalar, got shape {0:?}")]
    InvalidRoot(Vec<usize>),
    #[error("numeric failure: {0}")]
    NumericFailure(String),
    #[error("values belong to different graphs")]
    GraphMismatch,
    #[error("unknown parameter `{0}`")]
    UnknownParameter(String),
}

pub type Result<T, E = TensorError> = std::result::Result<T, E>;

/// Whether stochastic/stateful layers run in training or inference behavior.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Mode {
    Train,
    Eval,
}

/// Dense row-major tensor of `f64`.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: &[usize], data: Vec<f64>) -> Result<Self> {
        if shape.is_empty() || shape.len() > MAX_RANK {
            return Err(TensorError::InvalidShape(format!(
                "rank must be 1..={MAX_RANK}, got {shape:?}"
            )));
        }
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(TensorError::InvalidShape(format!(
                "shape {shape:?} holds {n} elements but data has {}",
                data.len()
            )));
        }
        Ok(Self {
            shape: shape.to_vec(),
            data,
        })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let n = shape.iter().product();
        Self::new(shape, vec![0.0; n]).expect("zeros: invalid rank")
    }

    pub fn full(shape: &[usize], value: f64) -> Self {
        let n = shape.iter().product();
        Self::new(shape, vec![value; n]).expect("full: invalid rank")
    }

    pub fn scalar(value: f64) -> Self {
        Self {
            shape: vec![1],
            data: vec![value],
        }
    }

    /// Builds a `rows × cols` matrix from row slices of equal length.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map(Vec::len).unwrap_or(0);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(TensorError::InvalidShape("ragged rows".into()));
        }
        Self::new(&[rows.len(), cols], rows.concat())
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Size of the last axis.
    pub fn cols(&self) -> usize {
        *self.shape.last().expect("rank >= 1")
    }

    /// Product of all axes but the last.
    pub fn rows(&self) -> usize {
        self.shape[..self.shape.len() - 1].iter().product()
    }

    pub fn row(&self, r: usize) -> &[f64] {
        let c = self.cols();
        &self.data[r * c..(r + 1) * c]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}
