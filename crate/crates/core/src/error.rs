// SPDX-License-Identifier: MIT OR Apache-2.0

use thiserror::Error;

pub type Result<T> = std::result::Result<T, CpdError>;

#[derive(Debug, Error)]
pub enum CpdError {
    #[error("dimension mismatch for {what}: expected {expected}, got {got}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("{what}[{index}] = {value} lies outside the parameter box [{lo}, {hi}]")]
    OutOfBounds {
        what: &'static str,
        index: usize,
        value: f64,
        lo: f64,
        hi: f64,
    },

    #[error("diffusion matrix is singular or not positive definite at observation {index}")]
    SingularDiffusion { index: usize },

    #[error("non-finite value at observation {index}")]
    NonFinite { index: usize },

    #[error("weight matrix is numerically singular (condition number {condition:e})")]
    SingularWeight { condition: f64 },

    #[error("window too short: need at least {needed} observations, got {got}")]
    WindowTooShort { needed: usize, got: usize },

    #[error("no change detected at any split")]
    NoChangeDetected,

    #[error("drift tests require noise_dim == state_dim (got r = {noise_dim}, d = {state_dim})")]
    NoiseDimension { state_dim: usize, noise_dim: usize },

    #[error("limit-law grid too narrow: {fraction:.3} of draws hit the boundary, increase v_max")]
    BoundaryHits { fraction: f64 },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("data error at line {line}: {message}")]
    Data { line: usize, message: String },

    #[error("step {step}: {source}")]
    Step {
        step: &'static str,
        #[source]
        source: Box<CpdError>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl CpdError {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        CpdError::InvalidInput(msg.into())
    }

    /// The innermost error, looking through step labels.
    pub fn root(&self) -> &CpdError {
        match self {
            CpdError::Step { source, .. } => source.root(),
            e => e,
        }
    }
}

pub(crate) trait StepContext<T> {
    fn step(self, step: &'static str) -> Result<T>;
}

impl<T> StepContext<T> for Result<T> {
    fn step(self, step: &'static str) -> Result<T> {
        self.map_err(|e| CpdError::Step { step, source: Box::new(e) })
    }
}
