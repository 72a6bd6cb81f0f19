// SPDX-License-Identifier: MIT OR Apache-2.0

//! Change-point detection and localization for discretely observed
//! ergodic diffusions `dX = b(X, β) dt + a(X, α) dW`.

pub mod changepoint;
pub mod cusum;
pub mod error;
pub mod estimate;
pub mod experiment;
pub mod io;
pub mod linalg;
pub mod model;
pub mod optim;
pub mod path;
pub mod pipeline;
pub mod rng;
pub mod simulate;
pub mod terms;

pub use error::{CpdError, Result};
pub use model::{DiffusionModel, HyperbolicModel, OuModel, ParamBox};
pub use path::{Interval, Path};
pub use pipeline::{run_pipeline, Branch, DecisionReport, PipelineConfig};
