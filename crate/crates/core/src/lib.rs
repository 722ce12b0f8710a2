//! Air-writing recognition: trajectory preprocessing, a spatio-temporal
//! graph-attention model over a small reverse-mode autodiff engine, CTC,
//! recognition metrics and training.

pub mod ctc;
pub mod error;
pub mod metrics;
pub mod model;
pub mod pipeline;
pub mod tensor;
pub mod training;
pub mod trajectory;
pub mod vocab;

pub use error::{Error, Result};
