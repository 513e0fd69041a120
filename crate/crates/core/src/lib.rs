//! Context-aware hierarchical encoder for joint multi-label dialog act
//! detection and BIO slot filling, with its own reverse-mode autodiff core.

pub mod data;
pub mod error;
pub mod metrics;
pub mod model;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
