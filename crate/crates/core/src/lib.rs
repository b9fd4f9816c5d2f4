//! Permutation-invariant set networks built on a small reverse-mode
//! autodiff engine: Deep Sets, Set Transformer, their clean-path residual
//! variants with set norm, synthetic set tasks, training, and gradient
//! diagnostics.

pub mod autodiff;
mod binio;
pub mod blocks;
pub mod cli;
pub mod data;
pub mod diagnostics;
pub mod error;
pub mod json;
pub mod model;
pub mod norm;
pub mod params;
pub mod rng;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
