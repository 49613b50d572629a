//! Sparse image approximation with encrypted self-contained folding.

pub mod baseline_dct;
pub mod container;
pub mod dictionary;
pub mod error;
pub mod folding;
pub mod image;
pub mod keystream;
pub mod metrics;
pub mod omp2d;
pub mod par;

pub use error::{Error, Result};
