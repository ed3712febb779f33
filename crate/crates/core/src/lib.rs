//! Per-layer SVD rank selection for layered linear models.
//!
//! A recurrent policy proposes one truncation rank per layer, schemes that miss the speedup
//! target are punished without evaluation, and the rest are scored on a proxy dataset.

pub mod container;
pub mod condense;
pub mod controller;
pub mod error;
pub mod evaluator;
pub mod lowrank;
pub mod matrix;
pub mod netmodel;
pub mod reward;
pub mod search;
pub mod space;

pub use error::{Error, Result};
pub use matrix::Matrix;
