//! Class-incremental learning with frozen random hidden layers and an
//! orthogonally projected linear output head.

mod codec;
pub mod data;
pub mod error;
pub mod harness;
pub mod linalg;
pub mod metrics;
pub mod output_head;
pub mod rep_learning;
pub mod sparse_solver;

pub use error::{Error, Result};
