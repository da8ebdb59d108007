//! Sparse neural-network training with dynamic parameter reallocation.

pub mod baselines;
pub mod data;
pub mod harness;
pub mod error;
pub mod nn;
pub mod optim;
pub mod param;
pub mod realloc;
pub mod rng;
pub mod schedule;
pub mod sizing;
pub mod sparse;
pub mod tensor;
pub mod verify;

pub use error::{Error, Result};
