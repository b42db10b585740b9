//! Tensor-product-representation captioning toolkit.
//!
//! Everything is CPU-bound `f64` with explicit seeding; repeated runs with
//! the same seed produce identical bytes.

pub mod captioner;
pub mod cell;
pub mod check;
pub mod checkpoint;
pub mod data;
pub mod error;
pub mod generator;
pub mod graph;
mod init;
pub mod metrics;
pub mod synth;
pub mod tensor;
pub mod tpr;
pub mod trainer;
pub mod vocab;

pub use error::{Error, Result};
pub use graph::{Graph, NodeId};
pub use tensor::Tensor;
