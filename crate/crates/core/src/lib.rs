//! Self-supervised partial domain adaptation at desk scale.
//!
//! The crate bundles a small reverse-mode autodiff engine, jigsaw-puzzle
//! permutation machinery, a compact convolutional network with object,
//! puzzle and domain heads, synthetic partial-domain-shift data, and the
//! multi-task training loop that ties them together.

pub mod autodiff;
pub mod data;
pub mod error;
pub mod jigsaw;
pub mod network;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use tensor::Tensor;
