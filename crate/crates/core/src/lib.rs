//! Activation maximization for a small convolutional lesion classifier.
//!
//! The crate covers the whole pipeline: synthetic lesion phantoms
//! ([`synthdata`]), a five-layer CNN with hand-written backpropagation
//! ([`tensor`], [`model`]), Adam training with early stopping ([`training`]),
//! and regularized gradient ascent on the input image ([`featureviz`]).

pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod featureviz;
pub mod model;
pub mod pgm;
pub mod synthdata;
pub mod tensor;
pub mod training;
mod util;

pub use checkpoint::{Checkpoint, CheckpointError, TrainingMetadata};
pub use model::{Model, ModelError, ModelParams, ModelSpec};
pub use tensor::{LayerGrads, Tensor, TensorError};
