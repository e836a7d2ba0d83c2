//! Unsupervised pretraining for skeleton motion sequences.
//!
//! The pipeline: raw joint sequences are disentangled into global
//! translation and local joint offsets, embedded into tokens, run through
//! stacked spatial+temporal attention blocks with a trainable positional
//! tensor, and pretrained by classifying the direction and magnitude of
//! per-joint displacements over several frame intervals. Downstream
//! evaluation is a frozen-backbone linear probe or semi-supervised
//! fine-tuning.

pub mod analysis;
pub mod cli;
pub mod data;
pub mod model;
pub mod mpdp;
pub mod tensor;
pub mod train;

pub use cli::run_cli;
