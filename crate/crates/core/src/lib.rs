//! Semi-supervised classification with a Mean-Teacher student and a
//! co-trained pairwise similarity network.
//!
//! The crate is organized bottom-up: [`autodiff`] provides the tensors and
//! reverse-mode gradients, [`networks`] the feature extractor, classifier
//! and similarity heads, [`objectives`] the loss terms, [`pseudo_labels`]
//! the label conversions between the two heads, [`teacher`] the EMA model,
//! [`data`] datasets and splits, and [`trainer`] the training loop and
//! experiment harness.

pub mod autodiff;
pub mod checkpoint;
pub mod error;
pub mod gradcheck;
pub mod gradsuite;
pub mod networks;
pub mod objectives;
pub mod params;
pub mod pseudo_labels;
pub mod rng;
pub mod teacher;
pub mod tensor;
pub mod trainer;
pub mod data;

pub use error::{Error, Result};
pub use tensor::Tensor;
