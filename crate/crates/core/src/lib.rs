//! Semi-supervised variational autoencoder with a classification head fused
//! into the encoder, together with the data, training and evaluation
//! machinery needed to run the classification, anomaly-detection,
//! generation and disentanglement experiments.

pub mod cli;
pub mod data;
pub mod error;
pub mod evaluation;
pub mod experiment;
pub mod gradcheck;
pub mod model;
pub mod pgm;
pub mod tensor;
pub mod training;

pub use error::{Error, Result};
