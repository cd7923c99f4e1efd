//! CorGAN: convolutional GANs composed with a pretrained convolutional
//! autoencoder decoder for synthesizing binary and continuous patient-record
//! matrices, together with fidelity evaluation and a membership-inference
//! privacy audit.

pub mod checkpoint;
pub mod cli;
pub mod data;
pub mod error;
pub mod eval;
pub mod graph;
pub mod models;
pub mod nn;
pub mod pipeline;
pub mod privacy;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use graph::{Graph, NodeId};
pub use tensor::{sample_noise, Tensor};
