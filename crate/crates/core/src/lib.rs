//! Bit-level optimized CSI quantization.
//!
//! A convolutional autoencoder compresses a MIMO-OFDM channel matrix into a
//! short codeword, quantizes each entry to `B` bits inside the computation
//! graph (straight-through gradient), and reconstructs the channel at the base
//! station. The crate carries its own reverse-mode autodiff engine, the
//! JC-ResNet encoder/decoder, a synthetic clustered-multipath channel
//! generator with the angular-delay preprocessing chain, Adam training, and
//! NMSE / BER evaluation.

pub mod channel;
pub mod cli;
pub mod error;
pub mod evaluation;
pub mod gradcheck;
pub mod graph;
mod linalg;
pub mod model;
pub mod nn;
pub mod quantizer;
pub mod tensor;
pub mod training;

pub use error::{Error, Result};
pub use graph::{Graph, Var};
pub use tensor::Tensor;
