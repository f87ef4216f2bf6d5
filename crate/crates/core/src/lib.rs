//! A small, verifiable segmentation network kit.
//!
//! The crate is layered bottom-up:
//!
//! - [`tensor`], [`tape`], [`ops`]: dense tensors with reverse-mode
//!   differentiation and fused kernels; [`gradcheck`] validates them.
//! - [`nn`]: parameter storage, standard layers, AdamW and the cosine
//!   schedule, checkpoints.
//! - [`attention`]: local/global differential aggregated attention.
//! - [`sama`]: the encoder block wrapping it in a Mamba-style macro structure.
//! - [`ssm`] and [`crmsm`]: the selective scan and the four-view skip module.
//! - [`unet`], [`loss`], [`train`]: the assembled network and its training loop.
//! - [`metrics`], [`profile`], [`data`], [`config`]: evaluation, analytic
//!   cost accounting, synthetic data and run configuration.

pub mod attention;
pub mod config;
pub mod crmsm;
pub mod data;
pub mod error;
pub mod gradcheck;
pub mod gradsuite;
pub mod loss;
pub mod metrics;
pub mod nn;
pub mod ops;
pub mod profile;
pub mod sama;
pub mod ssm;
pub mod stn;
pub mod tape;
pub mod tensor;
#[cfg(test)]
mod testutil;
pub mod train;
pub mod unet;

pub use error::{Error, Result};
pub use tape::{Gradients, Tape, Var};
pub use tensor::{Element, Tensor};
