//! Boundary-distribution-guided polyp segmentation.
//!
//! The crate is organised bottom-up:
//!
//! * [`bdm`] turns binary masks into boundary distribution maps through an exact
//!   Euclidean distance transform.
//! * [`autograd`] and [`nn`] provide a small NCHW tensor engine with reverse-mode
//!   gradients, generic over `f32`/`f64`.
//! * [`network`] wires the encoder, the boundary generation module and the
//!   boundary-guided decoder blocks, and counts FLOPs analytically.
//! * [`losses`], [`metrics`] and [`data`] cover the training objective, the
//!   six-metric evaluation suite and dataset handling.
//! * [`train`], [`checkpoint`], [`config`] and [`infer`] tie everything together
//!   for the CLI.

pub mod autograd;
pub mod bdm;
pub mod checkpoint;
pub mod config;
pub mod data;
mod error;
pub mod gradcheck;
pub mod infer;
pub mod losses;
pub mod metrics;
pub mod network;
pub mod nn;
pub mod optim;
pub mod train;

pub use error::{Error, Result};
