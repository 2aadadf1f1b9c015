//! FLSN: single-frame structured illumination microscopy super-resolution.
//!
//! The crate is self-contained: a 4-D tensor type with convolution and
//! resampling kernels ([`tensor`]), a reverse-mode autodiff tape
//! ([`autograd`]), the network ([`model`]), a synthetic data generator
//! ([`synth`]), training ([`train`]), evaluation and cost accounting
//! ([`metrics`]), checkpoints ([`checkpoint`]) and run configuration
//! ([`config`]).

pub mod autograd;
pub mod checkpoint;
pub mod config;
pub mod error;
pub mod metrics;
pub mod model;
pub mod selfcheck;
pub mod synth;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
