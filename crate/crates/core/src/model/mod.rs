//! The super-resolution network: channel attention, kernel selection,
//! noise estimation, Haar bandpass attention and the multi-scale body.

mod blocks;
mod config;
mod network;
pub mod params;

pub use blocks::{
    bandpass_attention, bandpass_attention_with, ca_block, channel_attention, conv_same, haar_analysis, haar_synthesis,
    kernel_select, noise_estimator, NORM_EPS,
};
pub use config::ModelConfig;
pub use network::{flsn_forward, Flsn};
pub use params::{schema, BoundParams, ModelParams, ParamKind, ParamSpec};
