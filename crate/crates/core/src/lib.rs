//! Scene-aware multi-person 3D human motion forecasting.
//!
//! The crate is organized as the pipeline runs:
//!
//! - [`data`]: recordings, windows, zero-velocity padding and a synthetic scene generator
//! - [`bps`]: basis point set encoding of object point clouds
//! - [`normalize`]: person-centric planar normalization and min-max feature scaling
//! - [`diffusion`]: cosine schedule, forward noising, posterior step, masked L1 training
//! - [`denoiser`]: the convolutional encoder/decoder with the transformer bottleneck
//! - [`inference`]: joint multi-person sampling with per-step context exchange
//! - [`metrics`]: NDMS, UMWR, realism classifier, trajectory statistics
//! - [`checkpoint`]: on-disk model container

pub mod bps;
pub mod checkpoint;
pub mod data;
pub mod denoiser;
pub mod diffusion;
mod error;
pub mod inference;
pub mod metrics;
pub mod nn;
pub mod normalize;
pub mod rng;

pub use error::{Error, Result};
