//! Compressed-video quality enhancement with a Swin auto-encoder fusion stage
//! and a channel-attention enhancement stage, built on a small dense-tensor
//! autograd engine.

pub mod bench;
pub mod cli;
pub mod data;
pub mod error;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod params;
pub mod swin;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
