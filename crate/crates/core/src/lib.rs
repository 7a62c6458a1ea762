//! Social contrastive learning for multi-agent trajectory forecasting.
//!
//! Negative keys are synthesized on rings around other agents' future
//! positions; a compact forecaster is trained with its regression loss plus a
//! weighted contrastive term that teaches its representation which nearby
//! locations would be collisions.

pub mod augment;
pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod dataset;
pub mod error;
pub mod gradcheck;
pub mod heads;
pub mod loss;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod rng;
pub mod scene;
pub mod sim;
pub mod sweep;
pub mod train;

pub use error::{Error, Result};
