//! Adversarial deep learning as zero-sum games over small ReLU networks.

pub mod attacks;
pub mod data;
pub mod error;
pub mod games;
pub mod harness;
pub mod io;
pub mod losses;
pub mod matrix;
pub mod metrics;
pub mod net;
pub mod report;
pub mod rng;
pub mod synth;
pub mod tradeoff;
pub mod train;

pub use error::{Error, Result};
