//! Learns finite transmit-covariance codebooks for limited-feedback MIMO
//! from channel data and trains a neural classifier that maps noisy pilot
//! observations directly to feedback indices.
//!
//! The crate covers the full pipeline: synthetic paired UL/DL channel
//! generation, spectral-efficiency baselines (water-filling, uniform power),
//! Lloyd-style codebook learning with projected-gradient center updates,
//! LS/OMP channel estimation, a from-scratch convolutional feedback encoder,
//! and strategy evaluation with boxplot statistics and pilot sweeps.

pub mod capacity;
pub mod channel;
pub mod codebook;
pub mod config;
pub mod error;
pub mod estimation;
pub mod eval;
pub mod io;
pub mod linalg;
pub mod nn;
pub mod pipeline;
pub mod rng;

pub use config::{Side, SystemConfig};
pub use error::{Error, Result};
