//! Convolutional spiking networks with binary kernels learned by stochastic
//! STDP, plus the surrounding data handling, readout classifier and a
//! fully-connected SNN baseline.

pub mod classifier;
pub mod config;
pub mod convnet;
pub mod data_io;
pub mod encoding;
pub mod error;
pub mod fcsnn;
pub mod kernel;
pub mod metrics;
pub mod neurons;
pub mod plasticity;
pub mod rng;

pub use error::{Error, Result};
pub use rng::{Key, Phase};
