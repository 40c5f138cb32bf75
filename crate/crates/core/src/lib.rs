pub mod adversary;
pub mod authenticator;
pub mod baselines;
pub mod config;
pub mod data_synth;
pub mod error;
pub mod evalkit;
pub mod nn;
pub mod physical_noise;
pub mod rng;
pub mod selector;
pub mod store;

pub use error::{Error, Result};
