//! Adaptive-horizon trajectory prediction at desk scale: exact and smoothed
//! Fréchet distances, horizon scoring and labeling, a small neural substrate,
//! the adaptive-horizon model, synthetic data and an experiment harness.

pub mod error;
pub mod fdk;
pub mod fsn;
pub mod harness;
pub mod io;
pub mod nnet;
pub mod scoring;
pub mod synthdata;
pub mod trajgeo;

pub use error::{Error, Result};
