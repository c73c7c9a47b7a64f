//! Bayesian two-sample testing for populations of count-weighted networks.

pub mod cli;
pub mod config;
pub mod dataset_io;
pub mod diagnostics;
pub mod error;
pub mod graph;
pub mod harness;
pub mod hypothesis;
pub mod model;
pub mod polya_gamma;
pub mod random;
pub mod rng;
pub mod sampler;
pub mod synth;

pub use error::{Error, Result};
