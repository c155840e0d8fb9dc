//! Cold-split evaluation, variance decomposition and calibration machinery
//! for small-data activity benchmarks.

pub mod calibrate;
pub mod dataset;
pub mod decompose;
pub mod error;
pub mod eval;
pub mod features;
pub mod fewshot;
pub mod metrics;
pub mod model;
pub mod splits;
pub mod rng;
pub mod stats;
pub mod synth;

pub use error::{Error, Result};
