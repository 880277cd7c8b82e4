//! Detect-then-segment semantic segmentation of radar range-angle-Doppler cubes.
//!
//! Stage one finds object centers on a Doppler-compressed range-angle map;
//! stage two grows sparse regions of interest around those centers and labels
//! each cell with a submanifold sparse convolution network.

pub mod config;
pub mod error;
pub mod fsutil;
pub mod nn;
pub mod pipeline;
pub mod prune;
pub mod dataset;
pub mod detector;
pub mod eval;
pub mod roi;
pub mod run;
pub mod sim;
pub mod sparse;

pub use error::{Error, Result};
