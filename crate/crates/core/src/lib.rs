//! Anomaly diagnosis of GPR B-scan images by learning in the model space of
//! two-direction echo state networks.
//!
//! The pipeline slides a window across a preprocessed B-scan, fits a 2D-ESN
//! readout to each window, embeds the readouts in a metric space and
//! classifies them there with one-class SVMs (semi-supervised) or nearest
//! neighbors (supervised).

pub mod cli;
pub mod detectors;
pub mod error;
pub mod model_space;
pub mod pipeline;
pub mod preprocess;
pub mod reservoir;
pub mod rng;
pub mod segmentation;
pub mod synthgpr;

pub use error::{Error, Result};
