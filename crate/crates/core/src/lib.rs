//! Face presentation attack detection from intrinsic image properties.
//!
//! Each frame of a capture is aligned at eye level, turned into depth,
//! illuminant and saliency maps, and each map is described by a 2048-value
//! feature vector. Per-property SVMs score frames; the per-property mean
//! frame probabilities form a probability feature vector that a second RBF
//! SVM classifies.

pub mod cache;
pub mod classify;
pub mod config;
pub mod error;
pub mod eval;
pub mod external;
pub mod features;
pub mod model;
pub mod pipeline;
pub mod pfm;
pub mod preprocess;
pub mod propmaps;
pub mod raster;
pub mod synth;

pub use error::{PadError, Result};
