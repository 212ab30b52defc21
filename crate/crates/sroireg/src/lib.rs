//! Region-constrained infrared/visible image matching and registration:
//! stride-8 grid features inside a region mask, HOL descriptors with a
//! chi-square cost, hybrid scoring with Gaussian-weighted decay, RANSAC,
//! TPS/homography warping, deterministic fusion and evaluation metrics.

pub mod error;
pub mod features;
pub mod hol;
pub mod matching;
pub mod metrics;
pub mod synth;
pub mod raster;
pub mod transform;

pub use error::{Error, Result};
