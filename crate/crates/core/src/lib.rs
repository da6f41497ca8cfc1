//! Dataset-free infrared/visible image super-resolution fusion.
//!
//! Given a single IR/VIS pair, three randomly initialized encoder-decoder
//! networks are optimized against a Retinex-based loss family
//! (`I = R * L`) until the shared reflectance image `R` fuses both
//! sources, optionally at 2x or 4x the recorded resolution. No training
//! data is involved: the inputs themselves are the only supervision.
//!
//! Modules follow the pipeline: [`diffcore`] provides the autodiff
//! substrate, [`networks`] the three generators, [`losses`] the loss
//! family, [`trainer`] the per-scene optimization loop, [`metrics`] the
//! fusion-quality measures, and [`app`] the file-level drivers used by
//! the CLI.

pub mod app;
pub mod diffcore;
pub mod error;
pub mod imageio;
pub mod losses;
pub mod metrics;
pub mod networks;
pub mod scene;
pub mod trainer;

pub use error::{Error, Result};
