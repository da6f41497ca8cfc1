//! Minimal reverse-mode differentiable operator set over dense grids.
//!
//! Just enough autodiff for encoder-decoder networks and the loss family
//! built on them: 3x3/1x1 convolution, reflection padding, per-channel
//! normalization, leaky-ReLU, sigmoid, bilinear and area resampling, a
//! fixed Laplacian stencil, elementwise arithmetic, and mean reduction.
//! Not a general tensor library by design.

mod conv;
mod grid;
mod tape;

pub mod gradcheck;

pub use grid::Grid;
pub use tape::{Tape, Var};
