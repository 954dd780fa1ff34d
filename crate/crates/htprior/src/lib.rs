//! Trainable Hough-transform line priors.
//!
//! The crate centers on a pair of differentiable layers: a forward Hough
//! transform that accumulates featuremap activations into a binned (offset,
//! angle) parameter space, and its inverse that backprojects Hough maps to
//! the image domain. Local 1D convolutions over the offset axis of the Hough
//! map act as global line filters in the image domain; initialized as
//! sign-inverted Laplacians of Gaussians they respond to the sharp ρ-peaks
//! that straight lines produce. A residual block wires these together:
//! featuremap → HT → 1D filtering → IHT, concatenated with the unfiltered
//! featuremap.
//!
//! Around the layers sits everything needed to train and measure them at
//! desk scale: a minimal tape-based gradient engine, Adam, a synthetic
//! line-vs-circle dataset where ground truth keeps only the line pixels, a
//! tolerance-based average-precision protocol, a classic (non-learned) Hough
//! peak detector, and a small CLI.
//!
//! See the crate `examples/` directory for one runnable example per
//! capability; the `htprior` binary hosts the command-line surface.

pub mod block;
pub mod checkpoint;
pub mod commands;
pub mod config;
pub mod dataset;
pub mod detect;
pub mod error;
pub mod eval;
pub mod gradcheck;
pub mod hough;
pub mod kernels;
pub mod model;
pub mod optim;
pub mod pgm;
pub mod tape;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
