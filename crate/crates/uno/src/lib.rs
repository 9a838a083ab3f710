//! Monocular visual-odometry back-end.
//!
//! The crate is organized around the stages of a sliding-window VO pipeline:
//!
//! - [`geometry`] — SE(3) poses, pinhole cameras, depth maps and inverse warping.
//! - [`dataio`] — sequence loading, synthetic scene generation and feature extraction.
//! - [`experts`] — the pose-decoder bank: a five-point geometric decoder plus
//!   parametric regressors, scale fusion and indicator-weighted selection.
//! - [`gating`] — correlation volumes and Gumbel-Softmax sampling of the
//!   inter-frame graph and the per-edge decoder assignment.
//! - [`backend`] — sliding-window bundle adjustment over photometric and
//!   geometric losses with per-frame affine depth parameters.
//! - [`posegraph`] — global trajectory refinement by nonlinear least squares.
//! - [`eval`] — trajectory metrics, alignment, file formats and the pipeline
//!   driver behind the `uno` binary.
//!
//! Every stochastic operation takes an explicit seeded RNG stream (see [`rng`]),
//! so full runs are reproducible bit-for-bit.

pub mod backend;
pub mod dataio;
pub mod error;
pub mod eval;
pub mod experts;
pub mod gating;
pub mod geometry;
pub mod posegraph;
pub mod rng;

pub use error::{Error, Result};
