//! Self-supervised stereo disparity estimation at desk scale.
//!
//! The crate is organised around a small dense-tensor engine with
//! reverse-mode automatic differentiation ([`diffmath`]), on top of which
//! the stereo pipeline is built:
//!
//! - [`features`] — multi-scale feature providers (file ingestion or a toy
//!   trainable encoder) and the shared 1x1 projection head.
//! - [`matcher`] — epipolar transformer, correlation volume, softmax
//!   matching, distance-based validity masking, disparity propagation,
//!   local refinement and learned convex upsampling.
//! - [`losses`] — photometric (L1 + SSIM), feature-distance regularizer
//!   with focal modulation, edge-aware smoothness, and their weighted sum.
//! - [`metrics`] — standard depth metrics with unweighted and depth-binned
//!   weighted aggregation.
//! - [`synth`] — synthetic rectified stereo scenes with exact ground
//!   truth, dataset ingestion, training, evaluation and inference.
//!
//! Everything is 64-bit and single-threaded by design: the point of the
//! crate is verifiability (every differentiable op ships with a
//! finite-difference check), not throughput.


pub mod diffmath;
pub mod error;
pub mod features;
pub mod io;



pub mod params;



pub use diffmath::{backward, GradMap, Tape, Tensor, TensorId};
pub use error::{Error, Result};


