//! The closed set of differentiable operations, grouped by kind. Each op
//! is a method on [`crate::diffmath::Tape`] and has a matching gradient
//! rule invoked from the backward pass.

pub(crate) mod conv;
pub(crate) mod elementwise;
pub(crate) mod linalg;
pub(crate) mod reduce;
pub(crate) mod warp;

pub use elementwise::LOG_CLAMP;
pub use warp::WarpSign;
