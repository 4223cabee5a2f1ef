//! Dense-tensor arithmetic with tape-based reverse-mode differentiation.
//!
//! 64-bit floats throughout; the op set is exactly what the stereo
//! pipeline needs, and every op has a finite-difference check in
//! [`gradcheck`].

pub mod adam;
pub mod gradcheck;
pub mod ops;
mod tape;
mod tensor;

pub use adam::{Adam, AdamParams, AdamState};
pub use ops::{WarpSign, LOG_CLAMP};
pub use tape::{backward, GradMap, Tape};
pub use tensor::{Tensor, TensorId};
