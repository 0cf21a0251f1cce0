//! Differentiable dense-matrix arithmetic in 64-bit floats.
//!
//! The substrate for everything trainable in this crate: a [`Tensor`]
//! value type, plain numeric kernels in [`dense`], a recording [`Tape`]
//! with reverse-mode gradients, and [`grad_check`] to hold every adjoint to
//! central finite differences.  All arithmetic is double precision
//! throughout; there is no mixed-precision path.

pub mod dense;
mod gradcheck;
mod ops;
mod tape;
mod tensor;

pub use gradcheck::{grad_check, GradReport};
pub use ops::{softplus_inverse, softplus_scalar, vstack};
pub use tape::{Gradients, Tape, Var};
pub use tensor::Tensor;
