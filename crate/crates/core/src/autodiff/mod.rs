//! Dense tensors with reverse-mode differentiation.
//!
//! A [`Tape`] records every operation of one forward pass. Parameters are
//! borrowed from a [`ParamStore`], so building a tape copies no weights.
//! [`Tape::backward`] returns gradients for every parameter that took part
//! in the pass. Tensors are row-major; operations view a tensor as a matrix
//! whose column count is the last dimension.

mod adam;
mod tape;
mod tensor;

pub use adam::{Adam, AdamConfig};
pub use tape::{Grads, Reduce, Tape, Var};
pub use tensor::{ParamStore, Scalar, ShapeError, Tensor};
