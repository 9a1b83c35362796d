//! A compact tensor engine with tape-based reverse-mode differentiation.
//!
//! Values live in [`Tensor`]s; computations are recorded on a [`Tape`] as
//! [`Var`] handles. [`Tape::backward`] replays the tape in reverse to produce
//! vector-Jacobian products, and [`Tape::grad_graph`] records gradients as
//! differentiable values for penalties that need second-order terms.

mod error;
mod gradcheck;
pub mod ops;
mod param;
mod scalar;
mod tape;
mod tensor;

pub use error::{DiffError, Result};
pub use gradcheck::grad_check;
pub use param::{join, Module, Param, ParamKey};
pub use scalar::{gemm, DType, Real};
pub use tape::{Gradients, Op, Tape, Var};
pub use tensor::{numel, strides, Tensor};
