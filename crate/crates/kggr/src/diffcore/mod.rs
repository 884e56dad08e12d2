//! Minimal dense-array engine with reverse-mode gradient accumulation.
//!
//! Everything trainable in this crate runs through [`Tape`]; a forward pass
//! is a tape build, and training adds one reverse sweep. [`grad_check`]
//! verifies any tape-built scalar against central finite differences.

mod array;
mod gradcheck;
mod tape;

pub use array::{sigmoid, Array, Element};
pub use gradcheck::{
    analytic_gradients, compare_gradients, fd_gradients, grad_check, GradCheckReport,
};
pub use tape::{Gradients, Tape, ValueId};
