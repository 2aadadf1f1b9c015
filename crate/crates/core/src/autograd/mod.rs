//! Reverse-mode differentiation over [`Tensor`](crate::tensor::Tensor)s.
//!
//! A [`Tape`] owns every value produced during a forward pass. Operations
//! are methods on the tape that take and return [`Var`] handles; nodes are
//! appended in evaluation order, so the tape is topologically sorted by
//! construction. [`Tape::backward`] consumes the tape and walks it once in
//! reverse.

mod gradcheck;
mod tape;

pub use gradcheck::{grad_check, GradCheckReport, REL_FLOOR};
pub use tape::{Gradients, Tape, Var};
