//! Reverse-mode automatic differentiation over the tensor kernels.
//!
//! A [`Tape`] records every kernel invocation in append order together with
//! the forward values its backward rule needs. [`Graph`] abstracts over the
//! tape and a tape-free evaluator ([`Eval`]) so the model is written once and
//! runs both for training and for memory-lean inference.

mod gradcheck;
mod graph;
mod tape;

pub use gradcheck::{grad_check, GradCheckConfig, GradCheckReport, ParamCheck};
pub use graph::{Eval, Graph};
pub use tape::{GradMap, Tape, Var};
