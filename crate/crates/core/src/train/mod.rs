//! Optimizer, learning-rate schedule and the training loops.

mod adam;
mod schedule;
mod trainer;

pub use adam::{adam_step, AdamParams, AdamState};
pub use schedule::lr_at;
pub use trainer::*;
