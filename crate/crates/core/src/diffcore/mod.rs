//! Minimal reverse-mode differentiation over dense row-major `f64` matrices.
//!
//! A [`Tape`] records every operation of one forward pass. Nodes are
//! appended in evaluation order, so the tape order is already a topological
//! order and [`Tape::backward`] is a single reverse sweep.

mod adam;
mod gradcheck;
mod params;
mod tape;
mod tensor;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use gradcheck::{grad_check, GradCheckReport};
pub use params::{Bindings, ParamStore};
pub use tape::{Op, Tape, Var};
pub use tensor::Tensor;
