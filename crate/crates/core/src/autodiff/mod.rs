//! Minimal reverse-mode differentiation over dense matrices.

mod check;
mod tape;

pub use check::{gradient_check, GradCheckReport, REL_FLOOR};
pub use tape::{lu_solve, Gradients, Matrix, Tape, Var, EPS_LOG};
