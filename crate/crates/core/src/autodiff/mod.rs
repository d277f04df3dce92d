//! Reverse-mode automatic differentiation over the op set the models use.

pub mod fd;
pub mod tape;

pub use fd::finite_difference_check;
pub use tape::{Gradients, GraphSupport, SpmmKind, Tape, Var};
