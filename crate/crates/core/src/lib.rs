//! Multi-stream graph neural network engine with doubly stochastic stream
//! mixing, a tape-based reverse-mode gradient engine, and the analysis
//! harnesses (over-smoothing, 1-WL expressiveness, complexity) used to
//! exercise it at desk scale.

pub mod error;
pub mod autodiff;
pub mod gnn;
pub mod graphs;
pub mod linalg;
pub mod sinkhorn;

pub use error::{MhcError, Result};
