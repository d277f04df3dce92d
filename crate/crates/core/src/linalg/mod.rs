//! Dense tensors, deterministic RNG, and spectral utilities.

pub mod dense_eig;
pub mod rng;
pub mod spectral;
pub mod tensor;

pub use rng::Rng;
pub use spectral::{dominant_eigenpair, spectral_gap, EigPair, SymOp};
pub use tensor::Tensor;
