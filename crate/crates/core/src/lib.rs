//! Multiscale marginal relaxation for global optimization of pairwise
//! objectives `H(x) = sum_{i<j} H_ij(x_i, x_j)` over continuous boxes.

pub mod baselines;
pub mod conic;
pub mod error;
pub mod grid;
pub mod mmr;
pub mod model;
pub mod problems;
pub mod relax;
pub mod sampling;

pub use error::{MmrError, Result};
