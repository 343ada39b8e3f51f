//! Dense linear algebra and reverse-mode automatic differentiation.

pub mod linalg;
pub mod tape;

pub use linalg::{eigvals, solve, spectral_radius, svd_rank, Mat, DEFAULT_RANK_TOL};
pub use tape::{softplus, tanh, Tape, Var};
