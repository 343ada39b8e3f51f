pub mod analysis;
pub mod cli;
pub mod embedding;
pub mod envs;
pub mod error;
pub mod koopman;
pub mod lqr;
pub mod ndmath;
pub mod nn;
pub mod registry;
pub mod rl;
pub mod rng;

pub use error::{Error, Result};
