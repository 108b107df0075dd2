pub mod cli;
pub mod error;
pub mod families;
pub mod fitting;
pub mod links;
pub mod montecarlo;
mod matrix_serde;
pub mod predictor;
pub mod skewness;
pub mod specfun;

pub use error::{Error, Result};
