pub mod autodiff;
pub mod constructions;
pub mod error;
pub mod harness;
pub mod models;
pub mod numerics;
pub mod tasks;
pub mod training;

pub use error::{Error, Result};
pub use numerics::{DType, Scalar, SeededRng, Tensor};
