//! Dense real-matrix kernels, small dense linear algebra and seeded sampling.

pub mod linalg;
pub mod ops;
mod rng;
mod scalar;
mod tensor;

pub use linalg::{inverse, ols_solve, shape_spectrum, svd_thin, Svd};
pub use rng::{gaussian, SeededRng};
pub use scalar::{DType, Scalar};
pub use tensor::Tensor;
