pub mod augment;
pub mod cli;
pub mod container;
pub mod data;
pub mod error;
pub mod gradsuite;
pub mod model;
pub mod nn;
pub mod rng;
pub mod svm;
pub mod tensor;
pub mod trainer;

pub use error::{Error, ErrorKind, Result};
pub use tensor::{DType, Scalar, Tensor};
