//! Hessian-aware mixed-precision quantization for small dense classifiers.

pub mod alloc;
pub mod data;
pub mod error;
pub mod hessian;
pub mod hwest;
pub mod nn;
pub mod qir;
pub mod quant;
pub mod tensor;

pub use data::Dataset;
pub use error::{Error, Result};
pub use nn::MlpModel;
pub use tensor::Tensor2D;
