pub mod audio;
pub mod corpus;
pub mod error;
pub mod experiment;
pub mod metrics;
pub mod model;
pub mod scalar;
pub mod tensor;
pub mod trainer;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type Tensor32 = tensor::Tensor<f32>;
pub type Tensor64 = tensor::Tensor<f64>;
pub type ParamStore32 = tensor::ParamStore<f32>;
pub type ParamStore64 = tensor::ParamStore<f64>;
pub type AdamW32 = tensor::AdamW<f32>;
pub type AdamW64 = tensor::AdamW<f64>;
pub type GraderModel32 = model::GraderModel<f32>;
pub type GraderModel64 = model::GraderModel<f64>;
pub type Checkpoint32 = trainer::Checkpoint<f32>;
