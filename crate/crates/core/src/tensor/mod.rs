pub mod gradcheck;
mod graph;
pub mod kernels;
pub mod ops;
mod optim;
mod param;
#[allow(clippy::module_inception)]
mod tensor;

pub use graph::{Graph, Var};
pub use optim::{AdamW, AdamWConfig, Moments};
pub use param::{Gradients, ParamGroup, ParamId, ParamStore, Parameter};
pub use tensor::Tensor;
