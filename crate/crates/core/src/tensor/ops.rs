//! Tape-free entry points to the differentiable primitives.
//!
//! Each function records a throwaway standalone graph, so the values are
//! produced by exactly the code the training path uses.

use crate::error::Result;
use crate::scalar::Scalar;
use crate::tensor::{Graph, Tensor};

pub fn matmul<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    let mut g = Graph::standalone();
    let (a, b) = (g.input(a.clone()), g.input(b.clone()));
    let y = g.matmul(a, b)?;
    Ok(g.value(y).clone())
}

pub fn softmax<T: Scalar>(x: &Tensor<T>, axis: usize) -> Result<Tensor<T>> {
    x.ensure_finite("softmax input")?;
    let mut g = Graph::standalone();
    let x = g.input(x.clone());
    let y = g.softmax(x, axis)?;
    Ok(g.value(y).clone())
}

pub fn layer_norm<T: Scalar>(x: &Tensor<T>, gain: &Tensor<T>, bias: &Tensor<T>, eps: T) -> Result<Tensor<T>> {
    let mut g = Graph::standalone();
    let (x, gain, bias) = (g.input(x.clone()), g.input(gain.clone()), g.input(bias.clone()));
    let y = g.layer_norm(x, gain, bias, eps)?;
    Ok(g.value(y).clone())
}

pub fn cross_entropy<T: Scalar>(logits: &Tensor<T>, targets: &[usize]) -> Result<T> {
    let mut g = Graph::standalone();
    let l = g.input(logits.clone());
    let y = g.cross_entropy(l, targets)?;
    Ok(g.value(y).item())
}
