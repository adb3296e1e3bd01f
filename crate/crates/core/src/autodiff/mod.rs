//! Reverse-mode automatic differentiation over dense `f64` tensors.
//!
//! A [`Tape`] is built fresh for every forward pass. Trainable tensors enter
//! it as differentiable leaves, frozen ones as borrowed constants; after
//! [`Tape::backward`] the caller folds leaf gradients back into the owning
//! tensors with [`Gradients::accumulate_into`]. Accumulation is additive and
//! gradients are only cleared explicitly.

pub mod gradcheck;
mod kernels;
mod tape;
mod tensor;

pub use gradcheck::{finite_difference_gradient, relative_error, DEFAULT_EPSILON};
pub use tape::{Gradients, Tape, Var};
pub use tensor::Tensor;

use crate::error::Result;

/// Column-wise softmax of a plain tensor.
pub fn softmax_columns(m: &Tensor) -> Tensor {
    let mut tape = Tape::new(0);
    let v = tape.constant(m);
    let out = tape.softmax_columns(v);
    reshape_like(tape.to_tensor(out), m)
}

/// Layer normalization of a vector.
pub fn layer_norm(x: &Tensor, gain: &Tensor, bias: &Tensor, eps: f64) -> Result<Tensor> {
    let mut tape = Tape::new(0);
    let xv = tape.constant(x);
    let row = tape.transpose(xv);
    let g = tape.constant(gain);
    let b = tape.constant(bias);
    let out = tape.layer_norm_rows(row, g, b, eps)?;
    Ok(Tensor::vector(tape.value(out).to_vec()))
}

/// Inverted dropout of a plain tensor with an explicit seed.
pub fn dropout(x: &Tensor, p: f64, training: bool, seed: u64) -> Result<Tensor> {
    let mut tape = Tape::new(seed);
    let v = tape.constant(x);
    let out = tape.dropout(v, p, training)?;
    Ok(reshape_like(tape.to_tensor(out), x))
}

/// `-log softmax(logits)[target]`.
pub fn cross_entropy(logits: &Tensor, target: usize) -> Result<f64> {
    let mut tape = Tape::new(0);
    let v = tape.constant(logits);
    let out = tape.cross_entropy(v, target)?;
    Ok(tape.scalar(out))
}

pub fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let mut tape = Tape::new(0);
    let av = tape.constant(a);
    let bv = tape.constant(b);
    let out = tape.matmul(av, bv)?;
    Ok(tape.to_tensor(out))
}

fn reshape_like(t: Tensor, like: &Tensor) -> Tensor {
    Tensor::new(like.shape().to_vec(), t.into_data()).expect("same element count")
}
