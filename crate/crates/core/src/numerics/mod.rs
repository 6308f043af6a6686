//! Tensors, reverse-mode autodiff and the Adam optimizer.

mod adam;
mod tape;
mod tensor;

pub use adam::AdamState;
pub use tape::{Gradients, Tape, Var};
pub use tensor::{
    add, broadcast_shape, clamp, embedding_bag, exp, log, log_softmax, logsumexp, matmul, mean_all,
    mean_axis, min_over_axis, minimum, mul, pick, rows, scale, sigmoid, sigmoid_scalar, softplus,
    softplus_scalar, sub, sum_all, sum_axis, tanh, Tensor,
};
