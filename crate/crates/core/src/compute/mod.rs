//! Numeric substrate: dense tensors, the gradient tape, and bit-packed kernels.

mod packed;
mod tape;
mod tensor;

pub use packed::{packed_matmul, packed_matmul_t, signed_matmul_t, PackedMatrix};
pub use tape::{Gradients, Graph, Var};
pub use tensor::{argmax, sigmoid, Tensor};
