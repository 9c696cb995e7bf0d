//! Dense float64 tensors, a reverse-mode tape, and the Adam optimizer.

mod adam;
mod graph;
mod tensor;

pub use adam::{adam_step, AdamState, DEFAULT_LR};
pub use graph::{Gradients, Graph, Var, LAYER_NORM_EPS};
pub(crate) use tensor::gemm_nt_acc;
pub use tensor::Tensor;
