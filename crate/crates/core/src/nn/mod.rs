//! Small neural-network toolkit: tensors, a reverse-mode tape and parameter
//! management. Just enough for the toy-scale matcher and detector.

mod gemm;
pub mod kernels;
pub mod params;
pub mod tape;
pub mod tensor;

pub use params::{step_decay, Adam, Bound, ParamStore};
pub use tape::{CloudTarget, Gradients, Pick, Tape, Var};
pub use tensor::Tensor;
