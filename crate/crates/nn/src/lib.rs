//! Minimal CPU tensor engine used by the `cxrfuse` models.
//!
//! Tensors are dense row-major NCHW buffers. Computation is recorded on a
//! [`Tape`] which can later be replayed backwards to obtain parameter
//! gradients. Convolutions are lowered to GEMM through `im2col`.

mod error;
pub mod layers;
pub mod ops;
pub mod optim;
pub mod param;
mod scalar;
mod tape;
mod tensor;

pub use error::{NnError, Result};
pub use layers::{BatchNorm2d, Conv2d, Linear, Mode};
pub use ops::conv::ConvSpec;
pub use optim::Sgd;
pub use param::{Param, ParamId, ParamInit, ParamKind, Parameters};
pub use scalar::{matmul, Scalar};
pub use tape::{BnUpdate, Gradients, Tape, Var};
pub use tensor::Tensor;
