//! Small CPU neural-network engine: exactly the layers the covariance
//! classifier needs, with reverse-mode gradients and Adam.

mod adam;
mod conv;
mod dense;
mod network;
mod ops;
mod tensor;

pub use adam::{adam_update, AdamConfig, AdamState};
pub use conv::Conv2d;
pub use dense::Dense;
pub use network::{FreezeMask, Gradients, Graph, Layer, LayerKind, Network, ParamGrad};
pub use ops::{
    cross_entropy, maxpool2, maxpool2_backward, relu, relu_backward, softmax,
    softmax_cross_entropy_batch, Dropout, Mode, LOG_FLOOR,
};
pub use tensor::{gemm, Real, Tensor};

#[derive(Debug, thiserror::Error)]
pub enum NnError {
    #[error("shape error: {0}")]
    Shape(String),
    #[error("backward called before any forward pass was recorded")]
    BackwardBeforeForward,
    #[error("layer range {start}..{end} invalid for a {len}-layer network")]
    LayerRange {
        start: usize,
        end: usize,
        len: usize,
    },
}
