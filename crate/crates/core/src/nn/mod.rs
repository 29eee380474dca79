//! 3D CNN layers with exact reverse-mode gradients, and the architecture family.
//!
//! All tensors are [`Batch5D`] in `(batch, channels, x, y, z)` order; dense
//! layers see a flattened `(batch, features, 1, 1, 1)` view. Every layer is
//! sequential and deterministic for a given input.

mod activation;
mod arch;
mod batchnorm;
mod conv;
mod dense;
pub mod gradcheck;
mod kernels;
pub use kernels::{portable_kernels, set_portable_kernels};
mod model;
mod pool;
mod tensor;

pub use activation::{batch_crossentropy, softmax, softmax_crossentropy, Activation, Dropout};
pub use arch::{ArchitectureSpec, BLOCKS, DEPTHS, PAPER_INPUT, PAPER_POOLING};
pub use batchnorm::{BatchNorm3d, BnCache, BnGrads, DEFAULT_EPSILON, DEFAULT_MOMENTUM};
pub use conv::{Conv3d, ConvGrads, KERNEL_TAPS};
pub use dense::{Dense, DenseGrads};
pub use model::{build_model, Forward, Gradients, Layer, Mode, Model, ParamKind, StateTensor, Tape};
pub use pool::{Pool3d, PoolKind};
pub use tensor::Batch5D;
