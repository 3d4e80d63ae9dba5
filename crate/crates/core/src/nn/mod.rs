//! Differentiable layer primitives with hand-derived backward passes.
//!
//! Every operation is a pure function of its inputs, explicit state, and seed.
//! Forward functions return the output together with a cache that the
//! matching backward function consumes.

pub mod activation;
pub mod batchnorm;
pub mod conv;
pub mod dense;
pub mod dropout;
pub mod gradcheck;
pub mod loss;
pub mod pool;

pub use activation::{leaky_relu_backward, leaky_relu_forward, ActivationConfig, LeakyReluCache, DEFAULT_LEAKY_SLOPE};
pub use batchnorm::{
    batchnorm, batchnorm_backward, batchnorm_infer, batchnorm_train, BatchNormCache, BatchNormGrads, BatchNormState,
    BnConfig, RunningStats,
};
pub use conv::{conv2d_backward, conv2d_forward, Conv2dCache, Conv2dGrads};
pub use dense::{dense_backward, dense_forward, DenseCache, DenseGrads};
pub use dropout::{dropout_backward, dropout_forward, DropoutCache};
pub use gradcheck::{grad_check, relative_error};
pub use loss::{softmax, softmax_cross_entropy};
pub use pool::{maxpool_backward, maxpool_forward, pooled_extent, MaxPoolCache};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Infer,
}
