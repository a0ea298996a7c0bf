//! Differentiable primitives. Each op is a pure forward function plus an
//! explicit backward that returns gradients for every input; there is no
//! tape. Tensors are row-major, feature maps are [N, C, H, W], sequences
//! are [T, N, C].

pub mod activation;
pub mod conv;
pub mod linear;
pub mod lstm;
pub mod norm;
pub mod pool;
pub mod resize;

pub use activation::{
    dropout, dropout_backward, leaky_relu, leaky_relu_backward, relu, relu_backward, sigmoid,
    sigmoid_backward, sigmoid_scalar,
};
pub use conv::{conv2d, conv2d_backward};
pub use linear::{linear, linear_backward, log_softmax, log_softmax_backward};
pub use lstm::{bilstm_backward, bilstm_forward, BiLstmCache, LstmGrads};
pub use norm::{batch_norm_eval, batch_norm_train, batch_norm_train_backward, BnCache};
pub use pool::{height_max_pool, height_max_pool_backward};
pub use resize::{bilinear_upsample, bilinear_upsample_backward};
