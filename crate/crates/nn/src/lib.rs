//! Dense-tensor numerical core for the hotspot forecasting models.
//!
//! Layers own their parameters and cache what their backward pass needs;
//! gradients are written by hand per layer (no general autodiff graph).
//! Everything is `f64` and single-threaded, so identical seeds and inputs
//! give bitwise-identical results.

pub mod activation;
pub mod batchnorm;
pub mod conv;
pub mod dense;
pub mod dropout;
mod error;
pub mod gradcheck;
pub mod init;
pub mod layer;
pub mod loss;
pub mod lstm;
pub mod optim;
pub mod pool;
pub mod tensor;

pub use activation::{Act, Activation};
pub use batchnorm::BatchNorm;
pub use conv::{Conv2d, Padding};
pub use dense::Dense;
pub use dropout::{dropout, Dropout};
pub use error::{NnError, Result};
pub use layer::{param_count, zero_grads, Flatten, Identity, Layer, Merge, Mode, Parallel, Param, Sequential};
pub use loss::{bce_loss, mcce_loss, mse_loss};
pub use lstm::{Lstm, ReturnMode};
pub use optim::{Adam, AdamConfig};
pub use pool::{Pool2d, PoolKind};
pub use tensor::Tensor;
