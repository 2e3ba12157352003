//! Self-supervised pre-training and few-shot classification for
//! hyperspectral scenes.
//!
//! The crate is organized bottom-up:
//!
//! * [`tensor`]: dense tensors with reverse-mode differentiation,
//! * [`data`]: scenes, label maps, patch extraction and few-shot splits,
//! * [`views`]: pair sampling and augmentations that produce training views,
//! * [`models`]: residual CNN encoders, projection head and linear head,
//! * [`ssl`]: cross-correlation objective and LARS pre-training loop,
//! * [`classify`]: linear / finetune / supervised training and metrics.

pub mod classify;
pub mod data;
pub mod error;
pub mod models;
pub mod rng;
pub mod ssl;
pub mod tensor;
pub mod views;

pub use error::{Error, ErrorClass, Result};
pub use tensor::Tensor;
