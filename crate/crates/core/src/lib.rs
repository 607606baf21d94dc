//! Few-shot open-set hyperspectral image classification.
//!
//! A multitask convolutional network learns to classify 9×9 hyperspectral
//! patches and to reconstruct them from a pooled latent vector. The
//! per-instance reconstruction loss of unseen pixels is scored against a
//! generalized Pareto model of the training-loss tail; instances that land
//! deep in that tail are rejected as belonging to an unknown class.
//!
//! Modules:
//! - [`tensor`]: dense f32 tensors, layer kernels, a reverse-mode tape and AdaDelta
//! - [`network`]: the encoder / classifier / decoder network and its training loop
//! - [`evt`]: tail fitting and unknown scoring
//! - [`data_io`]: cube and label rasters, patches, augmentation, splits, synthetic scenes
//! - [`metrics`]: openness, open/closed OA, micro F1 and mapping error

pub mod data_io;
pub mod error;
pub mod evt;
pub mod metrics;
pub mod network;
pub mod tensor;

pub use error::{Error, Result};

/// Side length of the square patches the network consumes.
pub const PATCH_SIZE: usize = 9;
