//! Lifting 2D keypoint sequences to 3D with an implicit pose proxy.
//!
//! The crate is organised bottom-up:
//!
//! - [`tensor`]: dense tensors, a reverse-mode tape and a finite-difference
//!   gradient oracle.
//! - [`model`]: the lifting network (spatio-temporal encoder, proxy update,
//!   proxy invocation and proxy attention blocks, regression head).
//! - [`metrics`]: training losses and evaluation metrics, including a 3×3 SVD
//!   and similarity Procrustes alignment.
//! - [`data`]: skeletons, pose sequences, synthetic motion, flipping,
//!   windowing and on-disk datasets.
//! - [`train`]: AdamW, learning-rate schedule, training loop, evaluation and
//!   checkpoints.

pub mod data;
pub mod error;
pub mod metrics;
pub mod model;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
