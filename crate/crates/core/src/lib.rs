//! Oriented scene-text spotting on the CPU: dense rotated-box detection,
//! differentiable rotated region extraction, and CTC sequence recognition
//! sharing one convolutional feature extractor, with hand-written backward
//! passes throughout.
//!
//! Everything is deterministic given a seed: weight init, data generation,
//! augmentation, hard-example mining, and dropout each draw from their own
//! purpose-keyed random stream.

pub mod checkpoint;
pub mod config;
pub mod ctc;
pub mod data;
pub mod detect;
pub mod error;
pub mod geometry;
pub mod gradcheck;
pub mod layers;
pub mod model;
pub mod ops;
pub mod optim;
pub mod pipeline;
pub mod recognize;
pub mod rng;
pub mod roirotate;
pub mod scalar;
pub mod tensor;

pub use error::{FotsError, Result};
pub use scalar::Scalar;
pub use tensor::{Parameter, Tensor};

/// Training and inference run in single precision; gradient checking uses
/// double precision for tighter finite-difference agreement.
pub type TrainScalar = f32;
pub type CheckScalar = f64;
