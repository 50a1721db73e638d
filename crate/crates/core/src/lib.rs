//! Deterministic image augmentation and desk-scale self-supervised
//! pre-training with a momentum target network.

pub mod checkpoint;
pub mod cli;
pub mod cropping;
pub mod datasets;
pub mod error;
pub mod eval;
pub mod image;
pub mod model;
pub mod nn;
pub mod objective;
pub mod optim;
pub mod policy;
pub mod ppm;
pub mod rng;
pub mod tensor;
pub mod trainer;
pub mod transforms;

pub use error::{Error, Result};
pub use image::Image;
pub use rng::{derive_seed, Rng};
pub use tensor::{Scalar, Tensor};
