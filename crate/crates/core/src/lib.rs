//! Synthetic composite microstructures, periodic elastic homogenization and a
//! masked autoencoder with transfer-learning and saliency tooling.

pub mod autodiff;
pub mod error;
pub mod homogenize;
pub mod microgen;
pub mod mmae;
pub mod pipeline;
pub mod saliency;
pub mod transfer;

pub use error::{Error, Result};
