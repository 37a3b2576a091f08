//! Chest X-ray classification with a fused ResNet-50 / DenseNet-121 network.
//!
//! The crate covers the whole pipeline: image preprocessing, dataset
//! composition and splitting, the two backbones and their fusion, training,
//! evaluation metrics and activation heatmaps.

pub mod backbones;
pub mod datasets;
pub mod error;
pub mod fusion;
pub mod heatmaps;
pub mod metrics;
pub mod model;
pub mod preprocess;
pub mod seed;
pub mod training;

pub use error::{Error, Result};
pub use fusion::{FusionMode, FusionModel, FusionModelConfig};
pub use model::{AnyModel, ModelSpec, Network, PretrainedWeights};
