//! USLN: a statistically guided lightweight underwater image enhancement
//! network, built on a small reverse-mode autodiff core.
//!
//! The network has 894 trainable parameters arranged as a dual-statistic
//! white balance module (gray-world and white-patch branches driven by
//! per-channel averages and maxima), a multi-color-space stretch module
//! (min/max stretching in RGB, HSI and Lab), and five residual-enhancement
//! blocks. Everything needed to train and evaluate it lives here: tensor
//! ops with analytic gradients, differentiable color conversions, losses,
//! Adam training, image I/O and quality metrics.

pub mod autodiff;
pub mod colorspace;
pub mod data;
pub mod error;
pub mod losses;
pub mod metrics;
pub mod model;
pub mod tensor;
pub mod train;

pub use autodiff::{ChannelStat, Gradients, NodeId, StatKind, Tape};
pub use colorspace::{ColorImage, ColorSpace};
pub use error::{Error, Result, WeightFileError};
pub use losses::{FeatureExtractor, LossConfig};
pub use model::{Architecture, ModuleTrace, WeightSet};
pub use tensor::Tensor;
pub use train::{AdamState, TrainConfig};
