//! Multi-view pixel contrastive pretraining and focal fine-tuning for image
//! forgery localization.
//!
//! The crate is organized around the two-stage workflow:
//!
//! - [`data`]: manifests, sample loading, splice synthesis, augmentation and
//!   robustness degradations.
//! - [`sampler`]: label alignment to feature strides and anchor/pool sampling.
//! - [`losses`]: the pixel contrast kernel, the three contrastive views and
//!   the focal cross-entropy.
//! - [`model`]: backbone pyramid, contrast projections, localization head and
//!   checkpoints.
//! - [`train`]: stage-1 pretraining, stage-2 head fine-tuning and prediction.
//! - [`eval`]: F1/IoU, sample-weighted averaging and robustness sweeps.
//! - [`config`]: the flat key-value run configuration.

pub mod config;
pub mod data;
pub mod error;
pub mod eval;
pub mod losses;
pub mod model;
pub mod nn;
pub mod rng;
pub mod sampler;
pub mod train;

pub use config::RunConfig;
pub use data::{DegradationSpec, DegradeOp, ImageSample, Manifest, ManifestEntry, Mask, RgbImage};
pub use error::{Error, Result};
pub use eval::EvalReport;
pub use losses::{ContrastConfig, FocalConfig};
pub use model::{BackboneConfig, FeaturePyramid, LocalizationNet, Mode, Part, ScoreMap};
pub use sampler::{LabelMap, SamplerConfig};
pub use train::{TrainConfig, TrainLog};
