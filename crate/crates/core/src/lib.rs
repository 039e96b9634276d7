//! Engagement prediction for short user-generated videos with large
//! multimodal model backbones.
//!
//! Pipeline: [`dataset`] manifests → [`preprocess`] (keyframes, log-mel
//! spectrograms, metadata) → [`prompt`] → a [`backbone::Backbone`] → one of the
//! two [`regression`] strategies → [`eval`] metrics and ensembles.

pub mod backbone;
pub mod dataset;
pub mod error;
pub mod eval;
pub mod media;
pub mod preprocess;
pub mod prompt;
pub mod regression;

pub use backbone::{Backbone, ModelInput, RemoteBackbone, ToyBackbone, ToyConfig};
pub use dataset::{load_manifest, Manifest, Split, VideoRecord};
pub use error::{Error, Result};
pub use eval::{final_score, plcc, srocc, EnsembleSpec, MetricsReport};
pub use preprocess::{PreprocessConfig, Preprocessor};
pub use prompt::PromptVariant;
pub use regression::{PredictionRecord, Strategy, ToyModel, TrainConfig};
