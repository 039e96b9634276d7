//! Flat key-value run configuration. Every key is optional; command-line
//! flags override the file.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use videngage::backbone::nn::ParamGroup;
use videngage::preprocess::{ResizeBudget, SpectrogramParams, DEFAULT_MAX_PIXELS, FIXED_SIDE};
use videngage::regression::Reduction;
use videngage::{Error, PreprocessConfig, PromptVariant, Result, Strategy, ToyConfig, TrainConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackboneKind {
    Toy,
    Remote,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ResizeKind {
    Fixed,
    PixelBudget,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub strategy: Strategy,
    pub variant: PromptVariant,
    pub output_dir: PathBuf,
    /// Names the trained model in prediction files.
    pub model_id: Option<String>,

    pub backbone: BackboneKind,
    pub endpoint: Option<String>,
    pub timeout_s: f64,
    /// Hidden-state width the remote server returns; 0 skips the check.
    pub remote_dim: usize,

    pub n_frames: usize,
    pub window_s: f64,
    pub resize: ResizeKind,
    pub resize_side: usize,
    pub max_pixels: usize,
    pub sample_rate_hz: u32,
    pub mel_bins: usize,
    pub spec_window_s: f64,
    pub spec_hop_s: f64,

    pub toy_dim: usize,
    pub toy_layers: usize,
    pub toy_heads: usize,
    pub toy_ffn_mult: usize,
    pub toy_grid: usize,
    pub toy_audio_slices: usize,
    pub toy_text_buckets: usize,
    pub toy_max_frames: usize,
    pub toy_audio: bool,

    pub epochs: usize,
    pub max_steps: Option<usize>,
    pub batch_size: Option<usize>,
    /// Uniform rate; per-group keys below take precedence.
    pub lr: Option<f64>,
    pub lr_vision: Option<f64>,
    pub lr_audio: Option<f64>,
    pub lr_text: Option<f64>,
    pub lr_decoder: Option<f64>,
    pub lr_head: Option<f64>,
    pub lr_token_head: Option<f64>,
    pub weight_decay: f64,
    pub freeze_vision: Option<bool>,
    pub dropout: f64,
    pub ce_reduction: Reduction,
    pub train_fraction: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        let toy = ToyConfig::default();
        let spec = SpectrogramParams::default();
        let train = TrainConfig::feature_based();
        RunConfig {
            seed: 0,
            strategy: Strategy::FeatureBased,
            variant: PromptVariant::AudioVisual,
            output_dir: PathBuf::from("run"),
            model_id: None,
            backbone: BackboneKind::Toy,
            endpoint: None,
            timeout_s: 30.0,
            remote_dim: 0,
            n_frames: videngage::preprocess::DEFAULT_KEYFRAMES,
            window_s: videngage::preprocess::DEFAULT_WINDOW_S,
            resize: ResizeKind::Fixed,
            resize_side: FIXED_SIDE,
            max_pixels: DEFAULT_MAX_PIXELS,
            sample_rate_hz: spec.sample_rate_hz,
            mel_bins: spec.mel_bins,
            spec_window_s: spec.window_s,
            spec_hop_s: spec.hop_s,
            toy_dim: toy.dim,
            toy_layers: toy.layers,
            toy_heads: toy.heads,
            toy_ffn_mult: toy.ffn_mult,
            toy_grid: toy.grid,
            toy_audio_slices: toy.audio_slices,
            toy_text_buckets: toy.text_buckets,
            toy_max_frames: toy.max_frames,
            toy_audio: toy.audio,
            epochs: train.epochs,
            max_steps: None,
            batch_size: None,
            lr: None,
            lr_vision: None,
            lr_audio: None,
            lr_text: None,
            lr_decoder: None,
            lr_head: None,
            lr_token_head: None,
            weight_decay: train.weight_decay,
            freeze_vision: None,
            dropout: train.dropout,
            ce_reduction: train.ce_reduction,
            train_fraction: 1.0,
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        toml::from_str(&text).map_err(|e| Error::validation("config", format!("{}: {}", path.display(), e.message())))
    }

    /// Checks that need no data or backbone.
    pub fn validate(&self) -> Result<()> {
        if self.n_frames < 1 {
            return Err(Error::validation("n_frames", "must be >= 1"));
        }
        if !(self.train_fraction > 0.0 && self.train_fraction <= 1.0) {
            return Err(Error::validation("train_fraction", format!("{} is not in (0, 1]", self.train_fraction)));
        }
        if self.backbone == BackboneKind::Remote && self.endpoint.is_none() {
            return Err(Error::validation("endpoint", "remote backbone needs an endpoint URL"));
        }
        if self.backbone == BackboneKind::Toy && self.variant.uses_audio() && !self.toy_audio {
            return Err(Error::validation("variant", "audio_visual needs a backbone with an audio encoder"));
        }
        self.preprocess().spectrogram.validate().map_err(|e| Error::validation("spectrogram", e.to_string()))?;
        self.toy().validate().map_err(|e| Error::validation("toy", e.to_string()))?;
        Ok(())
    }

    pub fn preprocess(&self) -> PreprocessConfig {
        let resize = match self.resize {
            ResizeKind::Fixed => ResizeBudget::Fixed {
                height: self.resize_side,
                width: self.resize_side,
            },
            ResizeKind::PixelBudget => ResizeBudget::PixelBudget {
                max_pixels: self.max_pixels,
            },
        };
        PreprocessConfig {
            n_frames: self.n_frames,
            window_s: self.window_s,
            resize,
            spectrogram: SpectrogramParams {
                sample_rate_hz: self.sample_rate_hz,
                mel_bins: self.mel_bins,
                window_s: self.spec_window_s,
                hop_s: self.spec_hop_s,
                ..SpectrogramParams::default()
            },
            audio: self.variant.uses_audio(),
        }
    }

    pub fn toy(&self) -> ToyConfig {
        ToyConfig {
            dim: self.toy_dim,
            layers: self.toy_layers,
            heads: self.toy_heads,
            ffn_mult: self.toy_ffn_mult,
            grid: self.toy_grid,
            audio_slices: self.toy_audio_slices,
            mel_bins: self.mel_bins,
            text_buckets: self.toy_text_buckets,
            max_frames: self.toy_max_frames,
            audio: self.toy_audio,
        }
    }

    /// Strategy preset with the file's overrides applied.
    pub fn train(&self) -> TrainConfig {
        let base = TrainConfig::for_strategy(self.strategy);
        let mut lrs: BTreeMap<ParamGroup, f64> = match self.lr {
            Some(lr) => base.clone().with_uniform_lr(lr).learning_rates,
            None => base.learning_rates.clone(),
        };
        let per_group = [
            (ParamGroup::Vision, self.lr_vision),
            (ParamGroup::Audio, self.lr_audio),
            (ParamGroup::Text, self.lr_text),
            (ParamGroup::Decoder, self.lr_decoder),
            (ParamGroup::Head, self.lr_head),
            (ParamGroup::TokenHead, self.lr_token_head),
        ];
        for (g, lr) in per_group {
            if let Some(lr) = lr {
                lrs.insert(g, lr);
            }
        }
        TrainConfig {
            strategy: self.strategy,
            epochs: self.epochs,
            max_steps: self.max_steps,
            batch_size: self.batch_size.unwrap_or(base.batch_size),
            learning_rates: lrs,
            weight_decay: self.weight_decay,
            freeze_vision: self.freeze_vision.unwrap_or(base.freeze_vision),
            frozen_groups: Vec::new(),
            dropout: self.dropout,
            ce_reduction: self.ce_reduction,
            seed: self.seed,
        }
    }
}
