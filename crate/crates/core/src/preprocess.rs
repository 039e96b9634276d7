//! Keyframes, resizing, log-mel spectrograms, and metadata normalization.

use std::path::Path;
use std::sync::Arc;

use ndarray::Array2;
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::dataset::{Manifest, VideoRecord};
use crate::error::{Error, Result};
use crate::media::{Frame, MediaDecoder, PcmAudio, VideoSource};

pub const DEFAULT_KEYFRAMES: usize = 8;
pub const DEFAULT_WINDOW_S: f64 = 5.0;
pub const FIXED_SIDE: usize = 384;
pub const PATCH_MULTIPLE: usize = 28;
pub const DEFAULT_MAX_PIXELS: usize = 768 * 28 * 28;
pub const MISSING_PLACEHOLDER: &str = "None";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SamplingPolicy {
    pub n: usize,
    pub window_s: f64,
    /// Grid origin; always the first frame (left-aligned `t_i = i * W / n`).
    pub left_aligned: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct KeyframeSet {
    pub frames: Vec<Frame>,
    pub timestamps_s: Vec<f64>,
    /// Decoded frame index used for each timestamp.
    pub frame_indices: Vec<usize>,
    pub policy: SamplingPolicy,
}

impl KeyframeSet {
    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }
}

/// Left-aligned uniform grid over the first `min(window_s, duration_s)` seconds.
pub fn keyframe_timestamps(duration_s: f64, n: usize, window_s: f64) -> Result<Vec<f64>> {
    if n < 1 {
        return Err(Error::Argument("keyframe count must be >= 1".into()));
    }
    if !(window_s > 0.0) {
        return Err(Error::Argument(format!("window {window_s} s must be > 0")));
    }
    if !(duration_s > 0.0) {
        return Err(Error::DegenerateInput(format!("duration {duration_s} s")));
    }
    let span = window_s.min(duration_s);
    Ok((0..n).map(|i| i as f64 * span / n as f64).collect())
}

pub fn sample_keyframes(
    video: &dyn VideoSource,
    duration_s: f64,
    n: usize,
    window_s: f64,
) -> Result<KeyframeSet> {
    let timestamps_s = keyframe_timestamps(duration_s, n, window_s)?;
    let count = video.frame_count();
    let fps = video.fps();
    if count == 0 || video.duration_s() < 1.0 / fps - 1e-9 {
        return Err(Error::DegenerateInput(
            "video is shorter than one frame interval".into(),
        ));
    }
    let mut frames = Vec::with_capacity(n);
    let mut frame_indices = Vec::with_capacity(n);
    for &t in &timestamps_s {
        // first frame whose timestamp is >= t, tolerant to float noise
        let idx = ((t * fps - 1e-9).ceil().max(0.0) as usize).min(count - 1);
        frames.push(video.frame(idx)?);
        frame_indices.push(idx);
    }
    Ok(KeyframeSet {
        frames,
        timestamps_s,
        frame_indices,
        policy: SamplingPolicy {
            n,
            window_s,
            left_aligned: true,
        },
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum ResizeBudget {
    /// Exact output size; aspect ratio is not preserved.
    Fixed { height: usize, width: usize },
    /// Aspect-preserving downscale so `height * width <= max_pixels`, sides
    /// rounded to multiples of 28.
    PixelBudget { max_pixels: usize },
}

impl ResizeBudget {
    pub fn audio_visual() -> Self {
        ResizeBudget::Fixed {
            height: FIXED_SIDE,
            width: FIXED_SIDE,
        }
    }

    pub fn visual_language() -> Self {
        ResizeBudget::PixelBudget {
            max_pixels: DEFAULT_MAX_PIXELS,
        }
    }

    pub fn target_dims(&self, height: usize, width: usize) -> Result<(usize, usize)> {
        if height == 0 || width == 0 {
            return Err(Error::DegenerateInput(format!("{height}x{width} frame")));
        }
        match *self {
            ResizeBudget::Fixed { height, width } => {
                if height == 0 || width == 0 {
                    return Err(Error::Argument("fixed resize target must be non-empty".into()));
                }
                Ok((height, width))
            }
            ResizeBudget::PixelBudget { max_pixels } => budget_dims(height, width, max_pixels),
        }
    }
}

fn budget_dims(height: usize, width: usize, max_pixels: usize) -> Result<(usize, usize)> {
    let m = PATCH_MULTIPLE;
    if max_pixels < m * m {
        return Err(Error::Argument(format!(
            "pixel budget {max_pixels} is below one {m}x{m} patch"
        )));
    }
    let round_to = |v: f64| ((v / m as f64).round() as usize).max(1) * m;
    let (h, w) = (height as f64, width as f64);
    let (mut hb, mut wb) = (round_to(h), round_to(w));
    if hb * wb > max_pixels {
        let beta = (h * w / max_pixels as f64).sqrt();
        hb = ((h / beta / m as f64).floor() as usize).max(1) * m;
        wb = ((w / beta / m as f64).floor() as usize).max(1) * m;
        // Extreme aspect ratios: the one-patch floor on the short side can
        // still overshoot, so cap the long side by the remaining patches.
        let patches = max_pixels / (m * m);
        if (hb / m) * (wb / m) > patches {
            if hb == m {
                wb = patches * m;
            } else {
                hb = patches * m;
            }
        }
    }
    Ok((hb, wb))
}

pub fn resize_frames(ks: &KeyframeSet, budget: ResizeBudget) -> Result<KeyframeSet> {
    let frames = ks
        .frames
        .iter()
        .map(|f| {
            let (h, w) = budget.target_dims(f.height, f.width)?;
            Ok(resize_bilinear(f, h, w))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(KeyframeSet {
        frames,
        timestamps_s: ks.timestamps_s.clone(),
        frame_indices: ks.frame_indices.clone(),
        policy: ks.policy,
    })
}

/// Bilinear resize with half-pixel centers; same-size input is copied exactly.
pub fn resize_bilinear(src: &Frame, out_h: usize, out_w: usize) -> Frame {
    if src.height == out_h && src.width == out_w {
        return src.clone();
    }
    let sy = src.height as f32 / out_h as f32;
    let sx = src.width as f32 / out_w as f32;
    let axis = |o: usize, scale: f32, len: usize| {
        let p = ((o as f32 + 0.5) * scale - 0.5).max(0.0);
        let i0 = (p.floor() as usize).min(len - 1);
        let i1 = (i0 + 1).min(len - 1);
        (i0, i1, p - i0 as f32)
    };
    let xs: Vec<_> = (0..out_w).map(|x| axis(x, sx, src.width)).collect();
    let mut data = Vec::with_capacity(out_h * out_w * 3);
    for y in 0..out_h {
        let (y0, y1, fy) = axis(y, sy, src.height);
        for &(x0, x1, fx) in &xs {
            for c in 0..3 {
                let top = src.get(y0, x0, c) * (1.0 - fx) + src.get(y0, x1, c) * fx;
                let bot = src.get(y1, x0, c) * (1.0 - fx) + src.get(y1, x1, c) * fx;
                data.push(top * (1.0 - fy) + bot * fy);
            }
        }
    }
    Frame {
        height: out_h,
        width: out_w,
        data,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SpectrogramParams {
    pub sample_rate_hz: u32,
    pub mel_bins: usize,
    pub window_s: f64,
    pub hop_s: f64,
    pub f_min_hz: f64,
    /// Defaults to Nyquist when absent.
    pub f_max_hz: Option<f64>,
}

impl Default for SpectrogramParams {
    fn default() -> Self {
        SpectrogramParams {
            sample_rate_hz: 16_000,
            mel_bins: 128,
            window_s: 0.025,
            hop_s: 0.010,
            f_min_hz: 0.0,
            f_max_hz: None,
        }
    }
}

impl SpectrogramParams {
    pub fn validate(&self) -> Result<()> {
        if self.sample_rate_hz == 0 || self.mel_bins == 0 {
            return Err(Error::Argument("sample rate and mel bins must be > 0".into()));
        }
        if !(self.window_s > 0.0 && self.hop_s > 0.0) {
            return Err(Error::Argument("window and hop must be > 0".into()));
        }
        if self.f_max_hz() <= self.f_min_hz {
            return Err(Error::Argument("mel range is empty".into()));
        }
        Ok(())
    }

    pub fn window_len(&self) -> usize {
        ((self.window_s * f64::from(self.sample_rate_hz)).round() as usize).max(1)
    }

    pub fn hop_len(&self) -> usize {
        ((self.hop_s * f64::from(self.sample_rate_hz)).round() as usize).max(1)
    }

    pub fn n_fft(&self) -> usize {
        self.window_len().next_power_of_two()
    }

    pub fn f_max_hz(&self) -> f64 {
        self.f_max_hz
            .unwrap_or(f64::from(self.sample_rate_hz) / 2.0)
    }

    /// Frames produced for `samples` input samples; short input is zero-padded
    /// to one window.
    pub fn frame_count(&self, samples: usize) -> usize {
        let win = self.window_len();
        if samples <= win {
            1
        } else {
            1 + (samples - win) / self.hop_len()
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AudioSpectrogram {
    /// `mel_bins × time_frames`.
    pub values: Array2<f32>,
    pub sample_rate_hz: u32,
    pub mel_bins: usize,
    pub window_s: f64,
    pub hop_s: f64,
    pub log_scaled: bool,
    /// Set when the audio was missing or undecodable and silence was substituted.
    pub silent: bool,
}

impl AudioSpectrogram {
    pub fn time_frames(&self) -> usize {
        self.values.ncols()
    }

    pub fn silent(duration_s: f64, params: &SpectrogramParams) -> Self {
        let samples = (duration_s.max(0.0) * f64::from(params.sample_rate_hz)).round() as usize;
        AudioSpectrogram {
            values: Array2::zeros((params.mel_bins, params.frame_count(samples))),
            sample_rate_hz: params.sample_rate_hz,
            mel_bins: params.mel_bins,
            window_s: params.window_s,
            hop_s: params.hop_s,
            log_scaled: true,
            silent: true,
        }
    }
}

pub fn hz_to_mel(hz: f64) -> f64 {
    2595.0 * (1.0 + hz / 700.0).log10()
}

pub fn mel_to_hz(mel: f64) -> f64 {
    700.0 * (10f64.powf(mel / 2595.0) - 1.0)
}

/// Triangular (peak-normalized) mel filters over the rfft bins; `mel_bins × (n_fft/2 + 1)`.
pub fn mel_filterbank(params: &SpectrogramParams) -> Array2<f32> {
    let n_fft = params.n_fft();
    let n_bins = n_fft / 2 + 1;
    let (lo, hi) = (hz_to_mel(params.f_min_hz), hz_to_mel(params.f_max_hz()));
    let pts: Vec<f64> = (0..params.mel_bins + 2)
        .map(|i| mel_to_hz(lo + (hi - lo) * i as f64 / (params.mel_bins + 1) as f64))
        .collect();
    let bin_hz = f64::from(params.sample_rate_hz) / n_fft as f64;
    Array2::from_shape_fn((params.mel_bins, n_bins), |(m, k)| {
        let f = k as f64 * bin_hz;
        let (l, c, r) = (pts[m], pts[m + 1], pts[m + 2]);
        let w = if f > l && f <= c {
            (f - l) / (c - l)
        } else if f > c && f < r {
            (r - f) / (r - c)
        } else {
            0.0
        };
        w as f32
    })
}

/// Linear-interpolation resampling of a mono signal.
pub fn resample_linear(samples: &[f32], from_hz: u32, to_hz: u32) -> Vec<f32> {
    if from_hz == to_hz || samples.is_empty() {
        return samples.to_vec();
    }
    let ratio = f64::from(from_hz) / f64::from(to_hz);
    let out_len = ((samples.len() as f64) / ratio).round() as usize;
    (0..out_len)
        .map(|i| {
            let p = i as f64 * ratio;
            let i0 = (p.floor() as usize).min(samples.len() - 1);
            let i1 = (i0 + 1).min(samples.len() - 1);
            let f = (p - i0 as f64) as f32;
            samples[i0] * (1.0 - f) + samples[i1] * f
        })
        .collect()
}

pub fn spectrogram_from_pcm(audio: &PcmAudio, params: &SpectrogramParams) -> Result<AudioSpectrogram> {
    params.validate()?;
    let mono = resample_linear(&audio.to_mono(), audio.sample_rate, params.sample_rate_hz);
    let win = params.window_len();
    let hop = params.hop_len();
    let n_fft = params.n_fft();
    let frames = params.frame_count(mono.len());
    let window: Vec<f32> = (0..win)
        .map(|i| {
            let x = 2.0 * std::f64::consts::PI * i as f64 / win as f64;
            (0.5 - 0.5 * x.cos()) as f32
        })
        .collect();
    let bank = mel_filterbank(params);
    let fft = FftPlanner::<f32>::new().plan_fft_forward(n_fft);
    let mut buf = vec![Complex::new(0.0f32, 0.0); n_fft];
    let mut mags = Array2::<f32>::zeros((n_fft / 2 + 1, frames));
    for t in 0..frames {
        let start = t * hop;
        for (i, b) in buf.iter_mut().enumerate() {
            let s = if i < win { mono.get(start + i).copied().unwrap_or(0.0) * window[i] } else { 0.0 };
            *b = Complex::new(s, 0.0);
        }
        fft.process(&mut buf);
        for k in 0..=n_fft / 2 {
            mags[[k, t]] = buf[k].norm();
        }
    }
    let mut values = bank.dot(&mags);
    values.mapv_inplace(|v| v.max(0.0).ln_1p());
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::Media("non-finite spectrogram values".into()));
    }
    Ok(AudioSpectrogram {
        values,
        sample_rate_hz: params.sample_rate_hz,
        mel_bins: params.mel_bins,
        window_s: params.window_s,
        hop_s: params.hop_s,
        log_scaled: true,
        silent: false,
    })
}

/// Missing or undecodable audio yields the silent spectrogram for the record's duration.
pub fn compute_spectrogram(
    decoder: &dyn MediaDecoder,
    audio_path: Option<&Path>,
    duration_s: f64,
    params: &SpectrogramParams,
) -> Result<AudioSpectrogram> {
    params.validate()?;
    let Some(path) = audio_path else {
        return Ok(AudioSpectrogram::silent(duration_s, params));
    };
    match decoder.decode_audio(path) {
        Ok(pcm) if pcm.frames() > 0 => spectrogram_from_pcm(&pcm, params),
        Ok(_) | Err(_) => Ok(AudioSpectrogram::silent(duration_s, params)),
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NormalizedMetadata {
    pub title_text: String,
    pub description_text: String,
}

pub fn normalize_metadata(record: &VideoRecord) -> NormalizedMetadata {
    fn field(v: &Option<String>) -> String {
        match v {
            Some(s) if !s.trim().is_empty() => s.clone(),
            _ => MISSING_PLACEHOLDER.to_string(),
        }
    }
    NormalizedMetadata {
        title_text: field(&record.title),
        description_text: field(&record.description),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PreprocessConfig {
    pub n_frames: usize,
    pub window_s: f64,
    pub resize: ResizeBudget,
    pub spectrogram: SpectrogramParams,
    /// Skip spectrogram computation entirely (visual-only pipelines).
    pub audio: bool,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        PreprocessConfig {
            n_frames: DEFAULT_KEYFRAMES,
            window_s: DEFAULT_WINDOW_S,
            resize: ResizeBudget::audio_visual(),
            spectrogram: SpectrogramParams::default(),
            audio: true,
        }
    }
}

/// Everything one record contributes to a model input.
#[derive(Debug, Clone, PartialEq)]
pub struct PreprocessedRecord {
    pub id: String,
    pub keyframes: KeyframeSet,
    pub spectrogram: Option<AudioSpectrogram>,
    pub metadata: NormalizedMetadata,
}

#[derive(Clone)]
pub struct Preprocessor {
    pub config: PreprocessConfig,
    decoder: Arc<dyn MediaDecoder>,
}

impl Preprocessor {
    pub fn new(config: PreprocessConfig, decoder: Arc<dyn MediaDecoder>) -> Self {
        Preprocessor { config, decoder }
    }

    pub fn decoder(&self) -> &dyn MediaDecoder {
        self.decoder.as_ref()
    }

    pub fn process(&self, manifest: &Manifest, record: &VideoRecord) -> Result<PreprocessedRecord> {
        let video = self.decoder.open_video(&manifest.resolve(&record.video_path))?;
        let raw = sample_keyframes(
            video.as_ref(),
            record.duration_s,
            self.config.n_frames,
            self.config.window_s,
        )?;
        let keyframes = resize_frames(&raw, self.config.resize)?;
        let spectrogram = if self.config.audio {
            let path = record.audio_path.as_ref().map(|p| manifest.resolve(p));
            Some(compute_spectrogram(
                self.decoder.as_ref(),
                path.as_deref(),
                record.duration_s,
                &self.config.spectrogram,
            )?)
        } else {
            None
        };
        Ok(PreprocessedRecord {
            id: record.id.clone(),
            keyframes,
            spectrogram,
            metadata: normalize_metadata(record),
        })
    }
}
