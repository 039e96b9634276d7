//! Procedural desk-scale dataset.
//!
//! Each record `i` draws its parameters from a ChaCha8 stream keyed by
//! `(seed, i)`, so record `i` is the same no matter how many records are made.
//! Videos are 18x32 (9:16) RGB at 4 fps lasting 5 to 10 seconds; about 80% carry
//! an 8 kHz mono tone as audio.
//!
//! The ECR label is a fixed function of the decoded media:
//!
//! ```text
//! B   = mean channel value (in [0,1]) over all frames with timestamp < 5 s
//! R   = min(1, rms(audio samples) / 0.35), or 0 without audio
//! ecr = clamp(0.1 + 0.55 * B + 0.35 * R, 0, 1)
//! ```

use std::f64::consts::PI;
use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Manifest, ManifestSource, Split, VideoRecord};
use crate::error::{Error, Result};
use crate::media::{quantize_pcm16, wav_pcm16_bytes, PcmAudio, RawVideo, VideoSource};

pub const LABEL_BIAS: f64 = 0.1;
pub const LABEL_VISUAL_WEIGHT: f64 = 0.55;
pub const LABEL_AUDIO_WEIGHT: f64 = 0.35;
pub const LABEL_RMS_SCALE: f64 = 0.35;
pub const LABEL_WINDOW_S: f64 = 5.0;

const WIDTH: usize = 18;
const HEIGHT: usize = 32;
const FPS: f32 = 4.0;
const AUDIO_RATE: u32 = 8000;

const WORDS: &[&str] = &[
    "cat", "dance", "sunset", "prank", "recipe", "beach", "skate", "music", "tutorial", "dog",
    "morning", "city", "rain", "challenge", "glow", "street", "funny", "travel", "workout",
    "makeup", "live", "game", "friends", "night",
];

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticParams {
    pub id: String,
    pub duration_s: f64,
    pub brightness: f64,
    pub tint: [f64; 3],
    pub pattern_amp: f64,
    pub freq_x: f64,
    pub freq_y: f64,
    pub motion: f64,
    pub phase: f64,
    /// `(frequency Hz, amplitude)` of the audio tone, if any.
    pub tone: Option<(f64, f64)>,
    pub title: Option<String>,
    pub description: Option<String>,
}

impl SyntheticParams {
    pub fn draw(seed: u64, index: usize) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(index as u64);
        let duration_s = 5.0 + 0.25 * f64::from(rng.random_range(0u32..=20));
        let brightness = rng.random_range(0.15..0.85);
        let tint = [
            rng.random_range(0.0..1.0),
            rng.random_range(0.0..1.0),
            rng.random_range(0.0..1.0),
        ];
        let pattern_amp = rng.random_range(0.05..0.3);
        let freq_x = rng.random_range(0.5..3.0);
        let freq_y = rng.random_range(0.5..3.0);
        let motion = rng.random_range(-2.0..2.0);
        let phase = rng.random_range(0.0..2.0 * PI);
        let tone = if rng.random_bool(0.8) {
            Some((rng.random_range(200.0..2000.0), rng.random_range(0.05..0.5)))
        } else {
            None
        };
        let words = |rng: &mut ChaCha8Rng, n: usize| {
            (0..n)
                .map(|_| WORDS[rng.random_range(0..WORDS.len())])
                .collect::<Vec<_>>()
                .join(" ")
        };
        let title = rng.random_bool(0.7).then(|| {
            let n = rng.random_range(2..=4);
            words(&mut rng, n)
        });
        let description = rng.random_bool(0.5).then(|| {
            let n = rng.random_range(4..=9);
            words(&mut rng, n)
        });
        SyntheticParams {
            id: format!("syn{index:05}"),
            duration_s,
            brightness,
            tint,
            pattern_amp,
            freq_x,
            freq_y,
            motion,
            phase,
            tone,
            title,
            description,
        }
    }

    pub fn video_path(&self) -> PathBuf {
        PathBuf::from("media").join(format!("{}.rvid", self.id))
    }

    pub fn audio_path(&self) -> Option<PathBuf> {
        self.tone
            .map(|_| PathBuf::from("media").join(format!("{}.wav", self.id)))
    }
}

/// Render the media described by `p`. Audio samples are exactly representable
/// as 16-bit PCM, so writing and decoding the WAV file is lossless.
pub fn synthetic_media(p: &SyntheticParams) -> (RawVideo, Option<PcmAudio>) {
    let n_frames = (p.duration_s * f64::from(FPS)).round() as usize;
    let frames = (0..n_frames)
        .map(|k| {
            let t = k as f64 / f64::from(FPS);
            let mut buf = Vec::with_capacity(WIDTH * HEIGHT * 3);
            for y in 0..HEIGHT {
                for x in 0..WIDTH {
                    let wave = (2.0
                        * PI
                        * (p.freq_x * x as f64 / WIDTH as f64 + p.freq_y * y as f64 / HEIGHT as f64)
                        + p.motion * t
                        + p.phase)
                        .sin();
                    for c in 0..3 {
                        let v = p.brightness + p.pattern_amp * (2.0 * p.tint[c] - 1.0 + wave);
                        buf.push((v.clamp(0.0, 1.0) * 255.0).round() as u8);
                    }
                }
            }
            buf
        })
        .collect();
    let video = RawVideo {
        width: WIDTH,
        height: HEIGHT,
        fps: FPS,
        frames,
    };
    let audio = p.tone.map(|(freq, amp)| {
        let n = (p.duration_s * f64::from(AUDIO_RATE)).round() as usize;
        let samples = (0..n)
            .map(|i| {
                let s = amp * (2.0 * PI * freq * i as f64 / f64::from(AUDIO_RATE)).sin();
                f32::from(quantize_pcm16(s as f32)) / 32768.0
            })
            .collect();
        PcmAudio {
            sample_rate: AUDIO_RATE,
            channels: 1,
            samples,
        }
    });
    (video, audio)
}

/// The documented label function applied to decoded media.
pub fn label_from_media(video: &dyn VideoSource, audio: Option<&PcmAudio>) -> Result<f64> {
    let mut sum = 0.0;
    let mut count = 0usize;
    for k in 0..video.frame_count() {
        if video.timestamp(k) >= LABEL_WINDOW_S {
            break;
        }
        let f = video.frame(k)?;
        sum += f.data.iter().map(|&v| f64::from(v)).sum::<f64>();
        count += f.data.len();
    }
    if count == 0 {
        return Err(Error::DegenerateInput("video has no frames".into()));
    }
    let visual = sum / count as f64;
    let audio_term = audio.map_or(0.0, |a| {
        let mono = a.to_mono();
        if mono.is_empty() {
            return 0.0;
        }
        let ms = mono.iter().map(|&s| f64::from(s).powi(2)).sum::<f64>() / mono.len() as f64;
        (ms.sqrt() / LABEL_RMS_SCALE).min(1.0)
    });
    Ok((LABEL_BIAS + LABEL_VISUAL_WEIGHT * visual + LABEL_AUDIO_WEIGHT * audio_term).clamp(0.0, 1.0))
}

fn record_from_media(
    p: &SyntheticParams,
    video: &RawVideo,
    audio: Option<&PcmAudio>,
) -> Result<VideoRecord> {
    Ok(VideoRecord {
        id: p.id.clone(),
        video_path: p.video_path(),
        audio_path: p.audio_path(),
        title: p.title.clone(),
        description: p.description.clone(),
        duration_s: p.duration_s,
        ecr: Some(label_from_media(video, audio)?),
    })
}

pub fn make_synthetic_manifest(n: usize, seed: u64) -> Result<Manifest> {
    if n < 1 {
        return Err(Error::Argument("synthetic manifest needs n >= 1".into()));
    }
    let records = (0..n)
        .map(|i| {
            let p = SyntheticParams::draw(seed, i);
            let (video, audio) = synthetic_media(&p);
            record_from_media(&p, &video, audio.as_ref())
        })
        .collect::<Result<_>>()?;
    Ok(Manifest::new(records, Split::Train, ManifestSource::Synthetic))
}

/// Write media files under `out_dir/media/` and `out_dir/manifest.jsonl`;
/// returns the manifest bound to the written file.
pub fn write_synthetic_dataset(n: usize, seed: u64, out_dir: &Path) -> Result<Manifest> {
    if n < 1 {
        return Err(Error::Argument("synthetic manifest needs n >= 1".into()));
    }
    fs::create_dir_all(out_dir.join("media"))?;
    let mut records = Vec::with_capacity(n);
    for i in 0..n {
        let p = SyntheticParams::draw(seed, i);
        let (video, audio) = synthetic_media(&p);
        fs::write(out_dir.join(p.video_path()), video.to_bytes())?;
        if let (Some(a), Some(path)) = (&audio, p.audio_path()) {
            fs::write(out_dir.join(path), wav_pcm16_bytes(a))?;
        }
        records.push(record_from_media(&p, &video, audio.as_ref())?);
    }
    let path = out_dir.join("manifest.jsonl");
    let manifest = Manifest::new(records, Split::Train, ManifestSource::File(path.clone()));
    manifest.write(&path)?;
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_and_prefix_stable() {
        let a = make_synthetic_manifest(4, 7).unwrap();
        let b = make_synthetic_manifest(4, 7).unwrap();
        assert_eq!(a.to_jsonl(), b.to_jsonl());
        let c = make_synthetic_manifest(6, 7).unwrap();
        assert_eq!(a.records[..], c.records[..4]);
        assert_ne!(a.to_jsonl(), make_synthetic_manifest(4, 8).unwrap().to_jsonl());
    }

    #[test]
    fn labels_in_unit_interval() {
        let m = make_synthetic_manifest(32, 1).unwrap();
        assert_eq!(m.len(), 32);
        for r in &m.records {
            let y = r.ecr.unwrap();
            assert!((0.0..=1.0).contains(&y), "{y}");
            assert!((5.0..=10.0).contains(&r.duration_s));
        }
    }

    #[test]
    fn zero_records_rejected() {
        assert!(matches!(make_synthetic_manifest(0, 1), Err(Error::Argument(_))));
    }
}
