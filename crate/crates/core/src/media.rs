//! Media decoding seam.
//!
//! Everything that touches container formats goes through [`MediaDecoder`], so a
//! real codec backend can be dropped in without touching preprocessing. The
//! bundled [`RawMediaDecoder`] reads two trivially decodable formats:
//!
//! * `.rvid`: `b"RVID"`, `u32` version (1), `u32` width, `u32` height,
//!   `f32` fps, `u32` frame count, then `frame count × height × width × 3`
//!   RGB bytes, all little-endian.
//! * `.wav`: RIFF/WAVE with PCM 16-bit or IEEE float 32-bit samples.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

const RVID_MAGIC: &[u8; 4] = b"RVID";
const RVID_VERSION: u32 = 1;
const RVID_HEADER_LEN: usize = 24;

/// An RGB image with channel values in `[0, 1]`, stored row-major HWC.
#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    pub height: usize,
    pub width: usize,
    pub data: Vec<f32>,
}

impl Frame {
    pub fn new(height: usize, width: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != height * width * 3 {
            return Err(Error::Shape(format!(
                "frame buffer of {} values does not match {height}x{width}x3",
                data.len()
            )));
        }
        Ok(Frame {
            height,
            width,
            data,
        })
    }

    pub fn filled(height: usize, width: usize, value: f32) -> Self {
        Frame {
            height,
            width,
            data: vec![value; height * width * 3],
        }
    }

    pub fn from_rgb8(height: usize, width: usize, bytes: &[u8]) -> Result<Self> {
        Frame::new(
            height,
            width,
            bytes.iter().map(|&b| f32::from(b) / 255.0).collect(),
        )
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize, c: usize) -> f32 {
        self.data[(y * self.width + x) * 3 + c]
    }

    pub fn to_rgb8(&self) -> Vec<u8> {
        self.data
            .iter()
            .map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
            .collect()
    }

    pub fn mean(&self) -> f64 {
        self.data.iter().map(|&v| f64::from(v)).sum::<f64>() / self.data.len().max(1) as f64
    }
}

/// Random-access view over a decoded video stream.
pub trait VideoSource {
    fn fps(&self) -> f64;
    fn frame_count(&self) -> usize;
    fn width(&self) -> usize;
    fn height(&self) -> usize;
    fn frame(&self, index: usize) -> Result<Frame>;

    fn duration_s(&self) -> f64 {
        self.frame_count() as f64 / self.fps()
    }

    fn timestamp(&self, index: usize) -> f64 {
        index as f64 / self.fps()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PcmAudio {
    pub sample_rate: u32,
    pub channels: u16,
    /// Interleaved samples in `[-1, 1]`.
    pub samples: Vec<f32>,
}

impl PcmAudio {
    pub fn frames(&self) -> usize {
        self.samples.len() / usize::from(self.channels.max(1))
    }

    pub fn duration_s(&self) -> f64 {
        self.frames() as f64 / f64::from(self.sample_rate)
    }

    /// Average the channels into one.
    pub fn to_mono(&self) -> Vec<f32> {
        let ch = usize::from(self.channels.max(1));
        if ch == 1 {
            return self.samples.clone();
        }
        self.samples
            .chunks_exact(ch)
            .map(|c| c.iter().sum::<f32>() / ch as f32)
            .collect()
    }
}

pub trait MediaDecoder: Send + Sync {
    fn open_video(&self, path: &Path) -> Result<Box<dyn VideoSource>>;
    fn decode_audio(&self, path: &Path) -> Result<PcmAudio>;
}

#[derive(Debug, Default, Clone, Copy)]
pub struct RawMediaDecoder;

impl MediaDecoder for RawMediaDecoder {
    fn open_video(&self, path: &Path) -> Result<Box<dyn VideoSource>> {
        let bytes = fs::read(path)
            .map_err(|e| Error::Media(format!("cannot read video {}: {e}", path.display())))?;
        Ok(Box::new(RawVideo::parse(&bytes).map_err(|e| match e {
            Error::Media(m) => Error::Media(format!("{}: {m}", path.display())),
            other => other,
        })?))
    }

    fn decode_audio(&self, path: &Path) -> Result<PcmAudio> {
        let bytes = fs::read(path)
            .map_err(|e| Error::Media(format!("cannot read audio {}: {e}", path.display())))?;
        parse_wav(&bytes).map_err(|e| match e {
            Error::Media(m) => Error::Media(format!("{}: {m}", path.display())),
            other => other,
        })
    }
}

/// In-memory `.rvid` video.
#[derive(Debug, Clone, PartialEq)]
pub struct RawVideo {
    pub width: usize,
    pub height: usize,
    pub fps: f32,
    /// One `height × width × 3` RGB buffer per frame.
    pub frames: Vec<Vec<u8>>,
}

impl RawVideo {
    pub fn parse(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < RVID_HEADER_LEN || &bytes[..4] != RVID_MAGIC {
            return Err(Error::Media("not an RVID stream".into()));
        }
        let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap());
        let version = u32_at(4);
        if version != RVID_VERSION {
            return Err(Error::Media(format!("unsupported RVID version {version}")));
        }
        let width = u32_at(8) as usize;
        let height = u32_at(12) as usize;
        let fps = f32::from_le_bytes(bytes[16..20].try_into().unwrap());
        let count = u32_at(20) as usize;
        if !(fps.is_finite() && fps > 0.0) {
            return Err(Error::Media(format!("invalid frame rate {fps}")));
        }
        let frame_len = width * height * 3;
        let body = &bytes[RVID_HEADER_LEN..];
        if body.len() != frame_len * count {
            return Err(Error::Media(format!(
                "truncated RVID body: expected {} bytes, found {}",
                frame_len * count,
                body.len()
            )));
        }
        let frames = if frame_len == 0 {
            vec![Vec::new(); count]
        } else {
            body.chunks_exact(frame_len).map(<[u8]>::to_vec).collect()
        };
        Ok(RawVideo {
            width,
            height,
            fps,
            frames,
        })
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(RVID_HEADER_LEN + self.frames.len() * self.width * self.height * 3);
        out.extend_from_slice(RVID_MAGIC);
        out.extend_from_slice(&RVID_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.width as u32).to_le_bytes());
        out.extend_from_slice(&(self.height as u32).to_le_bytes());
        out.extend_from_slice(&self.fps.to_le_bytes());
        out.extend_from_slice(&(self.frames.len() as u32).to_le_bytes());
        for f in &self.frames {
            out.extend_from_slice(f);
        }
        out
    }
}

impl VideoSource for RawVideo {
    fn fps(&self) -> f64 {
        f64::from(self.fps)
    }

    fn frame_count(&self) -> usize {
        self.frames.len()
    }

    fn width(&self) -> usize {
        self.width
    }

    fn height(&self) -> usize {
        self.height
    }

    fn frame(&self, index: usize) -> Result<Frame> {
        let bytes = self
            .frames
            .get(index)
            .ok_or_else(|| Error::Media(format!("frame {index} out of range")))?;
        Frame::from_rgb8(self.height, self.width, bytes)
    }
}

pub fn parse_wav(bytes: &[u8]) -> Result<PcmAudio> {
    if bytes.len() < 12 || &bytes[..4] != b"RIFF" || &bytes[8..12] != b"WAVE" {
        return Err(Error::Media("not a RIFF/WAVE stream".into()));
    }
    let mut pos = 12;
    let mut format: Option<(u16, u16, u32, u16)> = None;
    while pos + 8 <= bytes.len() {
        let id = &bytes[pos..pos + 4];
        let len = u32::from_le_bytes(bytes[pos + 4..pos + 8].try_into().unwrap()) as usize;
        let start = pos + 8;
        let end = start
            .checked_add(len)
            .filter(|&e| e <= bytes.len())
            .ok_or_else(|| Error::Media("truncated WAV chunk".into()))?;
        let chunk = &bytes[start..end];
        match id {
            b"fmt " => {
                if chunk.len() < 16 {
                    return Err(Error::Media("short fmt chunk".into()));
                }
                let tag = u16::from_le_bytes([chunk[0], chunk[1]]);
                let channels = u16::from_le_bytes([chunk[2], chunk[3]]);
                let rate = u32::from_le_bytes(chunk[4..8].try_into().unwrap());
                let bits = u16::from_le_bytes([chunk[14], chunk[15]]);
                format = Some((tag, channels, rate, bits));
            }
            b"data" => {
                let (tag, channels, sample_rate, bits) =
                    format.ok_or_else(|| Error::Media("data chunk before fmt chunk".into()))?;
                if channels == 0 || sample_rate == 0 {
                    return Err(Error::Media("zero channels or sample rate".into()));
                }
                let samples = match (tag, bits) {
                    (1, 16) => chunk
                        .chunks_exact(2)
                        .map(|b| f32::from(i16::from_le_bytes([b[0], b[1]])) / 32768.0)
                        .collect(),
                    (3, 32) => chunk
                        .chunks_exact(4)
                        .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
                        .collect(),
                    _ => {
                        return Err(Error::Media(format!(
                            "unsupported WAV encoding (format {tag}, {bits} bits)"
                        )))
                    }
                };
                return Ok(PcmAudio {
                    sample_rate,
                    channels,
                    samples,
                });
            }
            _ => {}
        }
        pos = end + (len & 1);
    }
    Err(Error::Media("WAV stream has no data chunk".into()))
}

/// Encode mono or interleaved samples as 16-bit PCM WAV.
pub fn wav_pcm16_bytes(audio: &PcmAudio) -> Vec<u8> {
    let data_len = audio.samples.len() * 2;
    let block_align = audio.channels * 2;
    let mut out = Vec::with_capacity(44 + data_len);
    out.extend_from_slice(b"RIFF");
    out.extend_from_slice(&((36 + data_len) as u32).to_le_bytes());
    out.extend_from_slice(b"WAVE");
    out.extend_from_slice(b"fmt ");
    out.extend_from_slice(&16u32.to_le_bytes());
    out.extend_from_slice(&1u16.to_le_bytes());
    out.extend_from_slice(&audio.channels.to_le_bytes());
    out.extend_from_slice(&audio.sample_rate.to_le_bytes());
    out.extend_from_slice(&(audio.sample_rate * u32::from(block_align)).to_le_bytes());
    out.extend_from_slice(&block_align.to_le_bytes());
    out.extend_from_slice(&16u16.to_le_bytes());
    out.extend_from_slice(b"data");
    out.extend_from_slice(&(data_len as u32).to_le_bytes());
    for &s in &audio.samples {
        out.extend_from_slice(&quantize_pcm16(s).to_le_bytes());
    }
    out
}

#[inline]
pub fn quantize_pcm16(s: f32) -> i16 {
    (s * 32768.0).round().clamp(-32768.0, 32767.0) as i16
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rvid_round_trip() {
        let v = RawVideo {
            width: 2,
            height: 3,
            fps: 4.0,
            frames: vec![vec![7u8; 18], vec![200u8; 18]],
        };
        let back = RawVideo::parse(&v.to_bytes()).unwrap();
        assert_eq!(back, v);
        assert_eq!(back.frame_count(), 2);
        assert!((back.duration_s() - 0.5).abs() < 1e-12);
        assert!((back.frame(1).unwrap().get(2, 1, 2) - 200.0 / 255.0).abs() < 1e-6);
    }

    #[test]
    fn rvid_rejects_truncated_body() {
        let mut bytes = RawVideo {
            width: 2,
            height: 2,
            fps: 1.0,
            frames: vec![vec![0; 12]],
        }
        .to_bytes();
        bytes.pop();
        assert!(matches!(RawVideo::parse(&bytes), Err(Error::Media(_))));
        assert!(matches!(RawVideo::parse(b"nope"), Err(Error::Media(_))));
    }

    #[test]
    fn wav_round_trip_pcm16() {
        let audio = PcmAudio {
            sample_rate: 8000,
            channels: 2,
            samples: vec![0.0, 0.5, -0.5, 0.25],
        };
        let back = parse_wav(&wav_pcm16_bytes(&audio)).unwrap();
        assert_eq!(back.sample_rate, 8000);
        assert_eq!(back.channels, 2);
        assert_eq!(back.frames(), 2);
        for (a, b) in back.samples.iter().zip(&audio.samples) {
            assert!((a - b).abs() < 1e-4);
        }
        assert_eq!(back.to_mono().len(), 2);
    }
}
