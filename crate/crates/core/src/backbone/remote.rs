//! JSON-over-HTTP client for externally served multimodal models.
//!
//! Request body:
//!
//! ```json
//! { "model_id": "...", "prompt": "...", "frames": ["<base64 PNG>", ...],
//!   "spectrogram": {"shape": [mel, t], "data": "<base64 f32 LE row-major>"} | null,
//!   "mode": "hidden" | "generate" }
//! ```
//!
//! Replies are `{"hidden_states": {"shape": [T, dim], "data": "<base64 f32>"}}`,
//! `{"text": "..."}`, or `{"error": {"code": "...", "message": "..."}}`.

use std::time::Duration;

use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine;
use ndarray::Array2;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::{Backbone, Capabilities, HiddenStates, ModelInput};
use crate::error::{Error, Result};
use crate::media::Frame;
use crate::preprocess::AudioSpectrogram;

/// Environment variable holding a bearer token for the remote endpoint.
pub const CREDENTIALS_ENV: &str = "VIDENGAGE_REMOTE_TOKEN";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RequestMode {
    Hidden,
    Generate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorPayload {
    pub shape: Vec<usize>,
    pub data: String,
}

impl TensorPayload {
    pub fn from_matrix_f32(rows: usize, cols: usize, values: impl Iterator<Item = f32>) -> Self {
        let mut bytes = Vec::with_capacity(rows * cols * 4);
        for v in values {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        TensorPayload {
            shape: vec![rows, cols],
            data: B64.encode(bytes),
        }
    }

    pub fn from_spectrogram(s: &AudioSpectrogram) -> Self {
        let (m, t) = s.values.dim();
        TensorPayload::from_matrix_f32(m, t, s.values.iter().copied())
    }

    /// Decode as a 2-D matrix; `field` names the payload in protocol errors.
    pub fn to_matrix(&self, field: &str) -> Result<Array2<f64>> {
        let [rows, cols] = self.shape[..] else {
            return Err(Error::protocol(format!("{field}.shape"), "expected two dimensions"));
        };
        let bytes = B64
            .decode(&self.data)
            .map_err(|e| Error::protocol(format!("{field}.data"), e.to_string()))?;
        if bytes.len() != rows * cols * 4 {
            return Err(Error::protocol(
                format!("{field}.data"),
                format!("{} bytes do not match shape [{rows}, {cols}]", bytes.len()),
            ));
        }
        let values = bytes
            .chunks_exact(4)
            .map(|c| f64::from(f32::from_le_bytes(c.try_into().unwrap())))
            .collect();
        Array2::from_shape_vec((rows, cols), values).map_err(|e| Error::protocol(field, e.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RemoteRequest {
    pub model_id: String,
    pub prompt: String,
    pub frames: Vec<String>,
    pub spectrogram: Option<TensorPayload>,
    pub mode: RequestMode,
}

impl RemoteRequest {
    pub fn new(model_id: &str, input: &ModelInput, mode: RequestMode) -> Result<Self> {
        Ok(RemoteRequest {
            model_id: model_id.to_string(),
            prompt: input.rendered_prompt(),
            frames: input
                .keyframes
                .frames
                .iter()
                .map(|f| encode_png(f).map(|b| B64.encode(b)))
                .collect::<Result<_>>()?,
            spectrogram: input
                .spectrogram
                .as_ref()
                .filter(|_| input.variant().uses_audio())
                .map(TensorPayload::from_spectrogram),
            mode,
        })
    }
}

pub fn encode_png(frame: &Frame) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    {
        let mut enc = png::Encoder::new(&mut out, frame.width as u32, frame.height as u32);
        enc.set_color(png::ColorType::Rgb);
        enc.set_depth(png::BitDepth::Eight);
        let mut w = enc
            .write_header()
            .map_err(|e| Error::Media(format!("png header: {e}")))?;
        w.write_image_data(&frame.to_rgb8())
            .map_err(|e| Error::Media(format!("png data: {e}")))?;
    }
    Ok(out)
}

pub fn decode_png(bytes: &[u8]) -> Result<Frame> {
    let decoder = png::Decoder::new(std::io::Cursor::new(bytes));
    let mut reader = decoder
        .read_info()
        .map_err(|e| Error::Media(format!("png: {e}")))?;
    let mut buf = vec![0; reader.output_buffer_size().unwrap_or(0)];
    let info = reader
        .next_frame(&mut buf)
        .map_err(|e| Error::Media(format!("png: {e}")))?;
    if info.color_type != png::ColorType::Rgb || info.bit_depth != png::BitDepth::Eight {
        return Err(Error::Media("expected 8-bit RGB png".into()));
    }
    Frame::from_rgb8(info.height as usize, info.width as usize, &buf[..info.buffer_size()])
}

/// Interpret a server reply for `mode`.
pub fn parse_response(body: &str, mode: RequestMode) -> Result<ReplyPayload> {
    let v: Value = serde_json::from_str(body).map_err(|e| Error::protocol("body", e.to_string()))?;
    let obj = v
        .as_object()
        .ok_or_else(|| Error::protocol("body", "reply is not a JSON object"))?;
    if let Some(err) = obj.get("error") {
        let field = |k: &str| err.get(k).and_then(Value::as_str).unwrap_or_default().to_string();
        return Err(Error::Backend {
            code: field("code"),
            message: field("message"),
        });
    }
    match mode {
        RequestMode::Generate => obj
            .get("text")
            .ok_or_else(|| Error::protocol("text", "missing from generate reply"))?
            .as_str()
            .map(|s| ReplyPayload::Text(s.to_string()))
            .ok_or_else(|| Error::protocol("text", "must be a string")),
        RequestMode::Hidden => {
            let hs = obj
                .get("hidden_states")
                .ok_or_else(|| Error::protocol("hidden_states", "missing from hidden reply"))?;
            if hs.get("shape").is_none() {
                return Err(Error::protocol("hidden_states.shape", "missing"));
            }
            if hs.get("data").is_none() {
                return Err(Error::protocol("hidden_states.data", "missing"));
            }
            let payload: TensorPayload = serde_json::from_value(hs.clone())
                .map_err(|e| Error::protocol("hidden_states", e.to_string()))?;
            let states = payload.to_matrix("hidden_states")?;
            HiddenStates::new(states)
                .map(ReplyPayload::Hidden)
                .map_err(|e| Error::protocol("hidden_states", e.to_string()))
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ReplyPayload {
    Hidden(HiddenStates),
    Text(String),
}

pub struct RemoteBackbone {
    endpoint: String,
    model_id: String,
    dim: usize,
    token: Option<String>,
    agent: ureq::Agent,
}

pub fn remote_backbone(endpoint: &str, model_id: &str, timeout_s: f64) -> Result<RemoteBackbone> {
    RemoteBackbone::new(endpoint, model_id, timeout_s)
}

impl RemoteBackbone {
    pub fn new(endpoint: &str, model_id: &str, timeout_s: f64) -> Result<Self> {
        if !(timeout_s > 0.0 && timeout_s.is_finite()) {
            return Err(Error::Argument(format!("timeout {timeout_s} s must be > 0")));
        }
        if !(endpoint.starts_with("http://") || endpoint.starts_with("https://")) {
            return Err(Error::Argument(format!("endpoint {endpoint:?} is not an http(s) URL")));
        }
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs_f64(timeout_s)))
            .http_status_as_error(false)
            .build()
            .into();
        Ok(RemoteBackbone {
            endpoint: endpoint.to_string(),
            model_id: model_id.to_string(),
            dim: 0,
            token: std::env::var(CREDENTIALS_ENV).ok().filter(|t| !t.is_empty()),
            agent,
        })
    }

    /// Declare the hidden-state width the server returns (0 = unknown).
    pub fn with_dim(mut self, dim: usize) -> Self {
        self.dim = dim;
        self
    }

    pub fn endpoint(&self) -> &str {
        &self.endpoint
    }

    pub fn request(&self, input: &ModelInput, mode: RequestMode) -> Result<ReplyPayload> {
        let body = serde_json::to_string(&RemoteRequest::new(&self.model_id, input, mode)?)
            .map_err(|e| Error::protocol("request", e.to_string()))?;
        let mut req = self
            .agent
            .post(&self.endpoint)
            .header("Content-Type", "application/json");
        if let Some(t) = &self.token {
            req = req.header("Authorization", &format!("Bearer {t}"));
        }
        let resp = req.send(body.as_str()).map_err(transport_error)?;
        let status = resp.status().as_u16();
        let text = resp
            .into_body()
            .read_to_string()
            .map_err(transport_error)?;
        match parse_response(&text, mode) {
            Err(Error::Protocol { .. }) if !(200..300).contains(&status) => Err(Error::Transport {
                message: format!("HTTP {status} from {}", self.endpoint),
                retryable: status >= 500,
            }),
            other => other,
        }
    }
}

fn transport_error(e: ureq::Error) -> Error {
    let retryable = matches!(
        e,
        ureq::Error::Timeout(_) | ureq::Error::ConnectionFailed | ureq::Error::Io(_)
    );
    Error::Transport {
        message: e.to_string(),
        retryable,
    }
}

impl Backbone for RemoteBackbone {
    fn model_id(&self) -> &str {
        &self.model_id
    }

    fn capabilities(&self) -> Capabilities {
        Capabilities {
            audio: true,
            encoders: false,
            hidden: true,
            generate: true,
            trainable: false,
        }
    }

    fn embedding_dim(&self) -> usize {
        self.dim
    }

    fn hidden_states(&self, input: &ModelInput) -> Result<HiddenStates> {
        match self.request(input, RequestMode::Hidden)? {
            ReplyPayload::Hidden(h) => {
                if self.dim != 0 && h.dim() != self.dim {
                    return Err(Error::protocol(
                        "hidden_states.shape",
                        format!("dim {} does not match declared {}", h.dim(), self.dim),
                    ));
                }
                Ok(h)
            }
            ReplyPayload::Text(_) => Err(Error::protocol("hidden_states", "server replied with text")),
        }
    }

    fn generate_score_text(&self, input: &ModelInput, _max_steps: usize) -> Result<String> {
        match self.request(input, RequestMode::Generate)? {
            ReplyPayload::Text(t) => Ok(t),
            ReplyPayload::Hidden(_) => Err(Error::protocol("text", "server replied with hidden states")),
        }
    }
}
