//! Backbone capability contract and the shared sequence types.

pub mod nn;
pub mod remote;
pub mod stub;
pub mod tokenizer;
pub mod toy;

use ndarray::{concatenate, Array2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::preprocess::{AudioSpectrogram, KeyframeSet, PreprocessedRecord};
use crate::prompt::{build_prompt, render_prompt, PromptBundle, PromptVariant};

pub use remote::RemoteBackbone;
pub use toy::{ToyBackbone, ToyConfig};

/// Score-token alphabet: digits `0`..`9` are ids 0..9, then `.` and the end marker.
pub mod vocab {
    pub const DOT: usize = 10;
    pub const END: usize = 11;
    pub const SIZE: usize = 12;

    pub fn token_for(c: char) -> Option<usize> {
        match c {
            '0'..='9' => Some(c as usize - '0' as usize),
            '.' => Some(DOT),
            _ => None,
        }
    }

    /// Printable form; the end marker renders as nothing.
    pub fn token_str(t: usize) -> &'static str {
        const DIGITS: [&str; 10] = ["0", "1", "2", "3", "4", "5", "6", "7", "8", "9"];
        match t {
            0..=9 => DIGITS[t],
            DOT => ".",
            _ => "",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Modality {
    Visual,
    Audio,
    Text,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingSequence {
    /// `length × dim`.
    pub vectors: Array2<f64>,
    pub modality: Modality,
}

impl EmbeddingSequence {
    pub fn new(vectors: Array2<f64>, modality: Modality) -> Result<Self> {
        if vectors.nrows() == 0 {
            return Err(Error::Shape(format!("{modality:?} embedding sequence is empty")));
        }
        if vectors.iter().any(|v| !v.is_finite()) {
            return Err(Error::Shape(format!("{modality:?} embeddings are not finite")));
        }
        Ok(EmbeddingSequence { vectors, modality })
    }

    pub fn len(&self) -> usize {
        self.vectors.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.nrows() == 0
    }

    pub fn dim(&self) -> usize {
        self.vectors.ncols()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SegmentSpan {
    pub modality: Modality,
    pub start: usize,
    pub len: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FusedSequence {
    pub vectors: Array2<f64>,
    pub segment_map: Vec<SegmentSpan>,
}

impl FusedSequence {
    pub fn len(&self) -> usize {
        self.vectors.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.nrows() == 0
    }

    /// Modality of every position.
    pub fn modalities(&self) -> Vec<Modality> {
        self.segment_map
            .iter()
            .flat_map(|s| std::iter::repeat_n(s.modality, s.len))
            .collect()
    }
}

/// Concatenate in the order visual, audio (if present), text.
pub fn fuse(
    visual: &EmbeddingSequence,
    audio: Option<&EmbeddingSequence>,
    text: &EmbeddingSequence,
) -> Result<FusedSequence> {
    let parts: Vec<&EmbeddingSequence> = std::iter::once(visual).chain(audio).chain(std::iter::once(text)).collect();
    let dim = visual.dim();
    if let Some(bad) = parts.iter().find(|p| p.dim() != dim) {
        return Err(Error::Shape(format!(
            "{:?} embeddings have dim {}, expected {dim}",
            bad.modality,
            bad.dim()
        )));
    }
    let mut segment_map = Vec::with_capacity(parts.len());
    let mut start = 0;
    for p in &parts {
        segment_map.push(SegmentSpan {
            modality: p.modality,
            start,
            len: p.len(),
        });
        start += p.len();
    }
    let views: Vec<_> = parts.iter().map(|p| p.vectors.view()).collect();
    let vectors = concatenate(Axis(0), &views).map_err(|e| Error::Shape(e.to_string()))?;
    Ok(FusedSequence {
        vectors,
        segment_map,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct HiddenStates {
    /// `T × dim`.
    pub states: Array2<f64>,
}

impl HiddenStates {
    pub fn new(states: Array2<f64>) -> Result<Self> {
        if states.nrows() == 0 {
            return Err(Error::Shape("hidden states are empty".into()));
        }
        if states.iter().any(|v| !v.is_finite()) {
            return Err(Error::Shape("hidden states are not finite".into()));
        }
        Ok(HiddenStates { states })
    }

    pub fn len(&self) -> usize {
        self.states.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.states.nrows() == 0
    }

    pub fn dim(&self) -> usize {
        self.states.ncols()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TokenLogits {
    /// `steps × vocab::SIZE`.
    pub logits: Array2<f64>,
}

impl TokenLogits {
    pub fn new(logits: Array2<f64>) -> Result<Self> {
        if logits.ncols() < vocab::SIZE {
            return Err(Error::Shape(format!(
                "token logits have {} columns, score vocabulary needs {}",
                logits.ncols(),
                vocab::SIZE
            )));
        }
        Ok(TokenLogits { logits })
    }

    pub fn steps(&self) -> usize {
        self.logits.nrows()
    }

    pub fn argmax(&self, step: usize) -> usize {
        let row = self.logits.row(step);
        let mut best = 0;
        for (i, &v) in row.iter().enumerate() {
            if v > row[best] {
                best = i;
            }
        }
        best
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Capabilities {
    pub audio: bool,
    /// Local encoders plus `decode_hidden` / `decode_tokens`.
    pub encoders: bool,
    pub hidden: bool,
    pub generate: bool,
    pub trainable: bool,
}

/// One sample as a backbone sees it.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelInput {
    pub id: String,
    pub keyframes: KeyframeSet,
    pub spectrogram: Option<AudioSpectrogram>,
    pub prompt: PromptBundle,
}

impl ModelInput {
    pub fn from_preprocessed(rec: PreprocessedRecord, variant: PromptVariant) -> Result<Self> {
        let prompt = build_prompt(&rec.metadata, rec.keyframes.len(), variant)?;
        let spectrogram = if variant.uses_audio() {
            Some(rec.spectrogram.ok_or_else(|| {
                Error::validation("variant", "audio_visual prompt needs a spectrogram")
            })?)
        } else {
            None
        };
        Ok(ModelInput {
            id: rec.id,
            keyframes: rec.keyframes,
            spectrogram,
            prompt,
        })
    }

    pub fn variant(&self) -> PromptVariant {
        self.prompt.variant
    }

    pub fn rendered_prompt(&self) -> String {
        render_prompt(&self.prompt)
    }
}

/// Encoder/decoder contract the regression strategies run over. Backends
/// declare what they support; unsupported calls return
/// [`Error::Unsupported`].
pub trait Backbone: Send + Sync {
    fn model_id(&self) -> &str;

    fn capabilities(&self) -> Capabilities;

    fn embedding_dim(&self) -> usize;

    fn encode_visual(&self, _frames: &KeyframeSet) -> Result<EmbeddingSequence> {
        Err(Error::Unsupported("encode_visual"))
    }

    fn encode_audio(&self, _spec: &AudioSpectrogram) -> Result<EmbeddingSequence> {
        Err(Error::Unsupported("encode_audio"))
    }

    fn encode_text(&self, _text: &str) -> Result<EmbeddingSequence> {
        Err(Error::Unsupported("encode_text"))
    }

    fn decode_hidden(&self, _fused: &FusedSequence) -> Result<HiddenStates> {
        Err(Error::Unsupported("decode_hidden"))
    }

    /// Logits for `prefix.len() + 1` steps: step `k` predicts the token after
    /// `prefix[..k]`.
    fn decode_tokens(&self, _fused: &FusedSequence, _prefix: &[usize]) -> Result<TokenLogits> {
        Err(Error::Unsupported("decode_tokens"))
    }

    fn fuse_input(&self, input: &ModelInput) -> Result<FusedSequence> {
        let visual = self.encode_visual(&input.keyframes)?;
        let audio = match (&input.spectrogram, input.variant().uses_audio()) {
            (Some(s), true) => Some(self.encode_audio(s)?),
            (None, true) => {
                return Err(Error::validation("variant", "audio_visual input without a spectrogram"))
            }
            _ => None,
        };
        let text = self.encode_text(&input.prompt.text())?;
        fuse(&visual, audio.as_ref(), &text)
    }

    fn hidden_states(&self, input: &ModelInput) -> Result<HiddenStates> {
        self.decode_hidden(&self.fuse_input(input)?)
    }

    /// Greedy decoding until the end marker or `max_steps` tokens.
    fn generate_score_text(&self, input: &ModelInput, max_steps: usize) -> Result<String> {
        let fused = self.fuse_input(input)?;
        let mut prefix = Vec::new();
        while prefix.len() < max_steps {
            let logits = self.decode_tokens(&fused, &prefix)?;
            let next = logits.argmax(logits.steps() - 1);
            if next == vocab::END {
                break;
            }
            prefix.push(next);
        }
        Ok(prefix.iter().map(|&t| vocab::token_str(t)).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn seq(len: usize, dim: usize, m: Modality) -> EmbeddingSequence {
        EmbeddingSequence::new(Array2::from_elem((len, dim), 0.5), m).unwrap()
    }

    #[test]
    fn fuse_lengths_and_order() {
        let f = fuse(
            &seq(512, 4, Modality::Visual),
            Some(&seq(16, 4, Modality::Audio)),
            &seq(40, 4, Modality::Text),
        )
        .unwrap();
        assert_eq!(f.len(), 568);
        let spans: Vec<_> = f.segment_map.iter().map(|s| (s.modality, s.start, s.len)).collect();
        assert_eq!(
            spans,
            vec![
                (Modality::Visual, 0, 512),
                (Modality::Audio, 512, 16),
                (Modality::Text, 528, 40)
            ]
        );
        let f = fuse(&seq(512, 4, Modality::Visual), None, &seq(40, 4, Modality::Text)).unwrap();
        assert_eq!(f.len(), 552);
        let f = fuse(&seq(1, 4, Modality::Visual), None, &seq(1, 4, Modality::Text)).unwrap();
        assert_eq!(f.len(), 2);
        assert_eq!(f.modalities(), vec![Modality::Visual, Modality::Text]);
    }

    #[test]
    fn fuse_rejects_dim_mismatch() {
        let r = fuse(&seq(2, 4, Modality::Visual), None, &seq(2, 5, Modality::Text));
        assert!(matches!(r, Err(Error::Shape(_))));
    }

    #[test]
    fn vocab_chars() {
        assert_eq!(vocab::token_for('7'), Some(7));
        assert_eq!(vocab::token_for('.'), Some(vocab::DOT));
        assert_eq!(vocab::token_for('x'), None);
        assert_eq!(vocab::token_str(vocab::END), "");
    }
}
