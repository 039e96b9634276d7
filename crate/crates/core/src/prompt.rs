//! Prompt assembly with modality placeholder segments.
//!
//! Templates live in `templates/*.txt` and use the markers `{frames}`,
//! `{audio}`, `{title}` and `{description}`. Frame placeholders are separated
//! by a single space.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::preprocess::NormalizedMetadata;

pub const AUDIO_VISUAL_TEMPLATE: &str = include_str!("../templates/audio_visual.txt");
pub const VISUAL_ONLY_TEMPLATE: &str = include_str!("../templates/visual_only.txt");

const FRAME_SEPARATOR: &str = " ";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PromptVariant {
    AudioVisual,
    VisualOnly,
}

impl PromptVariant {
    pub fn template(self) -> &'static str {
        match self {
            PromptVariant::AudioVisual => AUDIO_VISUAL_TEMPLATE,
            PromptVariant::VisualOnly => VISUAL_ONLY_TEMPLATE,
        }
    }

    pub fn uses_audio(self) -> bool {
        self == PromptVariant::AudioVisual
    }
}

impl fmt::Display for PromptVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PromptVariant::AudioVisual => "audio_visual",
            PromptVariant::VisualOnly => "visual_only",
        })
    }
}

impl FromStr for PromptVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "audio_visual" => Ok(PromptVariant::AudioVisual),
            "visual_only" => Ok(PromptVariant::VisualOnly),
            other => Err(Error::Argument(format!("unknown prompt variant {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Segment {
    Text(String),
    Frame(usize),
    Audio,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptBundle {
    pub segments: Vec<Segment>,
    pub variant: PromptVariant,
}

impl PromptBundle {
    pub fn frame_count(&self) -> usize {
        self.segments
            .iter()
            .filter(|s| matches!(s, Segment::Frame(_)))
            .count()
    }

    pub fn has_audio(&self) -> bool {
        self.segments.iter().any(|s| *s == Segment::Audio)
    }

    /// Text segments concatenated, placeholders elided.
    pub fn text(&self) -> String {
        self.segments
            .iter()
            .filter_map(|s| match s {
                Segment::Text(t) => Some(t.as_str()),
                _ => None,
            })
            .collect()
    }
}

fn push_text(segments: &mut Vec<Segment>, text: &str) {
    if text.is_empty() {
        return;
    }
    if let Some(Segment::Text(last)) = segments.last_mut() {
        last.push_str(text);
    } else {
        segments.push(Segment::Text(text.to_string()));
    }
}

pub fn build_prompt(meta: &NormalizedMetadata, n_frames: usize, variant: PromptVariant) -> Result<PromptBundle> {
    if n_frames < 1 {
        return Err(Error::Argument("prompt needs at least one frame".into()));
    }
    let mut segments = Vec::new();
    let mut rest = variant.template();
    while let Some(open) = rest.find('{') {
        push_text(&mut segments, &rest[..open]);
        let close = rest[open..]
            .find('}')
            .map(|c| open + c)
            .expect("template markers are closed");
        match &rest[open + 1..close] {
            "frames" => {
                for i in 0..n_frames {
                    if i > 0 {
                        push_text(&mut segments, FRAME_SEPARATOR);
                    }
                    segments.push(Segment::Frame(i));
                }
            }
            "audio" => segments.push(Segment::Audio),
            "title" => push_text(&mut segments, &meta.title_text),
            "description" => push_text(&mut segments, &meta.description_text),
            other => unreachable!("unknown template marker {other}"),
        }
        rest = &rest[close + 1..];
    }
    push_text(&mut segments, rest);
    Ok(PromptBundle { segments, variant })
}

/// Log/golden form: frames render as `<frame:i>`, audio as `<audio>`.
pub fn render_prompt(p: &PromptBundle) -> String {
    let mut out = String::new();
    for s in &p.segments {
        match s {
            Segment::Text(t) => out.push_str(t),
            Segment::Frame(i) => {
                out.push_str("<frame:");
                out.push_str(&i.to_string());
                out.push('>');
            }
            Segment::Audio => out.push_str("<audio>"),
        }
    }
    out
}

/// Inverse of [`render_prompt`] over segment kinds and order.
pub fn parse_rendered(s: &str) -> Vec<Segment> {
    let mut segments = Vec::new();
    let mut rest = s;
    loop {
        let next = [rest.find("<frame:"), rest.find("<audio>")]
            .into_iter()
            .flatten()
            .min();
        let Some(at) = next else { break };
        let tail = &rest[at..];
        let parsed = if let Some(body) = tail.strip_prefix("<frame:") {
            body.find('>').and_then(|end| {
                body[..end]
                    .parse::<usize>()
                    .ok()
                    .map(|i| (Segment::Frame(i), "<frame:".len() + end + 1))
            })
        } else {
            Some((Segment::Audio, "<audio>".len()))
        };
        match parsed {
            Some((seg, len)) => {
                push_text(&mut segments, &rest[..at]);
                segments.push(seg);
                rest = &rest[at + len..];
            }
            None => {
                // malformed marker: keep it as text
                push_text(&mut segments, &rest[..at + 1]);
                rest = &rest[at + 1..];
            }
        }
    }
    push_text(&mut segments, rest);
    segments
}

#[cfg(test)]
mod tests {
    use super::*;

    fn meta(t: &str, d: &str) -> NormalizedMetadata {
        NormalizedMetadata {
            title_text: t.into(),
            description_text: d.into(),
        }
    }

    #[test]
    fn placeholder_counts() {
        let p = build_prompt(&meta("T", "D"), 8, PromptVariant::AudioVisual).unwrap();
        assert_eq!(p.frame_count(), 8);
        assert!(p.has_audio());
        let idx: Vec<usize> = p
            .segments
            .iter()
            .filter_map(|s| match s {
                Segment::Frame(i) => Some(*i),
                _ => None,
            })
            .collect();
        assert_eq!(idx, (0..8).collect::<Vec<_>>());
        let v = build_prompt(&meta("T", "D"), 8, PromptVariant::VisualOnly).unwrap();
        assert!(!v.has_audio());
        assert!(build_prompt(&meta("T", "D"), 0, PromptVariant::VisualOnly).is_err());
    }

    #[test]
    fn two_frame_rendering() {
        let p = build_prompt(&meta("T", "D"), 2, PromptVariant::AudioVisual).unwrap();
        let r = render_prompt(&p);
        assert!(r.contains("<frame:0> <frame:1>"));
        assert!(r.contains("the audio: <audio>"));
        let v = build_prompt(&meta("T", "D"), 2, PromptVariant::VisualOnly).unwrap();
        assert!(!render_prompt(&v).contains("<audio>"));
    }

    #[test]
    fn variants_differ_only_by_audio_clause() {
        let m = meta("a title", "a description");
        let av = render_prompt(&build_prompt(&m, 3, PromptVariant::AudioVisual).unwrap());
        let vo = render_prompt(&build_prompt(&m, 3, PromptVariant::VisualOnly).unwrap());
        assert_eq!(av.replacen(", the audio: <audio>", "", 1), vo);
    }

    #[test]
    fn text_elides_placeholders() {
        let p = build_prompt(&meta("T", "D"), 2, PromptVariant::VisualOnly).unwrap();
        assert!(p.text().starts_with("The video frames:  . How would"));
    }

    #[test]
    fn malformed_marker_stays_text() {
        let s = parse_rendered("a <frame:x> b <audio>");
        assert_eq!(
            s,
            vec![Segment::Text("a <frame:x> b ".into()), Segment::Audio]
        );
    }
}
