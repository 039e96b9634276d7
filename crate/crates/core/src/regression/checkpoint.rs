//! Binary checkpoint: magic, format version, JSON header, parameter blobs.
//!
//! ```text
//! "VIDENGCK" | u32 version | u32 header_len | header JSON
//!            | u64 backbone_len | backbone f64 LE | u64 head_len | head f64 LE
//! ```

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::codec::ScoreTokenization;
use super::head::MlpHead;
use super::train::ToyModel;
use super::Strategy;
use crate::backbone::{Backbone, ToyBackbone, ToyConfig};
use crate::error::{Error, Result};
use crate::preprocess::PreprocessConfig;
use crate::prompt::PromptVariant;

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"VIDENGCK";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct HeadHeader {
    dim: usize,
    dropout: f64,
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    strategy: Strategy,
    variant: PromptVariant,
    toy: ToyConfig,
    seed: u64,
    model_id: String,
    codec: ScoreTokenization,
    head: Option<HeadHeader>,
    preprocess: PreprocessConfig,
}

pub fn save_checkpoint(path: &Path, model: &ToyModel, preprocess: &PreprocessConfig) -> Result<()> {
    let header = Header {
        strategy: model.strategy,
        variant: model.variant,
        toy: *model.backbone.config(),
        seed: model.backbone.seed(),
        model_id: model.backbone.model_id().to_string(),
        codec: model.codec,
        head: model.head.as_ref().map(|h| HeadHeader {
            dim: h.dim,
            dropout: h.dropout_rate,
        }),
        preprocess: *preprocess,
    };
    let json = serde_json::to_vec(&header).map_err(|e| Error::Checkpoint(e.to_string()))?;
    let bb = model.backbone.params().to_bytes();
    let head = model.head.as_ref().map(|h| h.params().to_bytes()).unwrap_or_default();
    let mut out = Vec::with_capacity(32 + json.len() + bb.len() + head.len());
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u32).to_le_bytes());
    out.extend_from_slice(&json);
    out.extend_from_slice(&(bb.len() as u64).to_le_bytes());
    out.extend_from_slice(&bb);
    out.extend_from_slice(&(head.len() as u64).to_le_bytes());
    out.extend_from_slice(&head);
    fs::write(path, out)?;
    Ok(())
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| Error::Checkpoint(format!("truncated while reading {what}")))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }
}

pub fn load_checkpoint(path: &Path) -> Result<(ToyModel, PreprocessConfig)> {
    let bytes = fs::read(path)?;
    let mut c = Cursor { bytes: &bytes, pos: 0 };
    if c.take(8, "magic")? != CHECKPOINT_MAGIC {
        return Err(Error::Checkpoint(format!("{} is not a checkpoint file", path.display())));
    }
    let version = c.u32("version")?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::Checkpoint(format!("unsupported checkpoint version {version}")));
    }
    let hlen = c.u32("header length")? as usize;
    let header: Header =
        serde_json::from_slice(c.take(hlen, "header")?).map_err(|e| Error::Checkpoint(format!("bad header: {e}")))?;
    header.toy.validate()?;
    let mut backbone = ToyBackbone::new(header.toy, header.seed)?;
    let bb_len = c.u64("backbone length")? as usize;
    backbone.params_mut().load_bytes(c.take(bb_len, "backbone parameters")?)?;
    backbone.set_model_id(header.model_id);
    let head_len = c.u64("head length")? as usize;
    let head_bytes = c.take(head_len, "head parameters")?;
    let head = match (&header.head, header.strategy) {
        (Some(h), Strategy::FeatureBased) => {
            let mut head = MlpHead::new(h.dim, h.dropout, 0)?;
            head.params_mut().load_bytes(head_bytes)?;
            Some(head)
        }
        (None, Strategy::TokenBased) if head_bytes.is_empty() => None,
        _ => return Err(Error::Checkpoint("head section does not match the strategy".into())),
    };
    if c.pos != bytes.len() {
        return Err(Error::Checkpoint(format!("{} trailing bytes", bytes.len() - c.pos)));
    }
    Ok((
        ToyModel {
            backbone,
            head,
            strategy: header.strategy,
            variant: header.variant,
            codec: header.codec,
        },
        header.preprocess,
    ))
}
