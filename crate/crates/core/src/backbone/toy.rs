//! Small trainable audio-visual-text transformer for desk-scale runs.
//!
//! * visual: each frame is average-pooled to a `grid × grid` cell grid and every
//!   cell's mean RGB is linearly projected, plus learned cell and frame
//!   position embeddings;
//! * audio: the log-mel spectrogram is average-pooled to `audio_slices` time
//!   slices, each projected from `mel_bins` to `dim`;
//! * text: hash-bucket token ids with a learned embedding table;
//! * decoder: causal pre-norm transformer over the fused sequence with learned
//!   modality embeddings and fixed sinusoidal positions;
//! * token head: score-token embeddings for teacher-forced prefixes and a
//!   linear projection to the score vocabulary.

use ndarray::{s, Array2, ArrayView2, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::nn::{sinusoidal_positions, Block, BlockCache, Grads, LayerNorm, LayerNormCache, Linear, ParamGroup, ParamId, ParamStore};
use super::tokenizer::HashTokenizer;
use super::{
    vocab, Backbone, Capabilities, EmbeddingSequence, FusedSequence, HiddenStates, Modality, ModelInput,
    SegmentSpan, TokenLogits,
};
use crate::error::{Error, Result};
use crate::media::Frame;
use crate::preprocess::{AudioSpectrogram, KeyframeSet};

const POSITION_SCALE: f64 = 0.5;
const MODALITY_SCORE: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct ToyConfig {
    pub dim: usize,
    pub layers: usize,
    pub heads: usize,
    pub ffn_mult: usize,
    pub grid: usize,
    pub audio_slices: usize,
    pub mel_bins: usize,
    pub text_buckets: usize,
    pub max_frames: usize,
    /// Whether the audio encoder exists.
    pub audio: bool,
}

impl Default for ToyConfig {
    fn default() -> Self {
        ToyConfig {
            dim: 64,
            layers: 2,
            heads: 4,
            ffn_mult: 4,
            grid: 8,
            audio_slices: 16,
            mel_bins: 128,
            text_buckets: 4096,
            max_frames: 32,
            audio: true,
        }
    }
}

impl ToyConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("dim", self.dim),
            ("layers", self.layers),
            ("heads", self.heads),
            ("ffn_mult", self.ffn_mult),
            ("grid", self.grid),
            ("audio_slices", self.audio_slices),
            ("mel_bins", self.mel_bins),
            ("text_buckets", self.text_buckets),
            ("max_frames", self.max_frames),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Argument(format!("toy config `{name}` must be > 0")));
        }
        if self.dim % self.heads != 0 {
            return Err(Error::Argument(format!(
                "toy config dim {} is not divisible by {} heads",
                self.dim, self.heads
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
struct Layout {
    patch_proj: Linear,
    patch_pos: ParamId,
    frame_pos: ParamId,
    audio_proj: Option<Linear>,
    audio_pos: Option<ParamId>,
    tok_emb: ParamId,
    modality_emb: ParamId,
    blocks: Vec<Block>,
    final_ln: LayerNorm,
    score_emb: ParamId,
    lm_head: Linear,
}

/// Fixed (non-trainable) encoder inputs for one sample.
#[derive(Debug, Clone, PartialEq)]
pub struct ToyInputs {
    /// `(frames · grid²) × 3`, frame-major.
    pub visual: Array2<f64>,
    pub n_frames: usize,
    /// `audio_slices × mel_bins`.
    pub audio: Option<Array2<f64>>,
    pub text: Vec<usize>,
}

impl ToyInputs {
    pub fn fused_len(&self) -> usize {
        self.visual.nrows() + self.audio.as_ref().map_or(0, |a| a.nrows()) + self.text.len()
    }

    fn modalities(&self) -> Vec<usize> {
        let mut m = vec![0; self.visual.nrows()];
        m.extend(std::iter::repeat_n(1, self.audio.as_ref().map_or(0, |a| a.nrows())));
        m.extend(std::iter::repeat_n(2, self.text.len()));
        m
    }
}

pub struct DecodeCache {
    blocks: Vec<BlockCache>,
    final_ln: LayerNormCache,
    modalities: Vec<usize>,
}

pub struct TokenCache {
    decode: DecodeCache,
    hidden: Array2<f64>,
    fused_len: usize,
    prefix: Vec<usize>,
}

#[derive(Debug, Clone)]
pub struct ToyBackbone {
    config: ToyConfig,
    seed: u64,
    model_id: String,
    tokenizer: HashTokenizer,
    store: ParamStore,
    layout: Layout,
}

pub fn toy_backbone(config: ToyConfig, seed: u64) -> Result<ToyBackbone> {
    ToyBackbone::new(config, seed)
}

impl ToyBackbone {
    pub fn new(config: ToyConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let d = config.dim;
        let patch_proj = Linear::new(&mut store, "vision.patch_proj", ParamGroup::Vision, 3, d, 1.0, &mut rng);
        let patch_pos = store.normal("vision.patch_pos", ParamGroup::Vision, (config.grid * config.grid, d), 0.1, &mut rng);
        let frame_pos = store.normal("vision.frame_pos", ParamGroup::Vision, (config.max_frames, d), 0.1, &mut rng);
        let (audio_proj, audio_pos) = if config.audio {
            (
                Some(Linear::new(&mut store, "audio.proj", ParamGroup::Audio, config.mel_bins, d, 1.0, &mut rng)),
                Some(store.normal("audio.pos", ParamGroup::Audio, (config.audio_slices, d), 0.1, &mut rng)),
            )
        } else {
            (None, None)
        };
        let tok_emb = store.normal("text.tok_emb", ParamGroup::Text, (config.text_buckets, d), 1.0, &mut rng);
        let modality_emb = store.normal("decoder.modality_emb", ParamGroup::Decoder, (4, d), 0.1, &mut rng);
        let blocks = (0..config.layers)
            .map(|l| Block::new(&mut store, &format!("decoder.block{l}"), d, config.heads, d * config.ffn_mult, &mut rng))
            .collect();
        let final_ln = LayerNorm::new(&mut store, "decoder.final_ln", ParamGroup::Decoder, d);
        let score_emb = store.normal("token_head.score_emb", ParamGroup::TokenHead, (vocab::SIZE, d), 1.0, &mut rng);
        let lm_head = Linear::new(&mut store, "token_head.lm_head", ParamGroup::TokenHead, d, vocab::SIZE, 1.0, &mut rng);
        Ok(ToyBackbone {
            config,
            seed,
            model_id: format!("toy-d{}-l{}-s{seed}", config.dim, config.layers),
            tokenizer: HashTokenizer::new(config.text_buckets),
            store,
            layout: Layout {
                patch_proj,
                patch_pos,
                frame_pos,
                audio_proj,
                audio_pos,
                tok_emb,
                modality_emb,
                blocks,
                final_ln,
                score_emb,
                lm_head,
            },
        })
    }

    pub fn config(&self) -> &ToyConfig {
        &self.config
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn set_model_id(&mut self, id: impl Into<String>) {
        self.model_id = id.into();
    }

    pub fn params(&self) -> &ParamStore {
        &self.store
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    pub fn pool_frame(frame: &Frame, grid: usize) -> Array2<f64> {
        let bounds = |len: usize, i: usize| {
            let a = i * len / grid;
            let b = ((i + 1) * len / grid).max(a + 1).min(len);
            (a.min(len - 1), b)
        };
        let mut out = Array2::zeros((grid * grid, 3));
        for gy in 0..grid {
            let (y0, y1) = bounds(frame.height, gy);
            for gx in 0..grid {
                let (x0, x1) = bounds(frame.width, gx);
                let mut acc = [0.0f64; 3];
                for y in y0..y1 {
                    for x in x0..x1 {
                        for (c, a) in acc.iter_mut().enumerate() {
                            *a += f64::from(frame.get(y, x, c));
                        }
                    }
                }
                let n = ((y1 - y0) * (x1 - x0)) as f64;
                for (c, a) in acc.iter().enumerate() {
                    out[[gy * grid + gx, c]] = a / n;
                }
            }
        }
        out
    }

    pub fn pool_spectrogram(spec: &AudioSpectrogram, slices: usize) -> Array2<f64> {
        let frames = spec.values.ncols().max(1);
        let mel = spec.values.nrows();
        let mut out = Array2::zeros((slices, mel));
        for sl in 0..slices {
            let a = (sl * frames / slices).min(frames - 1);
            let b = ((sl + 1) * frames / slices).max(a + 1).min(frames);
            for m in 0..mel {
                let mut acc = 0.0;
                for t in a..b {
                    acc += f64::from(spec.values.get((m, t)).copied().unwrap_or(0.0));
                }
                out[[sl, m]] = acc / (b - a) as f64;
            }
        }
        out
    }

    fn visual_inputs(&self, frames: &KeyframeSet) -> Result<Array2<f64>> {
        if frames.is_empty() {
            return Err(Error::Shape("no keyframes".into()));
        }
        if frames.len() > self.config.max_frames {
            return Err(Error::Shape(format!(
                "{} keyframes exceed toy backbone limit {}",
                frames.len(),
                self.config.max_frames
            )));
        }
        let g2 = self.config.grid * self.config.grid;
        let mut out = Array2::zeros((frames.len() * g2, 3));
        for (i, f) in frames.frames.iter().enumerate() {
            if f.height == 0 || f.width == 0 {
                return Err(Error::DegenerateInput("zero-area keyframe".into()));
            }
            out.slice_mut(s![i * g2..(i + 1) * g2, ..])
                .assign(&Self::pool_frame(f, self.config.grid));
        }
        Ok(out)
    }

    fn audio_inputs(&self, spec: &AudioSpectrogram) -> Result<Array2<f64>> {
        if !self.config.audio {
            return Err(Error::Unsupported("encode_audio"));
        }
        if spec.mel_bins != self.config.mel_bins || spec.values.nrows() != self.config.mel_bins {
            return Err(Error::Shape(format!(
                "spectrogram has {} mel bins, toy backbone expects {}",
                spec.values.nrows(),
                self.config.mel_bins
            )));
        }
        Ok(Self::pool_spectrogram(spec, self.config.audio_slices))
    }

    fn text_inputs(&self, text: &str) -> Result<Vec<usize>> {
        let ids = self.tokenizer.encode(text);
        if ids.is_empty() {
            return Err(Error::Shape("prompt text produced no tokens".into()));
        }
        Ok(ids)
    }

    /// Apply the fixed pooling/tokenization stages.
    pub fn prepare(&self, input: &ModelInput) -> Result<ToyInputs> {
        let audio = match (&input.spectrogram, input.variant().uses_audio()) {
            (Some(s), true) => Some(self.audio_inputs(s)?),
            (None, true) => return Err(Error::validation("variant", "audio_visual input without a spectrogram")),
            _ => None,
        };
        Ok(ToyInputs {
            visual: self.visual_inputs(&input.keyframes)?,
            n_frames: input.keyframes.len(),
            audio,
            text: self.text_inputs(&input.prompt.text())?,
        })
    }

    fn embed_visual(&self, pooled: ArrayView2<f64>) -> Array2<f64> {
        let l = &self.layout;
        let g2 = self.config.grid * self.config.grid;
        let mut e = l.patch_proj.forward(&self.store, pooled);
        let patch_pos = self.store.get(l.patch_pos);
        let frame_pos = self.store.get(l.frame_pos);
        for (r, mut row) in e.rows_mut().into_iter().enumerate() {
            row += &patch_pos.row(r % g2);
            row += &frame_pos.row(r / g2);
        }
        e
    }

    fn embed_audio(&self, pooled: ArrayView2<f64>) -> Array2<f64> {
        let proj = self.layout.audio_proj.expect("audio encoder present");
        let mut e = proj.forward(&self.store, pooled);
        e += self.store.get(self.layout.audio_pos.expect("audio encoder present"));
        e
    }

    fn embed_rows(&self, table: ParamId, ids: &[usize]) -> Array2<f64> {
        let t = self.store.get(table);
        let mut e = Array2::zeros((ids.len(), self.config.dim));
        for (mut row, &id) in e.rows_mut().into_iter().zip(ids) {
            row.assign(&t.row(id));
        }
        e
    }

    pub fn embed(&self, inputs: &ToyInputs) -> Array2<f64> {
        let mut parts = vec![self.embed_visual(inputs.visual.view())];
        if let Some(a) = &inputs.audio {
            parts.push(self.embed_audio(a.view()));
        }
        parts.push(self.embed_rows(self.layout.tok_emb, &inputs.text));
        let views: Vec<_> = parts.iter().map(|p| p.view()).collect();
        ndarray::concatenate(Axis(0), &views).expect("embedding dims agree")
    }

    fn backward_embed(&self, inputs: &ToyInputs, d_fused: ArrayView2<f64>, grads: &mut Grads) {
        let l = &self.layout;
        let g2 = self.config.grid * self.config.grid;
        let nv = inputs.visual.nrows();
        let dv = d_fused.slice(s![..nv, ..]);
        l.patch_proj.accumulate(grads, inputs.visual.view(), dv);
        {
            let gp = grads.get_mut(l.patch_pos);
            for (r, row) in dv.rows().into_iter().enumerate() {
                let mut target = gp.row_mut(r % g2);
                target += &row;
            }
        }
        {
            let gf = grads.get_mut(l.frame_pos);
            for (r, row) in dv.rows().into_iter().enumerate() {
                let mut target = gf.row_mut(r / g2);
                target += &row;
            }
        }
        let mut off = nv;
        if let Some(a) = &inputs.audio {
            let na = a.nrows();
            let da = d_fused.slice(s![off..off + na, ..]);
            l.audio_proj.expect("audio encoder present").accumulate(grads, a.view(), da);
            *grads.get_mut(l.audio_pos.expect("audio encoder present")) += &da;
            off += na;
        }
        let gt = grads.get_mut(l.tok_emb);
        for (r, &id) in inputs.text.iter().enumerate() {
            let mut target = gt.row_mut(id);
            target += &d_fused.row(off + r);
        }
    }

    /// Decoder over an already-embedded sequence; `modalities` index the modality table.
    pub fn decode(&self, x: &Array2<f64>, modalities: &[usize]) -> (Array2<f64>, DecodeCache) {
        let l = &self.layout;
        let t = x.nrows();
        let mut x0 = x.clone();
        let memb = self.store.get(l.modality_emb);
        for (mut row, &m) in x0.rows_mut().into_iter().zip(modalities) {
            row += &memb.row(m);
        }
        x0.scaled_add(POSITION_SCALE, &sinusoidal_positions(t, self.config.dim));
        let mut h = x0;
        let mut caches = Vec::with_capacity(l.blocks.len());
        for b in &l.blocks {
            let (y, c) = b.forward(&self.store, h.view());
            caches.push(c);
            h = y;
        }
        let (out, final_ln) = l.final_ln.forward(&self.store, h.view());
        (
            out,
            DecodeCache {
                blocks: caches,
                final_ln,
                modalities: modalities.to_vec(),
            },
        )
    }

    /// Returns the gradient w.r.t. the embedded input `x`.
    pub fn backward_decode(&self, cache: &DecodeCache, d_out: ArrayView2<f64>, grads: &mut Grads) -> Array2<f64> {
        let l = &self.layout;
        let mut dh = l.final_ln.backward(&self.store, grads, &cache.final_ln, d_out);
        for (b, c) in l.blocks.iter().zip(&cache.blocks).rev() {
            dh = b.backward(&self.store, grads, c, dh.view());
        }
        let gm = grads.get_mut(l.modality_emb);
        for (row, &m) in dh.rows().into_iter().zip(&cache.modalities) {
            let mut target = gm.row_mut(m);
            target += &row;
        }
        dh
    }

    pub fn forward_hidden(&self, inputs: &ToyInputs) -> (Array2<f64>, DecodeCache) {
        let x = self.embed(inputs);
        self.decode(&x, &inputs.modalities())
    }

    pub fn backward_hidden(&self, inputs: &ToyInputs, cache: &DecodeCache, d_hidden: ArrayView2<f64>, grads: &mut Grads) {
        let dx = self.backward_decode(cache, d_hidden, grads);
        self.backward_embed(inputs, dx.view(), grads);
    }

    fn with_prefix(&self, fused: Array2<f64>, mut modalities: Vec<usize>, prefix: &[usize]) -> Result<(Array2<f64>, Vec<usize>)> {
        if let Some(&bad) = prefix.iter().find(|&&t| t >= vocab::SIZE) {
            return Err(Error::Vocabulary(bad));
        }
        let pe = self.embed_rows(self.layout.score_emb, prefix);
        let x = ndarray::concatenate(Axis(0), &[fused.view(), pe.view()]).expect("dims agree");
        modalities.extend(std::iter::repeat_n(MODALITY_SCORE, prefix.len()));
        Ok((x, modalities))
    }

    fn token_logits_from(&self, hidden: &Array2<f64>, fused_len: usize, steps: usize) -> Array2<f64> {
        let rows = hidden.slice(s![fused_len - 1..fused_len - 1 + steps, ..]);
        self.layout.lm_head.forward(&self.store, rows)
    }

    /// Teacher-forced logits: `prefix.len() + 1` steps.
    pub fn forward_tokens(&self, inputs: &ToyInputs, prefix: &[usize]) -> Result<(Array2<f64>, TokenCache)> {
        let fused = self.embed(inputs);
        let fused_len = fused.nrows();
        let (x, m) = self.with_prefix(fused, inputs.modalities(), prefix)?;
        let (hidden, decode) = self.decode(&x, &m);
        let logits = self.token_logits_from(&hidden, fused_len, prefix.len() + 1);
        Ok((
            logits,
            TokenCache {
                decode,
                hidden,
                fused_len,
                prefix: prefix.to_vec(),
            },
        ))
    }

    pub fn backward_tokens(&self, inputs: &ToyInputs, cache: &TokenCache, d_logits: ArrayView2<f64>, grads: &mut Grads) {
        let steps = d_logits.nrows();
        let start = cache.fused_len - 1;
        let rows = cache.hidden.slice(s![start..start + steps, ..]);
        let d_rows = self.layout.lm_head.backward(&self.store, grads, rows, d_logits);
        let mut d_hidden = Array2::zeros(cache.hidden.raw_dim());
        d_hidden.slice_mut(s![start..start + steps, ..]).assign(&d_rows);
        let dx = self.backward_decode(&cache.decode, d_hidden.view(), grads);
        let gs = grads.get_mut(self.layout.score_emb);
        for (r, &t) in cache.prefix.iter().enumerate() {
            let mut target = gs.row_mut(t);
            target += &dx.row(cache.fused_len + r);
        }
        self.backward_embed(inputs, dx.slice(s![..cache.fused_len, ..]), grads);
    }

    pub fn hidden_from_inputs(&self, inputs: &ToyInputs) -> Result<HiddenStates> {
        HiddenStates::new(self.forward_hidden(inputs).0)
    }

    /// Greedy decoding from prepared inputs.
    pub fn generate_from_inputs(&self, inputs: &ToyInputs, max_steps: usize) -> Result<Vec<usize>> {
        let fused = self.embed(inputs);
        let modalities = inputs.modalities();
        self.greedy(fused, modalities, max_steps)
    }

    fn greedy(&self, fused: Array2<f64>, modalities: Vec<usize>, max_steps: usize) -> Result<Vec<usize>> {
        let fused_len = fused.nrows();
        let mut prefix = Vec::new();
        while prefix.len() < max_steps {
            let (x, m) = self.with_prefix(fused.clone(), modalities.clone(), &prefix)?;
            let (hidden, _) = self.decode(&x, &m);
            let logits = TokenLogits::new(self.token_logits_from(&hidden, fused_len, prefix.len() + 1))?;
            let next = logits.argmax(prefix.len());
            if next == vocab::END {
                break;
            }
            prefix.push(next);
        }
        Ok(prefix)
    }

    fn fused_modalities(fused: &FusedSequence) -> Vec<usize> {
        fused
            .modalities()
            .into_iter()
            .map(|m| match m {
                Modality::Visual => 0,
                Modality::Audio => 1,
                Modality::Text => 2,
            })
            .collect()
    }

    fn check_fused(&self, fused: &FusedSequence) -> Result<()> {
        if fused.is_empty() {
            return Err(Error::Shape("fused sequence is empty".into()));
        }
        if fused.vectors.ncols() != self.config.dim {
            return Err(Error::Shape(format!(
                "fused dim {} does not match backbone dim {}",
                fused.vectors.ncols(),
                self.config.dim
            )));
        }
        let covered: usize = fused.segment_map.iter().map(|s: &SegmentSpan| s.len).sum();
        if covered != fused.len() {
            return Err(Error::Shape("segment map does not cover the fused sequence".into()));
        }
        Ok(())
    }
}

impl Backbone for ToyBackbone {
    fn model_id(&self) -> &str {
        &self.model_id
    }

    fn capabilities(&self) -> Capabilities {
        Capabilities {
            audio: self.config.audio,
            encoders: true,
            hidden: true,
            generate: true,
            trainable: true,
        }
    }

    fn embedding_dim(&self) -> usize {
        self.config.dim
    }

    fn encode_visual(&self, frames: &KeyframeSet) -> Result<EmbeddingSequence> {
        let pooled = self.visual_inputs(frames)?;
        EmbeddingSequence::new(self.embed_visual(pooled.view()), Modality::Visual)
    }

    fn encode_audio(&self, spec: &AudioSpectrogram) -> Result<EmbeddingSequence> {
        let pooled = self.audio_inputs(spec)?;
        EmbeddingSequence::new(self.embed_audio(pooled.view()), Modality::Audio)
    }

    fn encode_text(&self, text: &str) -> Result<EmbeddingSequence> {
        let ids = self.text_inputs(text)?;
        EmbeddingSequence::new(self.embed_rows(self.layout.tok_emb, &ids), Modality::Text)
    }

    fn decode_hidden(&self, fused: &FusedSequence) -> Result<HiddenStates> {
        self.check_fused(fused)?;
        let (h, _) = self.decode(&fused.vectors, &Self::fused_modalities(fused));
        HiddenStates::new(h)
    }

    fn decode_tokens(&self, fused: &FusedSequence, prefix: &[usize]) -> Result<TokenLogits> {
        self.check_fused(fused)?;
        let (x, m) = self.with_prefix(fused.vectors.clone(), Self::fused_modalities(fused), prefix)?;
        let (hidden, _) = self.decode(&x, &m);
        TokenLogits::new(self.token_logits_from(&hidden, fused.len(), prefix.len() + 1))
    }

    fn hidden_states(&self, input: &ModelInput) -> Result<HiddenStates> {
        self.hidden_from_inputs(&self.prepare(input)?)
    }

    fn generate_score_text(&self, input: &ModelInput, max_steps: usize) -> Result<String> {
        let tokens = self.generate_from_inputs(&self.prepare(input)?, max_steps)?;
        Ok(tokens.iter().map(|&t| vocab::token_str(t)).collect())
    }
}
