use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;
use std::path::Path;

use ndarray::{Array1, Array2, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::codec::{serialize_score, ScoreTokenization};
use super::head::{MlpHead, DEFAULT_DROPOUT};
use super::loss::{ce_loss_grad, Reduction};
use super::predict::Predictor;
use super::{PooledState, Strategy};
use crate::backbone::nn::{Grads, ParamGroup, ParamStore};
use crate::backbone::toy::ToyInputs;
use crate::backbone::{Backbone, ModelInput, TokenLogits, ToyBackbone};
use crate::dataset::Manifest;
use crate::error::{Error, Result};
use crate::preprocess::Preprocessor;
use crate::prompt::PromptVariant;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub strategy: Strategy,
    pub epochs: usize,
    /// Stop after this many optimizer steps, cycling epochs as needed.
    #[serde(default)]
    pub max_steps: Option<usize>,
    pub batch_size: usize,
    pub learning_rates: BTreeMap<ParamGroup, f64>,
    pub weight_decay: f64,
    pub freeze_vision: bool,
    /// Further groups held fixed.
    #[serde(default)]
    pub frozen_groups: Vec<ParamGroup>,
    pub dropout: f64,
    #[serde(default)]
    pub ce_reduction: Reduction,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig::feature_based()
    }
}

impl TrainConfig {
    /// Audio-visual path: AdamW at 5e-5, vision encoder frozen, batch 12, one epoch.
    pub fn feature_based() -> Self {
        TrainConfig {
            strategy: Strategy::FeatureBased,
            epochs: 1,
            max_steps: None,
            batch_size: 12,
            learning_rates: ParamGroup::ALL.iter().map(|&g| (g, 5e-5)).collect(),
            weight_decay: 0.01,
            freeze_vision: true,
            frozen_groups: Vec::new(),
            dropout: DEFAULT_DROPOUT,
            ce_reduction: Reduction::Mean,
            seed: 0,
        }
    }

    /// Visual-language path: 2e-6 for the vision encoder, 1e-5 elsewhere, batch 16, one epoch.
    pub fn token_based() -> Self {
        let mut lrs: BTreeMap<ParamGroup, f64> = ParamGroup::ALL.iter().map(|&g| (g, 1e-5)).collect();
        lrs.insert(ParamGroup::Vision, 2e-6);
        TrainConfig {
            strategy: Strategy::TokenBased,
            batch_size: 16,
            learning_rates: lrs,
            freeze_vision: false,
            ..TrainConfig::feature_based()
        }
    }

    pub fn for_strategy(strategy: Strategy) -> Self {
        match strategy {
            Strategy::FeatureBased => TrainConfig::feature_based(),
            Strategy::TokenBased => TrainConfig::token_based(),
        }
    }

    pub fn with_uniform_lr(mut self, lr: f64) -> Self {
        self.learning_rates = ParamGroup::ALL.iter().map(|&g| (g, lr)).collect();
        self
    }

    pub fn is_frozen(&self, g: ParamGroup) -> bool {
        (self.freeze_vision && g == ParamGroup::Vision) || self.frozen_groups.contains(&g)
    }

    /// Static checks plus coverage of `trainable` by the learning-rate map.
    pub fn validate(&self, trainable: &BTreeSet<ParamGroup>) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::validation("batch_size", "must be >= 1"));
        }
        if self.epochs == 0 && self.max_steps.is_none() {
            return Err(Error::validation("epochs", "must be >= 1"));
        }
        if self.max_steps == Some(0) {
            return Err(Error::validation("max_steps", "must be >= 1"));
        }
        if !(self.weight_decay.is_finite() && self.weight_decay >= 0.0) {
            return Err(Error::validation("weight_decay", "must be a finite value >= 0"));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::validation("dropout", "must be in [0, 1)"));
        }
        for (g, lr) in &self.learning_rates {
            if !(lr.is_finite() && *lr >= 0.0) {
                return Err(Error::validation("learning_rates", format!("{g}: {lr} is not a valid rate")));
            }
        }
        let missing: Vec<&str> = trainable
            .iter()
            .filter(|g| !self.learning_rates.contains_key(g))
            .map(|g| g.as_str())
            .collect();
        if !missing.is_empty() {
            return Err(Error::validation(
                "learning_rates",
                format!("no rate for trainable group(s): {}", missing.join(", ")),
            ));
        }
        Ok(())
    }
}

/// Decoupled-weight-decay Adam with per-group learning rates.
#[derive(Debug, Clone)]
pub struct AdamW {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    t: i32,
    m: Vec<Array2<f64>>,
    v: Vec<Array2<f64>>,
}

impl AdamW {
    pub fn new(store: &ParamStore, weight_decay: f64) -> Self {
        let zeros = || store.params().iter().map(|p| Array2::zeros(p.value.raw_dim())).collect();
        AdamW {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay,
            t: 0,
            m: zeros(),
            v: zeros(),
        }
    }

    /// Groups for which `lr` returns `None` are left untouched.
    pub fn step(&mut self, store: &mut ParamStore, grads: &Grads, lr: impl Fn(ParamGroup) -> Option<f64>) {
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t);
        let bc2 = 1.0 - self.beta2.powi(self.t);
        let (b1, b2, eps, wd) = (self.beta1, self.beta2, self.eps, self.weight_decay);
        for (i, p) in store.params_mut().iter_mut().enumerate() {
            let Some(lr) = lr(p.group) else { continue };
            let g = &grads.g[i];
            let decay = if p.decay { wd } else { 0.0 };
            ndarray::Zip::from(&mut p.value)
                .and(&mut self.m[i])
                .and(&mut self.v[i])
                .and(g)
                .for_each(|w, m, v, &g| {
                    *m = b1 * *m + (1.0 - b1) * g;
                    *v = b2 * *v + (1.0 - b2) * g * g;
                    let update = (*m / bc1) / ((*v / bc2).sqrt() + eps);
                    *w -= lr * (update + decay * *w);
                });
        }
    }
}

/// Toy backbone plus the strategy-specific readout.
#[derive(Debug, Clone)]
pub struct ToyModel {
    pub backbone: ToyBackbone,
    pub head: Option<MlpHead>,
    pub strategy: Strategy,
    pub variant: PromptVariant,
    pub codec: ScoreTokenization,
}

impl ToyModel {
    pub fn new(backbone: ToyBackbone, strategy: Strategy, variant: PromptVariant, dropout: f64, seed: u64) -> Result<Self> {
        if variant.uses_audio() && !backbone.capabilities().audio {
            return Err(Error::validation(
                "variant",
                "audio_visual requires a backbone with audio capability",
            ));
        }
        let head = match strategy {
            Strategy::FeatureBased => Some(MlpHead::new(backbone.embedding_dim(), dropout, seed ^ 0x4845_4144)?),
            Strategy::TokenBased => None,
        };
        Ok(ToyModel {
            backbone,
            head,
            strategy,
            variant,
            codec: ScoreTokenization::default(),
        })
    }

    pub fn model_id(&self) -> String {
        let tag = match self.strategy {
            Strategy::FeatureBased => "fb",
            Strategy::TokenBased => "tb",
        };
        format!("{}-{tag}", self.backbone.model_id())
    }

    /// Groups that receive gradients under this strategy and variant, minus frozen ones.
    pub fn trainable_groups(&self, cfg: &TrainConfig) -> BTreeSet<ParamGroup> {
        let mut g = BTreeSet::from([ParamGroup::Vision, ParamGroup::Text, ParamGroup::Decoder]);
        if self.variant.uses_audio() && self.backbone.config().audio {
            g.insert(ParamGroup::Audio);
        }
        g.insert(match self.strategy {
            Strategy::FeatureBased => ParamGroup::Head,
            Strategy::TokenBased => ParamGroup::TokenHead,
        });
        g.retain(|&x| !cfg.is_frozen(x));
        g
    }

    pub fn predictor(&self) -> Predictor<'_> {
        match self.strategy {
            Strategy::FeatureBased => Predictor::feature_based(&self.backbone, self.head.as_ref().expect("feature-based model has a head")),
            Strategy::TokenBased => Predictor::token_based(&self.backbone, self.codec),
        }
        .with_model_id(self.model_id())
    }

    /// Training-time view of a sample; the fixed pooling stages run once.
    pub fn prepare(&self, input: &ModelInput) -> Result<ToyInputs> {
        if input.variant() != self.variant {
            return Err(Error::validation(
                "variant",
                format!("input prompted as {}, model expects {}", input.variant(), self.variant),
            ));
        }
        self.backbone.prepare(input)
    }

    pub fn pooled(&self, inputs: &ToyInputs) -> PooledState {
        let (h, _) = self.backbone.forward_hidden(inputs);
        PooledState {
            vector: h.mean_axis(Axis(0)).expect("non-empty sequence"),
        }
    }

    /// Eval-mode score before clamping (feature-based) or the parsed greedy
    /// generation (token-based).
    pub fn raw_score(&self, inputs: &ToyInputs) -> Result<f64> {
        match self.strategy {
            Strategy::FeatureBased => self.head.as_ref().expect("head").forward(&self.pooled(inputs)),
            Strategy::TokenBased => {
                let tokens = self.backbone.generate_from_inputs(inputs, super::MAX_GENERATION_STEPS)?;
                super::parse_score(&super::detokenize(&tokens), &self.codec)
            }
        }
    }

    /// Fraction of teacher-forced target tokens predicted by argmax.
    pub fn token_accuracy(&self, samples: &[TrainSample]) -> Result<f64> {
        let (mut hit, mut total) = (0usize, 0usize);
        for s in samples {
            let target = serialize_score(s.label, &self.codec)?;
            let (logits, _) = self.backbone.forward_tokens(&s.inputs, &target[..target.len() - 1])?;
            let logits = TokenLogits::new(logits)?;
            for (t, &y) in target.iter().enumerate() {
                hit += usize::from(logits.argmax(t) == y);
                total += 1;
            }
        }
        Ok(hit as f64 / total.max(1) as f64)
    }

    /// Eval-mode mean squared error of the clamped-free head output.
    pub fn feature_mse(&self, samples: &[TrainSample]) -> Result<f64> {
        let head = self
            .head
            .as_ref()
            .ok_or_else(|| Error::Argument("token-based model has no regression head".into()))?;
        let mut acc = 0.0;
        for s in samples {
            let y = head.forward(&self.pooled(&s.inputs))?;
            acc += (y - s.label) * (y - s.label);
        }
        Ok(acc / samples.len().max(1) as f64)
    }
}

#[derive(Debug, Clone)]
pub struct TrainSample {
    pub id: String,
    pub inputs: ToyInputs,
    pub label: f64,
}

/// Preprocess, prompt and pool every record. Fails before any decoding if a
/// record lacks a label.
pub fn prepare_samples(model: &ToyModel, pre: &Preprocessor, manifest: &Manifest) -> Result<Vec<TrainSample>> {
    manifest.ensure_labeled()?;
    manifest
        .records
        .iter()
        .map(|r| {
            let input = ModelInput::from_preprocessed(pre.process(manifest, r)?, model.variant)?;
            Ok(TrainSample {
                id: r.id.clone(),
                inputs: model.prepare(&input)?,
                label: r.ecr.expect("checked by ensure_labeled"),
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    /// Mean training loss of each optimizer step's minibatch.
    pub losses: Vec<f64>,
    pub samples: usize,
    pub epochs: usize,
}

impl TrainReport {
    pub fn steps(&self) -> usize {
        self.losses.len()
    }

    pub fn final_loss(&self) -> Option<f64> {
        self.losses.last().copied()
    }
}

pub fn train_manifest(model: &mut ToyModel, pre: &Preprocessor, manifest: &Manifest, cfg: &TrainConfig) -> Result<TrainReport> {
    cfg.validate(&model.trainable_groups(cfg))?;
    let samples = prepare_samples(model, pre, manifest)?;
    train(model, &samples, cfg)
}

pub fn train(model: &mut ToyModel, samples: &[TrainSample], cfg: &TrainConfig) -> Result<TrainReport> {
    if cfg.strategy != model.strategy {
        return Err(Error::validation(
            "strategy",
            format!("config says {}, model was built for {}", cfg.strategy, model.strategy),
        ));
    }
    let trainable = model.trainable_groups(cfg);
    cfg.validate(&trainable)?;
    if samples.is_empty() {
        return Err(Error::validation("data", "no training samples"));
    }
    if let Some(s) = samples.iter().find(|s| !(0.0..=1.0).contains(&s.label)) {
        return Err(Error::validation("ecr", format!("{}: label {} outside [0, 1]", s.id, s.label)));
    }
    if let Some(head) = model.head.as_mut() {
        head.dropout_rate = cfg.dropout;
    }
    let lr = |g: ParamGroup| trainable.contains(&g).then(|| cfg.learning_rates[&g]);
    let backbone_trainable = trainable.iter().any(|g| !matches!(g, ParamGroup::Head));

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut bb_opt = AdamW::new(model.backbone.params(), cfg.weight_decay);
    let mut head_opt = model.head.as_ref().map(|h| AdamW::new(h.params(), cfg.weight_decay));

    // a frozen backbone makes the pooled states constants of the run
    let cached: Option<Vec<PooledState>> = (!backbone_trainable && model.strategy == Strategy::FeatureBased)
        .then(|| samples.iter().map(|s| model.pooled(&s.inputs)).collect());

    let per_epoch = samples.len().div_ceil(cfg.batch_size);
    let total_steps = cfg.max_steps.unwrap_or(cfg.epochs * per_epoch);
    let mut order: Vec<usize> = (0..samples.len()).collect();
    let mut losses = Vec::with_capacity(total_steps);
    let mut epochs = 0;
    while losses.len() < total_steps {
        order.shuffle(&mut rng);
        epochs += 1;
        for batch in order.chunks(cfg.batch_size) {
            if losses.len() == total_steps {
                break;
            }
            let scale = 1.0 / batch.len() as f64;
            let mut bb_grads = backbone_trainable.then(|| model.backbone.params().zero_grads());
            let mut head_grads = model.head.as_ref().map(|h| h.params().zero_grads());
            let mut batch_loss = 0.0;
            for &i in batch {
                let s = &samples[i];
                batch_loss += match model.strategy {
                    Strategy::FeatureBased => {
                        let hg = head_grads.as_mut().expect("head grads");
                        match &cached {
                            Some(pooled) => {
                                let head = model.head.as_ref().expect("head");
                                let (y, hc) = head.forward_train(&pooled[i], &mut rng)?;
                                head.backward(&hc, 2.0 * (y - s.label) * scale, hg);
                                (y - s.label).powi(2)
                            }
                            None => feature_grads(model, &s.inputs, s.label, scale, Some(&mut rng), bb_grads.as_mut(), hg)?,
                        }
                    }
                    Strategy::TokenBased => token_grads(
                        model,
                        &s.inputs,
                        s.label,
                        cfg.ce_reduction,
                        scale,
                        bb_grads.as_mut().expect("backbone grads"),
                    )?,
                };
            }
            if let Some(g) = &bb_grads {
                if !g.is_finite() {
                    return Err(Error::DegenerateInput(format!("non-finite gradient at step {}", losses.len() + 1)));
                }
                bb_opt.step(model.backbone.params_mut(), g, lr);
            }
            if let (Some(head), Some(opt), Some(g)) = (model.head.as_mut(), head_opt.as_mut(), &head_grads) {
                opt.step(head.params_mut(), g, lr);
            }
            losses.push(batch_loss * scale);
        }
    }
    Ok(TrainReport {
        losses,
        samples: samples.len(),
        epochs,
    })
}

/// Squared error of one sample; accumulates `scale ·` its gradient into the
/// head and (if given) backbone buffers. `rng = None` disables dropout.
pub fn feature_grads(
    model: &ToyModel,
    inputs: &ToyInputs,
    label: f64,
    scale: f64,
    rng: Option<&mut ChaCha8Rng>,
    backbone: Option<&mut Grads>,
    head_grads: &mut Grads,
) -> Result<f64> {
    let head = model
        .head
        .as_ref()
        .ok_or_else(|| Error::Argument("token-based model has no regression head".into()))?;
    let (h, dc) = model.backbone.forward_hidden(inputs);
    let t = h.nrows();
    let pooled = PooledState {
        vector: h.mean_axis(Axis(0)).expect("non-empty"),
    };
    let (y, hc) = match rng {
        Some(rng) => head.forward_train(&pooled, rng)?,
        None => head.forward_cached(&pooled)?,
    };
    let dpool = head.backward(&hc, 2.0 * (y - label) * scale, head_grads);
    if let Some(bg) = backbone {
        let row: Array1<f64> = dpool / t as f64;
        let dh = row.broadcast((t, row.len())).expect("row broadcast").to_owned();
        model.backbone.backward_hidden(inputs, &dc, dh.view(), bg);
    }
    Ok((y - label).powi(2))
}

/// Teacher-forced cross-entropy of one sample against its serialized label;
/// accumulates `scale ·` its gradient into `backbone`.
pub fn token_grads(
    model: &ToyModel,
    inputs: &ToyInputs,
    label: f64,
    reduction: Reduction,
    scale: f64,
    backbone: &mut Grads,
) -> Result<f64> {
    let target = serialize_score(label, &model.codec)?;
    let (logits, tc) = model.backbone.forward_tokens(inputs, &target[..target.len() - 1])?;
    let (loss, mut dl) = ce_loss_grad(&TokenLogits::new(logits)?, &target, reduction)?;
    dl.mapv_inplace(|v| v * scale);
    model.backbone.backward_tokens(inputs, &tc, dl.view(), backbone);
    Ok(loss)
}

pub fn write_loss_curve(path: &Path, losses: &[f64]) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(f, "step,loss")?;
    for (i, l) in losses.iter().enumerate() {
        writeln!(f, "{},{l}", i + 1)?;
    }
    f.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backbone::ToyConfig;

    fn micro() -> ToyConfig {
        ToyConfig {
            dim: 16,
            layers: 1,
            heads: 2,
            ffn_mult: 2,
            grid: 2,
            audio_slices: 4,
            mel_bins: 8,
            text_buckets: 64,
            max_frames: 4,
            audio: true,
        }
    }

    fn samples(n: usize, cfg: &ToyConfig) -> Vec<TrainSample> {
        (0..n)
            .map(|i| {
                let v = i as f64 / n as f64;
                TrainSample {
                    id: format!("s{i}"),
                    inputs: ToyInputs {
                        visual: Array2::from_elem((2 * cfg.grid * cfg.grid, 3), v),
                        n_frames: 2,
                        audio: Some(Array2::from_elem((cfg.audio_slices, cfg.mel_bins), 1.0 - v)),
                        text: vec![i % 7, 3, 5],
                    },
                    label: 0.2 + 0.6 * v,
                }
            })
            .collect()
    }

    fn model(strategy: Strategy) -> ToyModel {
        ToyModel::new(ToyBackbone::new(micro(), 0).unwrap(), strategy, PromptVariant::AudioVisual, 0.0, 0).unwrap()
    }

    #[test]
    fn missing_group_rate_is_validation_error() {
        let m = model(Strategy::FeatureBased);
        let mut cfg = TrainConfig::feature_based();
        cfg.learning_rates.remove(&ParamGroup::Decoder);
        let err = cfg.validate(&m.trainable_groups(&cfg)).unwrap_err();
        assert!(matches!(err, Error::Validation { ref field, ref message } if field == "learning_rates" && message.contains("decoder")));
        // frozen groups need no rate
        let mut cfg = TrainConfig::feature_based();
        cfg.learning_rates.remove(&ParamGroup::Vision);
        assert!(cfg.validate(&m.trainable_groups(&cfg)).is_ok());
    }

    #[test]
    fn trainable_groups_follow_strategy_and_variant() {
        let fb = model(Strategy::FeatureBased);
        let cfg = TrainConfig::feature_based();
        assert_eq!(
            fb.trainable_groups(&cfg),
            BTreeSet::from([ParamGroup::Audio, ParamGroup::Text, ParamGroup::Decoder, ParamGroup::Head])
        );
        let tb = ToyModel::new(ToyBackbone::new(micro(), 0).unwrap(), Strategy::TokenBased, PromptVariant::VisualOnly, 0.0, 0).unwrap();
        assert_eq!(
            tb.trainable_groups(&TrainConfig::token_based()),
            BTreeSet::from([ParamGroup::Vision, ParamGroup::Text, ParamGroup::Decoder, ParamGroup::TokenHead])
        );
    }

    #[test]
    fn audio_visual_needs_audio_backbone() {
        let cfg = ToyConfig { audio: false, ..micro() };
        let err = ToyModel::new(ToyBackbone::new(cfg, 0).unwrap(), Strategy::FeatureBased, PromptVariant::AudioVisual, 0.1, 0).unwrap_err();
        assert!(matches!(err, Error::Validation { .. }));
    }

    #[test]
    fn same_seed_same_loss_curve() {
        let data = samples(6, &micro());
        let cfg = TrainConfig {
            batch_size: 4,
            max_steps: Some(5),
            dropout: 0.1,
            freeze_vision: false,
            ..TrainConfig::feature_based().with_uniform_lr(1e-3)
        };
        let run = || {
            let mut m = model(Strategy::FeatureBased);
            train(&mut m, &data, &cfg).unwrap().losses
        };
        let a = run();
        assert_eq!(a.len(), 5);
        assert_eq!(a, run());
    }

    #[test]
    fn feature_training_reduces_loss() {
        let data = samples(8, &micro());
        let cfg = TrainConfig {
            batch_size: 8,
            max_steps: Some(60),
            dropout: 0.0,
            ..TrainConfig::feature_based().with_uniform_lr(1e-3)
        };
        let mut m = model(Strategy::FeatureBased);
        let before = m.feature_mse(&data).unwrap();
        let report = train(&mut m, &data, &cfg).unwrap();
        assert_eq!(report.steps(), 60);
        assert!(m.feature_mse(&data).unwrap() < before * 0.1);
    }

    #[test]
    fn token_training_reduces_loss() {
        let data = samples(4, &micro());
        let cfg = TrainConfig {
            batch_size: 4,
            max_steps: Some(40),
            ..TrainConfig::token_based().with_uniform_lr(3e-3)
        };
        let mut m = model(Strategy::TokenBased);
        let report = train(&mut m, &data, &cfg).unwrap();
        assert!(report.final_loss().unwrap() < report.losses[0] * 0.5);
    }

    #[test]
    fn epochs_define_step_count() {
        let data = samples(10, &micro());
        let cfg = TrainConfig {
            batch_size: 4,
            epochs: 2,
            ..TrainConfig::feature_based().with_uniform_lr(1e-4)
        };
        let mut m = model(Strategy::FeatureBased);
        let r = train(&mut m, &data, &cfg).unwrap();
        assert_eq!((r.steps(), r.epochs, r.samples), (6, 2, 10));
    }

    #[test]
    fn frozen_groups_do_not_move() {
        let data = samples(4, &micro());
        let cfg = TrainConfig {
            batch_size: 2,
            max_steps: Some(3),
            ..TrainConfig::feature_based().with_uniform_lr(1e-2)
        };
        let mut m = model(Strategy::FeatureBased);
        let before = m.backbone.params().clone();
        train(&mut m, &data, &cfg).unwrap();
        for (a, b) in before.params().iter().zip(m.backbone.params().params()) {
            if a.group == ParamGroup::Vision {
                assert_eq!(a.value, b.value, "{}", a.name);
            }
        }
        assert!(before
            .params()
            .iter()
            .zip(m.backbone.params().params())
            .any(|(a, b)| a.group == ParamGroup::Decoder && a.value != b.value));
    }

    #[test]
    fn adamw_first_step_moves_by_lr() {
        let mut store = ParamStore::new();
        let id = store.add("w", ParamGroup::Head, Array2::from_elem((1, 2), 1.0), false);
        let mut grads = store.zero_grads();
        grads.get_mut(id)[[0, 0]] = 0.3;
        grads.get_mut(id)[[0, 1]] = -2.0;
        let mut opt = AdamW::new(&store, 0.0);
        opt.step(&mut store, &grads, |_| Some(0.1));
        // bias-corrected first step is lr · sign(g)
        assert!((store.get(id)[[0, 0]] - 0.9).abs() < 1e-6);
        assert!((store.get(id)[[0, 1]] - 1.1).abs() < 1e-6);
    }

    #[test]
    fn adamw_decoupled_decay() {
        let mut store = ParamStore::new();
        let id = store.add("w", ParamGroup::Head, Array2::from_elem((1, 1), 2.0), true);
        let grads = store.zero_grads();
        let mut opt = AdamW::new(&store, 0.5);
        opt.step(&mut store, &grads, |_| Some(0.1));
        assert!((store.get(id)[[0, 0]] - (2.0 - 0.1 * 0.5 * 2.0)).abs() < 1e-12);
        opt.step(&mut store, &grads, |_| None);
        assert!((store.get(id)[[0, 0]] - 1.9).abs() < 1e-12);
    }

    #[test]
    fn loss_curve_csv() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("loss.csv");
        write_loss_curve(&p, &[0.5, 0.25]).unwrap();
        assert_eq!(std::fs::read_to_string(p).unwrap(), "step,loss\n1,0.5\n2,0.25\n");
    }
}
