//! Helpers shared by the integration test targets.
#![allow(dead_code)]

use std::collections::BTreeMap;

use ndarray::Array2;
use videngage::backbone::nn::{Grads, ParamGroup, ParamStore};
use videngage::backbone::toy::ToyInputs;
use videngage::regression::{ce_loss, feature_grads, token_grads, Reduction};
use videngage::{PromptVariant, Strategy, ToyBackbone, ToyConfig, ToyModel};

/// Smallest configuration that still exercises every layer type.
pub fn micro_config() -> ToyConfig {
    ToyConfig {
        dim: 8,
        layers: 1,
        heads: 2,
        ffn_mult: 2,
        grid: 2,
        audio_slices: 2,
        mel_bins: 4,
        text_buckets: 16,
        max_frames: 2,
        audio: true,
    }
}

pub fn micro_model(strategy: Strategy, seed: u64) -> ToyModel {
    let bb = ToyBackbone::new(micro_config(), seed).unwrap();
    ToyModel::new(bb, strategy, PromptVariant::AudioVisual, 0.1, seed).unwrap()
}

/// Fixed tiny input: 2 frames of a 2×2 grid, 2 audio slices, 5 text tokens.
pub fn micro_inputs() -> ToyInputs {
    let cfg = micro_config();
    let rows = 2 * cfg.grid * cfg.grid;
    ToyInputs {
        visual: Array2::from_shape_fn((rows, 3), |(i, j)| ((i * 7 + j * 3) % 10) as f64 / 10.0),
        n_frames: 2,
        audio: Some(Array2::from_shape_fn((cfg.audio_slices, cfg.mel_bins), |(i, j)| {
            -4.0 + ((i * 5 + j) % 9) as f64 * 0.6
        })),
        text: vec![3, 1, 4, 1, 5],
    }
}

/// Deterministic spread of at most `k` flat indices into `n` entries.
fn sample_indices(n: usize, k: usize) -> Vec<usize> {
    if n <= k {
        return (0..n).collect();
    }
    (0..k).map(|i| (i * n) / k + (i * 7919) % (n / k).max(1)).collect()
}

fn group_norms(
    store: &mut ParamStore,
    analytic: &Grads,
    per_tensor: usize,
    loss: &mut dyn FnMut(&ParamStore) -> f64,
    out: &mut BTreeMap<ParamGroup, (f64, f64)>,
) {
    const H: f64 = 1e-5;
    for pi in 0..store.params().len() {
        let group = store.params()[pi].group;
        let cols = store.params()[pi].value.ncols();
        let n = store.params()[pi].value.len();
        for flat in sample_indices(n, per_tensor) {
            let idx = [flat / cols, flat % cols];
            let orig = store.params()[pi].value[idx];
            store.params_mut()[pi].value[idx] = orig + H;
            let up = loss(store);
            store.params_mut()[pi].value[idx] = orig - H;
            let down = loss(store);
            store.params_mut()[pi].value[idx] = orig;
            let num = (up - down) / (2.0 * H);
            let a = analytic.g[pi][idx];
            let e = out.entry(group).or_insert((0.0, 0.0));
            e.0 += (a - num).powi(2);
            e.1 += a.powi(2).max(num.powi(2));
        }
    }
}

/// Relative error `‖a − n‖ / ‖·‖` per parameter group, over a sample of
/// entries from every tensor, for the strategy's own training loss.
pub fn gradient_check(strategy: Strategy, seed: u64, label: f64) -> BTreeMap<ParamGroup, f64> {
    let mut model = micro_model(strategy, seed);
    let inputs = micro_inputs();
    let mut bg = model.backbone.params().zero_grads();
    let mut sums = BTreeMap::new();
    match strategy {
        Strategy::FeatureBased => {
            let mut hg = model.head.as_ref().unwrap().params().zero_grads();
            feature_grads(&model, &inputs, label, 1.0, None, Some(&mut bg), &mut hg).unwrap();

            let head = model.head.clone().unwrap();
            let mut bb_store = model.backbone.params().clone();
            let mut bb_loss = |s: &ParamStore| {
                *model.backbone.params_mut() = s.clone();
                (head.forward(&model.pooled(&inputs)).unwrap() - label).powi(2)
            };
            group_norms(&mut bb_store, &bg, 24, &mut bb_loss, &mut sums);
            *model.backbone.params_mut() = bb_store;

            let pooled = model.pooled(&inputs);
            let mut head = model.head.clone().unwrap();
            let mut head_store = head.params().clone();
            let mut head_loss = |s: &ParamStore| {
                *head.params_mut() = s.clone();
                (head.forward(&pooled).unwrap() - label).powi(2)
            };
            group_norms(&mut head_store, &hg, 48, &mut head_loss, &mut sums);
        }
        Strategy::TokenBased => {
            let reduction = Reduction::Mean;
            token_grads(&model, &inputs, label, reduction, 1.0, &mut bg).unwrap();
            let target = videngage::regression::serialize_score(label, &model.codec).unwrap();
            let mut store = model.backbone.params().clone();
            let mut loss = |s: &ParamStore| {
                *model.backbone.params_mut() = s.clone();
                let (logits, _) = model.backbone.forward_tokens(&inputs, &target[..target.len() - 1]).unwrap();
                ce_loss(&videngage::backbone::TokenLogits::new(logits).unwrap(), &target, reduction).unwrap()
            };
            group_norms(&mut store, &bg, 24, &mut loss, &mut sums);
        }
    }
    sums.into_iter()
        .filter(|(_, (_, scale))| *scale > 0.0)
        .map(|(g, (diff, scale))| (g, (diff / scale).sqrt()))
        .collect()
}
