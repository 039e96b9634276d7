//! Shared fixtures for the benchmarks in `benches/`.

use std::path::PathBuf;
use std::sync::Arc;

use videngage::dataset::write_synthetic_dataset;
use videngage::media::{PcmAudio, RawMediaDecoder};
use videngage::{Manifest, ModelInput, PreprocessConfig, Preprocessor, PromptVariant};

/// Deterministic pseudo-random scores in `[0, 1)` (splitmix64).
pub fn scores(n: usize, seed: u64) -> Vec<f64> {
    let mut state = seed;
    (0..n)
        .map(|_| {
            state = state.wrapping_add(0x9E37_79B9_7F4A_7C15);
            let mut z = state;
            z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
            z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
            (z ^ (z >> 31)) as f64 / u64::MAX as f64
        })
        .collect()
}

/// Mono 440 Hz tone.
pub fn tone(seconds: f64, sample_rate: u32) -> PcmAudio {
    let n = (seconds * f64::from(sample_rate)) as usize;
    PcmAudio {
        sample_rate,
        channels: 1,
        samples: (0..n)
            .map(|i| (2.0 * std::f64::consts::PI * 440.0 * i as f64 / f64::from(sample_rate)).sin() as f32 * 0.5)
            .collect(),
    }
}

/// A small synthetic dataset on disk, preprocessed into model inputs.
pub fn model_inputs(n: usize, config: PreprocessConfig) -> (Manifest, Vec<ModelInput>) {
    let dir: PathBuf = std::env::temp_dir().join(format!("videngage-bench-{}", std::process::id()));
    let manifest = write_synthetic_dataset(n, 7, &dir).expect("synthetic dataset");
    let pre = Preprocessor::new(config, Arc::new(RawMediaDecoder));
    let inputs = manifest
        .records
        .iter()
        .map(|r| ModelInput::from_preprocessed(pre.process(&manifest, r).expect("preprocess"), PromptVariant::AudioVisual).expect("input"))
        .collect();
    (manifest, inputs)
}
