use criterion::{criterion_group, criterion_main, Criterion};
use std::hint::black_box;
use videngage::preprocess::ResizeBudget;
use videngage::regression::TrainConfig;
use videngage::{Backbone, PreprocessConfig, PromptVariant, Strategy, ToyBackbone, ToyConfig, ToyModel};
use videngage_bench::model_inputs;

fn toy(c: &mut Criterion) {
    let config = PreprocessConfig {
        resize: ResizeBudget::Fixed { height: 64, width: 64 },
        ..PreprocessConfig::default()
    };
    let (_, inputs) = model_inputs(4, config);
    let desk = ToyConfig {
        dim: 32,
        grid: 2,
        audio_slices: 4,
        ffn_mult: 2,
        ..ToyConfig::default()
    };
    let backbone = ToyBackbone::new(desk, 1).unwrap();
    c.bench_function("toy/hidden_states", |b| b.iter(|| backbone.hidden_states(black_box(&inputs[0]))));
    c.bench_function("toy/generate_score", |b| b.iter(|| backbone.generate_score_text(black_box(&inputs[0]), 8)));

    let model = ToyModel::new(backbone.clone(), Strategy::FeatureBased, PromptVariant::AudioVisual, 0.1, 1).unwrap();
    let predictor = model.predictor();
    c.bench_function("toy/predict_feature", |b| b.iter(|| predictor.predict(black_box(&inputs[1]))));

    let mut g = c.benchmark_group("toy/train");
    g.sample_size(10);
    let cfg = TrainConfig {
        max_steps: Some(4),
        batch_size: 4,
        ..TrainConfig::feature_based().with_uniform_lr(1e-3)
    };
    let pre = videngage::Preprocessor::new(config, std::sync::Arc::new(videngage::media::RawMediaDecoder));
    let (manifest, _) = model_inputs(4, config);
    let samples = videngage::regression::prepare_samples(&model, &pre, &manifest).unwrap();
    g.bench_function("feature_4_steps", |b| {
        b.iter(|| {
            let mut m = model.clone();
            videngage::regression::train(&mut m, black_box(&samples), &cfg).unwrap()
        })
    });
    g.finish();
}

criterion_group!(benches, toy);
criterion_main!(benches);
