use criterion::{criterion_group, criterion_main, Criterion};
use std::hint::black_box;
use videngage::media::Frame;
use videngage::preprocess::{resize_bilinear, spectrogram_from_pcm, ResizeBudget, SpectrogramParams};
use videngage_bench::tone;

fn spectrogram(c: &mut Criterion) {
    let params = SpectrogramParams::default();
    let clip = tone(10.0, 16_000);
    let resample = tone(10.0, 44_100);
    c.bench_function("spectrogram/10s_16k", |b| b.iter(|| spectrogram_from_pcm(black_box(&clip), &params)));
    c.bench_function("spectrogram/10s_44k1", |b| b.iter(|| spectrogram_from_pcm(black_box(&resample), &params)));
}

fn resize(c: &mut Criterion) {
    let frame = Frame::filled(720, 1280, 0.5);
    let (h, w) = ResizeBudget::visual_language().target_dims(720, 1280).unwrap();
    c.bench_function("resize/720p_to_384", |b| b.iter(|| resize_bilinear(black_box(&frame), 384, 384)));
    c.bench_function("resize/720p_pixel_budget", |b| b.iter(|| resize_bilinear(black_box(&frame), h, w)));
}

criterion_group!(benches, spectrogram, resize);
criterion_main!(benches);
