use std::f64::consts::PI;

use proptest::prelude::*;
use videngage::media::PcmAudio;
use videngage::preprocess::{hz_to_mel, mel_to_hz, spectrogram_from_pcm, ResizeBudget, SpectrogramParams, DEFAULT_MAX_PIXELS};

/// Mel filter centers recomputed from the HTK formula, independent of the filterbank.
fn center_table(p: &SpectrogramParams) -> Vec<f64> {
    let lo = 2595.0 * (1.0 + p.f_min_hz / 700.0).log10();
    let hi = 2595.0 * (1.0 + (f64::from(p.sample_rate_hz) / 2.0) / 700.0).log10();
    (1..=p.mel_bins)
        .map(|i| {
            let m = lo + (hi - lo) * i as f64 / (p.mel_bins + 1) as f64;
            700.0 * (10f64.powf(m / 2595.0) - 1.0)
        })
        .collect()
}

#[test]
fn pure_tone_peaks_at_nearest_mel_center() {
    let p = SpectrogramParams::default();
    let sr = 16_000u32;
    let samples = (0..sr as usize)
        .map(|i| (0.5 * (2.0 * PI * 440.0 * i as f64 / f64::from(sr)).sin()) as f32)
        .collect();
    let s = spectrogram_from_pcm(&PcmAudio { sample_rate: sr, channels: 1, samples }, &p).unwrap();

    let centers = center_table(&p);
    let nearest = centers
        .iter()
        .enumerate()
        .min_by(|a, b| (a.1 - 440.0).abs().total_cmp(&(b.1 - 440.0).abs()))
        .unwrap()
        .0;
    for t in 0..s.time_frames() {
        let col = s.values.column(t);
        let argmax = (0..col.len()).max_by(|&a, &b| col[a].total_cmp(&col[b])).unwrap();
        assert_eq!(argmax, nearest, "frame {t}");
    }
}

#[test]
fn mel_scale_inverts() {
    for hz in [0.0, 100.0, 440.0, 1000.0, 7999.0] {
        assert!((mel_to_hz(hz_to_mel(hz)) - hz).abs() < 1e-9);
    }
}

fn oracle_best(h: usize, w: usize, budget: usize, aspect_tol: f64) -> (usize, usize) {
    let target = h as f64 / w as f64;
    let mut best = (0, 0);
    for hb in (28..=budget / 28).step_by(28) {
        for wb in (28..=budget / 28).step_by(28) {
            if hb * wb > budget {
                break;
            }
            let ratio = hb as f64 / wb as f64;
            if (ratio / target - 1.0).abs() <= aspect_tol && hb * wb > best.0 * best.1 {
                best = (hb, wb);
            }
        }
    }
    best
}

#[test]
fn pixel_budget_against_exhaustive_search() {
    let budget = DEFAULT_MAX_PIXELS;
    let (h, w) = ResizeBudget::visual_language().target_dims(1080, 1920).unwrap();
    assert_eq!((h % 28, w % 28), (0, 0));
    assert!(h * w <= budget);
    let aspect = (h as f64 / w as f64) / (9.0 / 16.0);
    assert!((aspect - 1.0).abs() <= 0.05, "aspect off by {aspect}");

    // The closed form floors both sides, so it may leave some area unused
    // relative to the best admissible pair; it must stay within 10% of it.
    let (oh, ow) = oracle_best(1080, 1920, budget, 0.05);
    assert!(oh * ow > 0);
    assert!((h * w) as f64 >= 0.9 * (oh * ow) as f64, "{h}x{w} vs oracle {oh}x{ow}");
}

proptest! {
    #[test]
    fn pixel_budget_invariants(h in 1usize..4000, w in 1usize..4000, patches in 1usize..2000) {
        let budget = patches * 28 * 28;
        let (hb, wb) = ResizeBudget::PixelBudget { max_pixels: budget }.target_dims(h, w).unwrap();
        prop_assert_eq!(hb % 28, 0);
        prop_assert_eq!(wb % 28, 0);
        prop_assert!(hb * wb <= budget, "{}x{} over budget {}", hb, wb, budget);
    }
}
