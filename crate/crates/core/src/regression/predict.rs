use std::sync::atomic::{AtomicUsize, Ordering};

use super::codec::{parse_score, ScoreTokenization};
use super::head::MlpHead;
use super::{mean_pool, PredictionRecord, Strategy};
use crate::backbone::{Backbone, ModelInput};
use crate::dataset::Manifest;
use crate::error::{Error, Result};
use crate::preprocess::Preprocessor;
use crate::prompt::PromptVariant;

pub const MAX_GENERATION_STEPS: usize = 8;
/// Dataset-mean score used when a generation has no parseable number.
pub const DEFAULT_FALLBACK_SCORE: f64 = 0.5;

/// Eval-mode score emission over any backbone. Safe to share across threads.
pub struct Predictor<'a> {
    backbone: &'a dyn Backbone,
    head: Option<&'a MlpHead>,
    strategy: Strategy,
    codec: ScoreTokenization,
    model_id: String,
    fallback: Option<f64>,
    warnings: AtomicUsize,
}

impl<'a> Predictor<'a> {
    pub fn feature_based(backbone: &'a dyn Backbone, head: &'a MlpHead) -> Self {
        Self::build(backbone, Some(head), Strategy::FeatureBased, ScoreTokenization::default())
    }

    pub fn token_based(backbone: &'a dyn Backbone, codec: ScoreTokenization) -> Self {
        Self::build(backbone, None, Strategy::TokenBased, codec)
    }

    fn build(backbone: &'a dyn Backbone, head: Option<&'a MlpHead>, strategy: Strategy, codec: ScoreTokenization) -> Self {
        Predictor {
            backbone,
            head,
            strategy,
            codec,
            model_id: backbone.model_id().to_string(),
            fallback: Some(DEFAULT_FALLBACK_SCORE),
            warnings: AtomicUsize::new(0),
        }
    }

    pub fn with_model_id(mut self, id: impl Into<String>) -> Self {
        self.model_id = id.into();
        self
    }

    /// `None` makes unparseable generations an error.
    pub fn with_fallback(mut self, fallback: Option<f64>) -> Self {
        self.fallback = fallback;
        self
    }

    pub fn model_id(&self) -> &str {
        &self.model_id
    }

    pub fn strategy(&self) -> Strategy {
        self.strategy
    }

    /// Number of predictions that fell back to the default score.
    pub fn warnings(&self) -> usize {
        self.warnings.load(Ordering::Relaxed)
    }

    /// Unclamped head output, or the parsed greedy generation.
    pub fn raw_score(&self, input: &ModelInput) -> Result<f64> {
        match self.strategy {
            Strategy::FeatureBased => {
                let head = self.head.expect("feature-based predictor has a head");
                let pooled = mean_pool(&self.backbone.hidden_states(input)?)?;
                head.forward(&pooled)
            }
            Strategy::TokenBased => {
                let text = self.backbone.generate_score_text(input, MAX_GENERATION_STEPS)?;
                parse_score(&text, &self.codec)
            }
        }
    }

    pub fn predict(&self, input: &ModelInput) -> Result<PredictionRecord> {
        let score = match (self.raw_score(input), self.fallback) {
            (Ok(s), _) => s,
            (Err(Error::ScoreParse(_)), Some(f)) => {
                self.warnings.fetch_add(1, Ordering::Relaxed);
                f
            }
            (Err(e), _) => return Err(e),
        };
        PredictionRecord::new(input.id.clone(), score, self.model_id.clone())
    }

    /// Placeholder row for a record that could not be processed at all.
    pub fn fallback_record(&self, video_id: &str) -> PredictionRecord {
        self.warnings.fetch_add(1, Ordering::Relaxed);
        let score = self.fallback.unwrap_or(DEFAULT_FALLBACK_SCORE);
        PredictionRecord::new(video_id, score, self.model_id.clone()).expect("fallback is a finite score")
    }
}

/// Predictions for a whole manifest, in manifest order.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionRun {
    pub records: Vec<PredictionRecord>,
    /// `(video_id, reason)` for records replaced by the fallback score.
    pub skipped: Vec<(String, String)>,
}

/// Preprocess and score every record. With `skip_errors`, records whose
/// media cannot be read get the fallback score; backend failures always abort.
pub fn predict_manifest(
    predictor: &Predictor<'_>,
    pre: &Preprocessor,
    manifest: &Manifest,
    variant: PromptVariant,
    skip_errors: bool,
) -> Result<PredictionRun> {
    let mut run = PredictionRun {
        records: Vec::with_capacity(manifest.len()),
        skipped: Vec::new(),
    };
    for rec in &manifest.records {
        let input = pre
            .process(manifest, rec)
            .and_then(|p| ModelInput::from_preprocessed(p, variant));
        match input {
            Ok(input) => run.records.push(predictor.predict(&input)?),
            Err(e) if skip_errors && e.exit_code() == 3 => {
                run.records.push(predictor.fallback_record(&rec.id));
                run.skipped.push((rec.id.clone(), e.to_string()));
            }
            Err(e) => return Err(e),
        }
    }
    Ok(run)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backbone::{Capabilities, HiddenStates};
    use ndarray::Array2;

    struct Canned {
        text: &'static str,
        dim: usize,
    }

    impl Backbone for Canned {
        fn model_id(&self) -> &str {
            "canned"
        }
        fn capabilities(&self) -> Capabilities {
            Capabilities {
                audio: false,
                encoders: false,
                hidden: true,
                generate: true,
                trainable: false,
            }
        }
        fn embedding_dim(&self) -> usize {
            self.dim
        }
        fn hidden_states(&self, _: &ModelInput) -> Result<HiddenStates> {
            HiddenStates::new(Array2::from_elem((3, self.dim), 0.5))
        }
        fn generate_score_text(&self, _: &ModelInput, _: usize) -> Result<String> {
            Ok(self.text.to_string())
        }
    }

    fn input() -> ModelInput {
        use crate::media::Frame;
        use crate::preprocess::{KeyframeSet, NormalizedMetadata, SamplingPolicy};
        use crate::prompt::{build_prompt, PromptVariant};
        let meta = NormalizedMetadata {
            title_text: "t".into(),
            description_text: "d".into(),
        };
        ModelInput {
            id: "v".into(),
            keyframes: KeyframeSet {
                frames: vec![Frame::filled(2, 2, 0.5)],
                timestamps_s: vec![0.0],
                frame_indices: vec![0],
                policy: SamplingPolicy {
                    n: 1,
                    window_s: 5.0,
                    left_aligned: true,
                },
            },
            spectrogram: None,
            prompt: build_prompt(&meta, 1, PromptVariant::VisualOnly).unwrap(),
        }
    }

    #[test]
    fn token_path_parses_text() {
        let b = Canned { text: "0.50", dim: 4 };
        let p = Predictor::token_based(&b, ScoreTokenization::default());
        assert_eq!(p.predict(&input()).unwrap().score, 0.5);
        assert_eq!(p.warnings(), 0);
    }

    #[test]
    fn unparseable_generation_falls_back_or_errors() {
        let b = Canned { text: "high", dim: 4 };
        let p = Predictor::token_based(&b, ScoreTokenization::default()).with_fallback(Some(0.4));
        assert_eq!(p.predict(&input()).unwrap().score, 0.4);
        assert_eq!(p.warnings(), 1);
        let strict = Predictor::token_based(&b, ScoreTokenization::default()).with_fallback(None);
        assert!(matches!(strict.predict(&input()), Err(Error::ScoreParse(_))));
    }

    #[test]
    fn feature_path_clamps_emission() {
        let b = Canned { text: "", dim: 4 };
        let head = MlpHead::constant(4, 1.3).unwrap();
        let p = Predictor::feature_based(&b, &head);
        assert_eq!(p.raw_score(&input()).unwrap(), 1.3);
        assert_eq!(p.predict(&input()).unwrap().score, 1.0);
        let wrong = MlpHead::constant(5, 0.5).unwrap();
        assert!(matches!(Predictor::feature_based(&b, &wrong).predict(&input()), Err(Error::Shape(_))));
    }
}
