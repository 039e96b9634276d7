//! Feature-based (MLP head + MSE) and token-based (score string + CE)
//! regression over a backbone, with the shared training loop.

mod checkpoint;
mod codec;
mod head;
mod loss;
mod predict;
mod train;

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use ndarray::{Array1, Axis};
use serde::{Deserialize, Serialize};

use crate::backbone::HiddenStates;
use crate::error::{Error, Result};

pub use checkpoint::{load_checkpoint, save_checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use codec::{detokenize, format_score, parse_score, serialize_score, ScoreTokenization};
pub use head::{mlp_forward, HeadCache, MlpHead, DEFAULT_DROPOUT, HEAD_HIDDEN};
pub use loss::{ce_loss, ce_loss_grad, mse_grad, mse_loss, Reduction};
pub use predict::{predict_manifest, PredictionRun, Predictor, DEFAULT_FALLBACK_SCORE, MAX_GENERATION_STEPS};
pub use train::{
    feature_grads, prepare_samples, token_grads, train, train_manifest, write_loss_curve, AdamW, TrainConfig, TrainReport, TrainSample,
    ToyModel,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    FeatureBased,
    TokenBased,
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Strategy::FeatureBased => "feature_based",
            Strategy::TokenBased => "token_based",
        })
    }
}

impl FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "feature_based" => Ok(Strategy::FeatureBased),
            "token_based" => Ok(Strategy::TokenBased),
            other => Err(Error::Argument(format!("unknown strategy {other:?}"))),
        }
    }
}

/// Mean of the decoder hidden states over the sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct PooledState {
    pub vector: Array1<f64>,
}

pub fn mean_pool(h: &HiddenStates) -> Result<PooledState> {
    if h.is_empty() {
        return Err(Error::Shape("cannot pool zero hidden states".into()));
    }
    let vector = h.states.mean_axis(Axis(0)).expect("non-empty");
    Ok(PooledState { vector })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub video_id: String,
    pub score: f64,
    pub model_id: String,
}

impl PredictionRecord {
    /// Clamps `score` into `[0, 1]`; NaN is rejected.
    pub fn new(video_id: impl Into<String>, score: f64, model_id: impl Into<String>) -> Result<Self> {
        let video_id = video_id.into();
        if score.is_nan() {
            return Err(Error::validation("score", format!("{video_id}: NaN prediction")));
        }
        Ok(PredictionRecord {
            video_id,
            score: score.clamp(0.0, 1.0),
            model_id: model_id.into(),
        })
    }
}

pub fn write_predictions(path: &Path, records: &[PredictionRecord]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err(path))?;
    for r in records {
        w.serialize(r).map_err(csv_err(path))?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_predictions(path: &Path) -> Result<Vec<PredictionRecord>> {
    let mut rdr = csv::Reader::from_path(path).map_err(csv_err(path))?;
    let headers = rdr.headers().map_err(csv_err(path))?.clone();
    if headers.iter().collect::<Vec<_>>() != ["video_id", "score", "model_id"] {
        return Err(Error::Parse {
            path: path.to_path_buf(),
            line: 1,
            message: format!("expected header video_id,score,model_id, found {}", headers.iter().collect::<Vec<_>>().join(",")),
        });
    }
    let mut out = Vec::new();
    for (i, row) in rdr.deserialize::<PredictionRecord>().enumerate() {
        let line = i + 2;
        let r = row.map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line,
            message: e.to_string(),
        })?;
        if !(0.0..=1.0).contains(&r.score) {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                line,
                message: format!("score {} outside [0, 1]", r.score),
            });
        }
        out.push(r);
    }
    Ok(out)
}

fn csv_err(path: &Path) -> impl Fn(csv::Error) -> Error + '_ {
    move |e| match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => Error::Parse {
            path: path.to_path_buf(),
            line: 0,
            message: format!("{other:?}"),
        },
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{array, Array2};

    #[test]
    fn mean_pool_examples() {
        let one = HiddenStates::new(array![[1.5, -2.0]]).unwrap();
        assert_eq!(mean_pool(&one).unwrap().vector, array![1.5, -2.0]);
        let two = HiddenStates::new(array![[0.0, 0.0], [2.0, 4.0]]).unwrap();
        assert_eq!(mean_pool(&two).unwrap().vector, array![1.0, 2.0]);
    }

    #[test]
    fn mean_pool_matches_column_sums() {
        let m = Array2::from_shape_fn((7, 5), |(i, j)| ((i * 31 + j * 17) % 11) as f64 * 0.37 - 1.1);
        let pooled = mean_pool(&HiddenStates::new(m.clone()).unwrap()).unwrap();
        for j in 0..5 {
            let mut acc = 0.0;
            for i in 0..7 {
                acc += m[[i, j]];
            }
            assert!((pooled.vector[j] - acc / 7.0).abs() < 1e-6);
        }
    }

    #[test]
    fn prediction_clamps_and_rejects_nan() {
        assert_eq!(PredictionRecord::new("a", 1.3, "m").unwrap().score, 1.0);
        assert_eq!(PredictionRecord::new("a", -0.2, "m").unwrap().score, 0.0);
        assert!(PredictionRecord::new("a", f64::NAN, "m").is_err());
    }

    #[test]
    fn predictions_csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.csv");
        let recs = vec![
            PredictionRecord::new("v1", 0.25, "toy").unwrap(),
            PredictionRecord::new("v,2", 0.75, "toy").unwrap(),
        ];
        write_predictions(&path, &recs).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("video_id,score,model_id\n"));
        assert_eq!(read_predictions(&path).unwrap(), recs);
    }

    #[test]
    fn predictions_csv_rejects_bad_rows() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.csv");
        std::fs::write(&path, "video_id,score,model_id\nv1,1.5,m\n").unwrap();
        assert!(matches!(read_predictions(&path), Err(Error::Parse { line: 2, .. })));
        std::fs::write(&path, "id,score\nv1,0.5\n").unwrap();
        assert!(matches!(read_predictions(&path), Err(Error::Parse { line: 1, .. })));
    }
}
