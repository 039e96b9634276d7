use std::sync::Arc;
use std::time::Duration;

use videngage::backbone::stub::{StubConfig, StubFault, StubReply, StubServer};
use videngage::dataset::write_synthetic_dataset;
use videngage::eval::evaluate_records;
use videngage::media::RawMediaDecoder;
use videngage::regression::{predict_manifest, MlpHead, Predictor, ScoreTokenization};
use videngage::{Error, Manifest, PreprocessConfig, Preprocessor, PromptVariant, RemoteBackbone};

fn dataset(n: usize) -> (tempfile::TempDir, Manifest) {
    let dir = tempfile::tempdir().unwrap();
    let m = write_synthetic_dataset(n, 2, dir.path()).unwrap();
    (dir, m)
}

fn preprocessor() -> Preprocessor {
    let cfg = PreprocessConfig {
        n_frames: 2,
        ..PreprocessConfig::default()
    };
    Preprocessor::new(cfg, Arc::new(RawMediaDecoder))
}

fn run_token(server: &StubServer, m: &Manifest) -> videngage::Result<Vec<videngage::PredictionRecord>> {
    let bb = RemoteBackbone::new(&server.url(), "stub", 10.0)?;
    let p = Predictor::token_based(&bb, ScoreTokenization::default()).with_fallback(None);
    Ok(predict_manifest(&p, &preprocessor(), m, PromptVariant::AudioVisual, false)?.records)
}

#[test]
fn predict_then_eval_against_stub() {
    let (_dir, m) = dataset(6);
    let server = StubServer::start(StubConfig {
        reply: StubReply::MeanBrightness,
        ..StubConfig::default()
    })
    .unwrap();
    let preds = run_token(&server, &m).unwrap();
    assert_eq!(preds.len(), 6);
    // the counter is bumped after the reply is flushed
    for _ in 0..100 {
        if server.requests_served() == 6 {
            break;
        }
        std::thread::sleep(Duration::from_millis(10));
    }
    assert_eq!(server.requests_served(), 6);
    let report = evaluate_records(&preds, &m).unwrap();
    assert_eq!(report.metrics.n, 6);
    assert!(report.metrics.final_score.is_finite());
}

#[test]
fn fixed_text_parses_to_half() {
    let (_dir, m) = dataset(2);
    let server = StubServer::start(StubConfig::default()).unwrap();
    let preds = run_token(&server, &m).unwrap();
    assert!(preds.iter().all(|p| p.score == 0.5 && p.model_id == "stub"));
}

#[test]
fn feature_based_over_remote_hidden_states() {
    let (_dir, m) = dataset(3);
    let server = StubServer::start(StubConfig::default()).unwrap();
    let bb = RemoteBackbone::new(&server.url(), "stub", 10.0).unwrap().with_dim(16);
    let head = MlpHead::new(16, 0.1, 0).unwrap();
    let p = Predictor::feature_based(&bb, &head);
    let run = predict_manifest(&p, &preprocessor(), &m, PromptVariant::VisualOnly, false).unwrap();
    assert_eq!(run.records.len(), 3);
    assert!(run.records.iter().all(|r| (0.0..=1.0).contains(&r.score)));
}

#[test]
fn missing_fields_are_named() {
    let (_dir, m) = dataset(1);
    let server = StubServer::start(StubConfig {
        fault: Some(StubFault::OmitField),
        ..StubConfig::default()
    })
    .unwrap();
    match run_token(&server, &m) {
        Err(Error::Protocol { field, .. }) => assert_eq!(field, "text"),
        other => panic!("expected protocol error, got {other:?}"),
    }

    let bb = RemoteBackbone::new(&server.url(), "stub", 10.0).unwrap();
    let head = MlpHead::new(16, 0.1, 0).unwrap();
    let p = Predictor::feature_based(&bb, &head);
    match predict_manifest(&p, &preprocessor(), &m, PromptVariant::AudioVisual, false) {
        Err(Error::Protocol { field, .. }) => assert_eq!(field, "hidden_states"),
        other => panic!("expected protocol error, got {other:?}"),
    }
}

#[test]
fn server_errors_and_garbage() {
    let (_dir, m) = dataset(1);
    let server = StubServer::start(StubConfig {
        fault: Some(StubFault::ServerError {
            code: "overloaded".into(),
            message: "try later".into(),
        }),
        ..StubConfig::default()
    })
    .unwrap();
    match run_token(&server, &m) {
        Err(Error::Backend { code, message }) => assert_eq!((code.as_str(), message.as_str()), ("overloaded", "try later")),
        other => panic!("expected backend error, got {other:?}"),
    }

    let server = StubServer::start(StubConfig {
        fault: Some(StubFault::Garbage),
        ..StubConfig::default()
    })
    .unwrap();
    let err = run_token(&server, &m).unwrap_err();
    assert!(matches!(err, Error::Protocol { .. }), "{err:?}");
    assert_eq!(err.exit_code(), 4);
}

#[test]
fn transport_failures() {
    let (_dir, m) = dataset(2);
    // bind then drop to get a port nobody listens on
    let port = std::net::TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
    let bb = RemoteBackbone::new(&format!("http://127.0.0.1:{port}/v1"), "stub", 2.0).unwrap();
    let p = Predictor::token_based(&bb, ScoreTokenization::default());
    let err = predict_manifest(&p, &preprocessor(), &m, PromptVariant::AudioVisual, true).unwrap_err();
    assert!(matches!(err, Error::Transport { .. }), "{err:?}");

    let server = StubServer::start(StubConfig {
        fault: Some(StubFault::Stall(Duration::from_millis(1500))),
        ..StubConfig::default()
    })
    .unwrap();
    let bb = RemoteBackbone::new(&server.url(), "stub", 0.3).unwrap();
    let p = Predictor::token_based(&bb, ScoreTokenization::default());
    match predict_manifest(&p, &preprocessor(), &m, PromptVariant::AudioVisual, false) {
        Err(Error::Transport { retryable, .. }) => assert!(retryable),
        other => panic!("expected timeout, got {other:?}"),
    }
}
