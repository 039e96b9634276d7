use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use serde_json::json;
use videngage::backbone::remote::encode_png;
use videngage::backbone::stub::{StubConfig, StubReply, StubServer};
use videngage::dataset::{load_manifest_with, write_synthetic_dataset, LoadOptions};
use videngage::eval::{ensemble_sets, evaluate_records};
use videngage::media::RawMediaDecoder;
use videngage::prompt::render_prompt;
use videngage::regression::{
    load_checkpoint, predict_manifest, read_predictions, save_checkpoint, train_manifest, write_loss_curve, write_predictions,
    Predictor,
};
use videngage::{
    Backbone, EnsembleSpec, Error, Manifest, ModelInput, PredictionRecord, Preprocessor, RemoteBackbone, Result, Split, Strategy,
    ToyBackbone, ToyModel,
};

use crate::config::{BackboneKind, RunConfig};
use crate::RunArgs;

fn log(started: Instant, msg: impl AsRef<str>) {
    eprintln!("[{:>7.2}s] {}", started.elapsed().as_secs_f64(), msg.as_ref());
}

fn resolve_config(run: &RunArgs) -> Result<RunConfig> {
    let mut cfg = match &run.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = run.seed {
        cfg.seed = s;
    }
    if let Some(n) = run.n_frames {
        cfg.n_frames = n;
    }
    if let Some(f) = run.train_fraction {
        cfg.train_fraction = f;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn load(path: &Path, split: Split, strict_duration: bool, check_media: bool) -> Result<Manifest> {
    load_manifest_with(
        path,
        split,
        LoadOptions {
            strict_duration,
            check_media,
        },
    )
}

fn write_json(path: &Path, value: &serde_json::Value) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).expect("json value serializes");
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

pub fn synth(n: usize, seed: u64, out: &Path) -> Result<()> {
    let m = write_synthetic_dataset(n, seed, out)?;
    println!("wrote {} records to {}", m.len(), out.join("manifest.jsonl").display());
    Ok(())
}

pub fn preprocess(manifest: &Path, run: &RunArgs, out: &Path) -> Result<()> {
    let started = Instant::now();
    let cfg = resolve_config(run)?;
    let manifest = load(manifest, Split::Test, run.strict_duration, true)?;
    let pre = Preprocessor::new(cfg.preprocess(), Arc::new(RawMediaDecoder));
    fs::create_dir_all(out)?;
    let mut index = String::new();
    for rec in &manifest.records {
        let input = ModelInput::from_preprocessed(pre.process(&manifest, rec)?, cfg.variant)?;
        let dir = out.join(&rec.id);
        fs::create_dir_all(&dir)?;
        let mut frames = Vec::with_capacity(input.keyframes.len());
        for (i, f) in input.keyframes.frames.iter().enumerate() {
            let name = format!("frame_{i:02}.png");
            fs::write(dir.join(&name), encode_png(f)?)?;
            frames.push(json!({"file": format!("{}/{name}", rec.id), "height": f.height, "width": f.width,
                "timestamp_s": input.keyframes.timestamps_s[i]}));
        }
        let spectrogram = match &input.spectrogram {
            Some(s) => {
                let name = "spectrogram.csv";
                let mut text = String::new();
                for row in s.values.rows() {
                    let cells: Vec<String> = row.iter().map(|v| v.to_string()).collect();
                    text.push_str(&cells.join(","));
                    text.push('\n');
                }
                fs::write(dir.join(name), text)?;
                json!({"file": format!("{}/{name}", rec.id), "mel_bins": s.mel_bins, "time_frames": s.time_frames(), "silent": s.silent})
            }
            None => serde_json::Value::Null,
        };
        let line = json!({"id": rec.id, "frames": frames, "spectrogram": spectrogram, "prompt": render_prompt(&input.prompt)});
        index.push_str(&line.to_string());
        index.push('\n');
    }
    fs::write(out.join("index.jsonl"), index)?;
    log(started, format!("preprocessed {} records into {}", manifest.len(), out.display()));
    Ok(())
}

fn build_toy(cfg: &RunConfig) -> Result<ToyModel> {
    let mut backbone = ToyBackbone::new(cfg.toy(), cfg.seed)?;
    if let Some(id) = &cfg.model_id {
        backbone.set_model_id(id.clone());
    }
    ToyModel::new(backbone, cfg.strategy, cfg.variant, cfg.dropout, cfg.seed)
}

pub fn train(manifest: &Path, run: &RunArgs, out: Option<&Path>) -> Result<()> {
    let started = Instant::now();
    let cfg = resolve_config(run)?;
    if cfg.backbone == BackboneKind::Remote {
        return Err(Error::validation("backbone", "remote backbones are inference-only; train with backbone = \"toy\""));
    }
    let mut model = build_toy(&cfg)?;
    let tcfg = cfg.train();
    tcfg.validate(&model.trainable_groups(&tcfg))?;

    let full = load(manifest, Split::Train, run.strict_duration, true)?;
    full.ensure_labeled()?;
    let subset = full.subset_fraction(cfg.train_fraction, cfg.seed)?;
    log(
        started,
        format!("training {} on {}/{} records ({} strategy)", model.model_id(), subset.len(), full.len(), cfg.strategy),
    );

    let pre = Preprocessor::new(cfg.preprocess(), Arc::new(RawMediaDecoder));
    let report = train_manifest(&mut model, &pre, &subset, &tcfg)?;

    let out = out.map(Path::to_path_buf).unwrap_or_else(|| cfg.output_dir.clone());
    fs::create_dir_all(&out)?;
    save_checkpoint(&out.join("model.ckpt"), &model, &pre.config)?;
    write_loss_curve(&out.join("loss.csv"), &report.losses)?;
    write_json(
        &out.join("train_report.json"),
        &json!({
            "model_id": model.model_id(),
            "strategy": cfg.strategy,
            "variant": cfg.variant,
            "split_records": full.len(),
            "train_fraction": cfg.train_fraction,
            "samples": report.samples,
            "epochs": report.epochs,
            "steps": report.steps(),
            "final_loss": report.final_loss(),
        }),
    )?;
    fs::write(out.join("config.toml"), toml::to_string(&cfg).expect("config serializes"))?;
    match report.final_loss() {
        Some(l) => log(started, format!("{} steps, final loss {l:.6}; wrote {}", report.steps(), out.display())),
        None => log(started, format!("no optimizer steps taken; wrote {}", out.display())),
    }
    Ok(())
}

pub fn predict(checkpoint: Option<&Path>, run: &RunArgs, manifest: &Path, out: &Path, skip_errors: bool) -> Result<()> {
    let started = Instant::now();
    let cfg = match &run.config {
        Some(_) => Some(resolve_config(run)?),
        None => None,
    };
    let trained = checkpoint.map(load_checkpoint).transpose()?;
    let remote_cfg = cfg.as_ref().filter(|c| c.backbone == BackboneKind::Remote);
    // Media is checked per record, so a missing file is a data error that
    // either aborts or, with --skip-errors, gets the fallback score.
    let manifest = load(manifest, Split::Test, run.strict_duration, false)?;

    let run_out = match (remote_cfg, &trained) {
        (Some(cfg), trained) => {
            let endpoint = cfg.endpoint.as_deref().expect("validated");
            let model_id = cfg.model_id.clone().unwrap_or_else(|| "remote".into());
            let mut remote = RemoteBackbone::new(endpoint, &model_id, cfg.timeout_s)?;
            if cfg.remote_dim > 0 {
                remote = remote.with_dim(cfg.remote_dim);
            }
            if cfg.variant.uses_audio() && !remote.capabilities().audio {
                return Err(Error::validation("variant", "audio_visual requires a backbone with audio capability"));
            }
            let pre_cfg = trained.as_ref().map(|(_, p)| *p).unwrap_or_else(|| cfg.preprocess());
            let predictor = match cfg.strategy {
                Strategy::TokenBased => Predictor::token_based(&remote, Default::default()),
                Strategy::FeatureBased => {
                    let head = trained.as_ref().and_then(|(m, _)| m.head.as_ref()).ok_or_else(|| {
                        Error::validation("checkpoint", "feature-based prediction over a remote backbone needs a checkpoint with a trained head")
                    })?;
                    Predictor::feature_based(&remote, head)
                }
            }
            .with_model_id(model_id.clone());
            let pre = Preprocessor::new(pre_cfg, Arc::new(RawMediaDecoder));
            let r = predict_manifest(&predictor, &pre, &manifest, cfg.variant, skip_errors)?;
            (r, predictor.warnings())
        }
        (None, Some((model, pre_cfg))) => {
            let mut pre_cfg = *pre_cfg;
            if let Some(n) = run.n_frames {
                pre_cfg.n_frames = n;
            }
            let predictor = model.predictor();
            let pre = Preprocessor::new(pre_cfg, Arc::new(RawMediaDecoder));
            let r = predict_manifest(&predictor, &pre, &manifest, model.variant, skip_errors)?;
            (r, predictor.warnings())
        }
        (None, None) => {
            return Err(Error::Argument("predict needs --checkpoint, or --config with backbone = \"remote\"".into()));
        }
    };
    let (result, warnings) = run_out;
    for (id, reason) in &result.skipped {
        eprintln!("warning: {id}: {reason}; wrote fallback score");
    }
    if let Some(parent) = out.parent() {
        fs::create_dir_all(parent)?;
    }
    write_predictions(out, &result.records)?;
    log(
        started,
        format!("wrote {} predictions to {} ({warnings} fallback)", result.records.len(), out.display()),
    );
    Ok(())
}

pub fn eval(predictions: &Path, manifest: &Path, out: Option<&Path>) -> Result<()> {
    let manifest = load(manifest, Split::Test, false, false)?;
    let report = evaluate_records(&read_predictions(predictions)?, &manifest)?;
    print!("{}", report.to_table());
    if let Some(out) = out {
        report.write(out)?;
    }
    Ok(())
}

pub fn ensemble(spec: Option<&Path>, inputs: Vec<PathBuf>, out: &Path, manifest: Option<&Path>, report: Option<&Path>) -> Result<()> {
    let spec = match spec {
        Some(p) => EnsembleSpec::load(p)?,
        None => EnsembleSpec::uniform(inputs),
    };
    let members: Vec<(Vec<PredictionRecord>, f64)> = spec
        .members
        .iter()
        .map(|m| Ok((read_predictions(&m.path)?, m.weight)))
        .collect::<Result<_>>()?;
    let combined = ensemble_sets(&members, &spec)?;
    write_predictions(out, &combined)?;
    eprintln!("wrote {} ensembled predictions to {}", combined.len(), out.display());

    if let Some(manifest) = manifest {
        let manifest = load(manifest, Split::Test, false, false)?;
        let mut per_model = BTreeMap::new();
        for (i, (m, (recs, _))) in spec.members.iter().zip(&members).enumerate() {
            let r = evaluate_records(recs, &manifest)?;
            let mut name = recs.first().map(|x| x.model_id.clone()).unwrap_or_else(|| m.path.display().to_string());
            if per_model.contains_key(&name) {
                name = format!("{name}#{i}");
            }
            per_model.insert(name, r.metrics);
        }
        let mut ens = evaluate_records(&combined, &manifest)?;
        ens.per_model = Some(per_model);
        print!("{}", ens.to_table());
        if let Some(path) = report {
            ens.write(path)?;
        }
    }
    Ok(())
}

pub fn stub_server(addr: &str, reply: &str, hidden_dim: usize) -> Result<()> {
    let reply = match reply {
        "brightness" => StubReply::MeanBrightness,
        text => StubReply::Fixed(text.to_string()),
    };
    let server = StubServer::bind(
        addr,
        StubConfig {
            reply,
            hidden_dim,
            fault: None,
        },
    )?;
    println!("{}", server.url());
    server.wait();
    Ok(())
}
