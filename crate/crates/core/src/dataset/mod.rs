//! Video manifests: JSON-lines records, validation, and split handling.

mod synthetic;

use std::collections::HashSet;
use std::fmt;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use synthetic::{
    label_from_media, make_synthetic_manifest, synthetic_media, write_synthetic_dataset,
    SyntheticParams, LABEL_AUDIO_WEIGHT, LABEL_BIAS, LABEL_RMS_SCALE, LABEL_VISUAL_WEIGHT,
    LABEL_WINDOW_S,
};

/// Duration bounds enforced by strict mode, in seconds.
pub const STRICT_MIN_DURATION_S: f64 = 5.0;
pub const STRICT_MAX_DURATION_S: f64 = 60.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VideoRecord {
    pub id: String,
    pub video_path: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub audio_path: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub title: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub description: Option<String>,
    pub duration_s: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ecr: Option<f64>,
}

impl VideoRecord {
    /// Checks the per-record invariants that do not depend on the filesystem.
    pub fn validate(&self, strict_duration: bool) -> Result<()> {
        if self.id.is_empty() {
            return Err(Error::validation("id", "must not be empty"));
        }
        if !(self.duration_s.is_finite() && self.duration_s > 0.0) {
            return Err(Error::validation(
                "duration_s",
                format!("{}: must be a positive number of seconds", self.id),
            ));
        }
        if strict_duration
            && !(STRICT_MIN_DURATION_S..=STRICT_MAX_DURATION_S).contains(&self.duration_s)
        {
            return Err(Error::validation(
                "duration_s",
                format!(
                    "{}: {} s outside strict range [{STRICT_MIN_DURATION_S}, {STRICT_MAX_DURATION_S}]",
                    self.id, self.duration_s
                ),
            ));
        }
        if let Some(ecr) = self.ecr {
            if !(0.0..=1.0).contains(&ecr) {
                return Err(Error::validation(
                    "ecr",
                    format!("{}: {ecr} outside [0, 1]", self.id),
                ));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        })
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(Error::Argument(format!("unknown split {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ManifestSource {
    File(PathBuf),
    Synthetic,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Manifest {
    pub records: Vec<VideoRecord>,
    pub split: Split,
    pub source: ManifestSource,
}

#[derive(Debug, Clone, Copy)]
pub struct LoadOptions {
    pub strict_duration: bool,
    /// Require every referenced media file to exist.
    pub check_media: bool,
}

impl Default for LoadOptions {
    fn default() -> Self {
        LoadOptions {
            strict_duration: false,
            check_media: true,
        }
    }
}

pub fn load_manifest(path: &Path, split: Split, strict: bool) -> Result<Manifest> {
    load_manifest_with(
        path,
        split,
        LoadOptions {
            strict_duration: strict,
            ..LoadOptions::default()
        },
    )
}

pub fn load_manifest_with(path: &Path, split: Split, opts: LoadOptions) -> Result<Manifest> {
    let file = fs::File::open(path)?;
    let mut records = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let record: VideoRecord = serde_json::from_str(&line).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            message: e.to_string(),
        })?;
        records.push(record);
    }
    let manifest = Manifest {
        records,
        split,
        source: ManifestSource::File(path.to_path_buf()),
    };
    manifest.validate(opts)?;
    Ok(manifest)
}

impl Manifest {
    pub fn new(records: Vec<VideoRecord>, split: Split, source: ManifestSource) -> Self {
        Manifest {
            records,
            split,
            source,
        }
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn validate(&self, opts: LoadOptions) -> Result<()> {
        let mut seen = HashSet::with_capacity(self.records.len());
        for r in &self.records {
            r.validate(opts.strict_duration)?;
            if !seen.insert(r.id.as_str()) {
                return Err(Error::validation("id", format!("duplicate id {:?}", r.id)));
            }
        }
        if opts.check_media && self.source != ManifestSource::Synthetic {
            for r in &self.records {
                let video = self.resolve(&r.video_path);
                if !video.exists() {
                    return Err(Error::validation(
                        "video_path",
                        format!("{}: {} does not exist", r.id, video.display()),
                    ));
                }
                if let Some(audio) = &r.audio_path {
                    let audio = self.resolve(audio);
                    if !audio.exists() {
                        return Err(Error::validation(
                            "audio_path",
                            format!("{}: {} does not exist", r.id, audio.display()),
                        ));
                    }
                }
            }
        }
        Ok(())
    }

    /// Directory relative media paths are resolved against.
    pub fn base_dir(&self) -> Option<&Path> {
        match &self.source {
            ManifestSource::File(p) => p.parent(),
            ManifestSource::Synthetic => None,
        }
    }

    pub fn resolve(&self, media: &Path) -> PathBuf {
        match self.base_dir() {
            Some(base) if media.is_relative() => base.join(media),
            _ => media.to_path_buf(),
        }
    }

    pub fn ensure_labeled(&self) -> Result<()> {
        match self.records.iter().find(|r| r.ecr.is_none()) {
            Some(r) => Err(Error::validation(
                "ecr",
                format!("record {:?} is unlabeled", r.id),
            )),
            None => Ok(()),
        }
    }

    pub fn labels(&self) -> Result<Vec<f64>> {
        self.ensure_labeled()?;
        Ok(self.records.iter().filter_map(|r| r.ecr).collect())
    }

    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for r in &self.records {
            out.push_str(&serde_json::to_string(r).expect("records serialize"));
            out.push('\n');
        }
        out
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut f = fs::File::create(path)?;
        f.write_all(self.to_jsonl().as_bytes())?;
        Ok(())
    }

    /// Split into the first `k` records and the rest, sharing the source.
    pub fn split_at(&self, k: usize, first: Split, rest: Split) -> (Manifest, Manifest) {
        let k = k.min(self.records.len());
        (
            Manifest::new(self.records[..k].to_vec(), first, self.source.clone()),
            Manifest::new(self.records[k..].to_vec(), rest, self.source.clone()),
        )
    }

    /// Seeded prefix of the shuffled records; keeps at least one record.
    /// Selected records keep their file order.
    pub fn subset_fraction(&self, fraction: f64, seed: u64) -> Result<Manifest> {
        if !(fraction > 0.0 && fraction <= 1.0) {
            return Err(Error::Argument(format!(
                "train fraction {fraction} must be in (0, 1]"
            )));
        }
        let n = self.records.len();
        let keep = ((fraction * n as f64).round() as usize).clamp(1.min(n), n);
        let mut idx: Vec<usize> = (0..n).collect();
        idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let mut chosen = idx[..keep].to_vec();
        chosen.sort_unstable();
        Ok(Manifest::new(
            chosen.into_iter().map(|i| self.records[i].clone()).collect(),
            self.split,
            self.source.clone(),
        ))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write_lines(dir: &Path, lines: &[&str]) -> PathBuf {
        let p = dir.join("m.jsonl");
        fs::write(&p, lines.join("\n")).unwrap();
        p
    }

    fn opts_no_media() -> LoadOptions {
        LoadOptions {
            strict_duration: false,
            check_media: false,
        }
    }

    #[test]
    fn loads_minimal_record() {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join("a.mp4"), b"").unwrap();
        let p = write_lines(
            dir.path(),
            &[r#"{"id":"v1","video_path":"a.mp4","duration_s":12.0,"ecr":0.5}"#],
        );
        let m = load_manifest(&p, Split::Train, false).unwrap();
        assert_eq!(m.len(), 1);
        assert_eq!(m.records[0].ecr, Some(0.5));
        assert_eq!(m.records[0].title, None);
        assert_eq!(m.resolve(&m.records[0].video_path), dir.path().join("a.mp4"));
    }

    #[test]
    fn ecr_out_of_range_names_field() {
        let dir = tempfile::tempdir().unwrap();
        let p = write_lines(
            dir.path(),
            &[r#"{"id":"v1","video_path":"a.mp4","duration_s":12.0,"ecr":1.2}"#],
        );
        let err = load_manifest_with(&p, Split::Train, opts_no_media()).unwrap_err();
        assert!(matches!(&err, Error::Validation { field, .. } if field == "ecr"), "{err}");
    }

    #[test]
    fn duplicate_id_is_reported() {
        let dir = tempfile::tempdir().unwrap();
        let p = write_lines(
            dir.path(),
            &[
                r#"{"id":"v1","video_path":"a","duration_s":6.0}"#,
                r#"{"id":"v2","video_path":"b","duration_s":6.0}"#,
                r#"{"id":"v1","video_path":"c","duration_s":6.0}"#,
            ],
        );
        let err = load_manifest_with(&p, Split::Test, opts_no_media()).unwrap_err();
        assert!(err.to_string().contains("\"v1\""), "{err}");
    }

    #[test]
    fn malformed_line_reports_line_number() {
        let dir = tempfile::tempdir().unwrap();
        let p = write_lines(
            dir.path(),
            &[r#"{"id":"v1","video_path":"a","duration_s":6.0}"#, "{not json"],
        );
        match load_manifest_with(&p, Split::Train, opts_no_media()) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn strict_duration_only_when_requested() {
        let dir = tempfile::tempdir().unwrap();
        let p = write_lines(dir.path(), &[r#"{"id":"v1","video_path":"a","duration_s":3.0}"#]);
        assert!(load_manifest_with(&p, Split::Train, opts_no_media()).is_ok());
        let err = load_manifest_with(
            &p,
            Split::Train,
            LoadOptions {
                strict_duration: true,
                check_media: false,
            },
        )
        .unwrap_err();
        assert!(matches!(&err, Error::Validation { field, .. } if field == "duration_s"));
    }

    #[test]
    fn missing_media_fails_validation() {
        let dir = tempfile::tempdir().unwrap();
        let p = write_lines(dir.path(), &[r#"{"id":"v1","video_path":"gone.rvid","duration_s":6.0}"#]);
        let err = load_manifest(&p, Split::Train, false).unwrap_err();
        assert!(matches!(&err, Error::Validation { field, .. } if field == "video_path"));
    }

    #[test]
    fn subset_fraction_counts() {
        let records = (0..10)
            .map(|i| VideoRecord {
                id: format!("v{i}"),
                video_path: "x".into(),
                audio_path: None,
                title: None,
                description: None,
                duration_s: 6.0,
                ecr: Some(0.5),
            })
            .collect();
        let m = Manifest::new(records, Split::Train, ManifestSource::Synthetic);
        assert_eq!(m.subset_fraction(0.6, 3).unwrap().len(), 6);
        assert_eq!(m.subset_fraction(1.0, 3).unwrap().len(), 10);
        assert_eq!(m.subset_fraction(0.01, 3).unwrap().len(), 1);
        assert_eq!(m.subset_fraction(0.6, 3).unwrap(), m.subset_fraction(0.6, 3).unwrap());
        assert!(m.subset_fraction(0.0, 3).is_err());
    }
}
