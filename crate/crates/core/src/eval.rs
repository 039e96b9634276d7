//! SROCC / PLCC / final score, ensembling, and metric reports.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::dataset::Manifest;
use crate::error::{Error, Result};
use crate::regression::{read_predictions, PredictionRecord};

pub const SROCC_WEIGHT: f64 = 0.6;
pub const PLCC_WEIGHT: f64 = 0.4;

/// A correlation value and whether it was forced to 0 by constant predictions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Correlation {
    pub value: f64,
    pub degenerate: bool,
}

fn check_inputs(pred: &[f64], label: &[f64]) -> Result<()> {
    if pred.len() != label.len() {
        return Err(Error::Shape(format!("{} predictions vs {} labels", pred.len(), label.len())));
    }
    if pred.len() < 2 {
        return Err(Error::UndefinedMetric(format!("correlation needs n >= 2, got {}", pred.len())));
    }
    if pred.iter().chain(label).any(|v| !v.is_finite()) {
        return Err(Error::UndefinedMetric("non-finite value".into()));
    }
    Ok(())
}

fn is_constant(v: &[f64]) -> bool {
    v.iter().all(|&a| a == v[0])
}

fn pearson_raw(x: &[f64], y: &[f64]) -> Result<Correlation> {
    // Checked on the values: the float mean of a constant vector need not
    // equal its elements, which would leave tiny nonzero deviations.
    if is_constant(y) {
        return Err(Error::UndefinedMetric("labels are constant".into()));
    }
    if is_constant(x) {
        return Ok(Correlation {
            value: 0.0,
            degenerate: true,
        });
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if syy == 0.0 {
        return Err(Error::UndefinedMetric("label variance underflows".into()));
    }
    if sxx == 0.0 {
        return Ok(Correlation {
            value: 0.0,
            degenerate: true,
        });
    }
    Ok(Correlation {
        value: (sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0),
        degenerate: false,
    })
}

/// 1-based ranks; tied values share the mean of the ranks they span.
pub fn average_ranks(v: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut ranks = vec![0.0; v.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i + 1;
        while j < idx.len() && v[idx[j]] == v[idx[i]] {
            j += 1;
        }
        let r = (i + j + 1) as f64 / 2.0;
        for &k in &idx[i..j] {
            ranks[k] = r;
        }
        i = j;
    }
    ranks
}

pub fn srocc_detailed(pred: &[f64], label: &[f64]) -> Result<Correlation> {
    check_inputs(pred, label)?;
    pearson_raw(&average_ranks(pred), &average_ranks(label))
}

pub fn plcc_detailed(pred: &[f64], label: &[f64]) -> Result<Correlation> {
    check_inputs(pred, label)?;
    pearson_raw(pred, label)
}

/// Spearman rank correlation with average ranks for ties.
pub fn srocc(pred: &[f64], label: &[f64]) -> Result<f64> {
    srocc_detailed(pred, label).map(|c| c.value)
}

/// Sample Pearson correlation, no nonlinear fitting.
pub fn plcc(pred: &[f64], label: &[f64]) -> Result<f64> {
    plcc_detailed(pred, label).map(|c| c.value)
}

pub fn final_score(srocc: f64, plcc: f64) -> f64 {
    SROCC_WEIGHT * srocc + PLCC_WEIGHT * plcc
}

pub fn round3(x: f64) -> f64 {
    (x * 1000.0).round() / 1000.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub srocc: f64,
    pub plcc: f64,
    pub final_score: f64,
    pub n: usize,
    /// Predictions were constant; correlations reported as 0.
    #[serde(default)]
    pub degenerate: bool,
}

impl Metrics {
    pub fn compute(pred: &[f64], label: &[f64]) -> Result<Self> {
        let s = srocc_detailed(pred, label)?;
        let p = plcc_detailed(pred, label)?;
        Ok(Metrics {
            srocc: s.value,
            plcc: p.value,
            final_score: final_score(s.value, p.value),
            n: pred.len(),
            degenerate: s.degenerate || p.degenerate,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub model_id: String,
    #[serde(flatten)]
    pub metrics: Metrics,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub per_model: Option<BTreeMap<String, Metrics>>,
}

impl MetricsReport {
    pub fn srocc(&self) -> f64 {
        self.metrics.srocc
    }

    pub fn plcc(&self) -> f64 {
        self.metrics.plcc
    }

    pub fn final_score(&self) -> f64 {
        self.metrics.final_score
    }

    /// Full-precision machine-readable form.
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// Aligned table, values rounded to 3 decimals.
    pub fn to_table(&self) -> String {
        let mut rows: Vec<(&str, &Metrics)> = Vec::new();
        if let Some(pm) = &self.per_model {
            rows.extend(pm.iter().map(|(k, v)| (k.as_str(), v)));
        }
        rows.push((&self.model_id, &self.metrics));
        metrics_table(&rows)
    }

    pub fn write(&self, json_path: &Path) -> Result<()> {
        std::fs::write(json_path, self.to_json() + "\n")?;
        Ok(())
    }
}

pub fn metrics_table(rows: &[(&str, &Metrics)]) -> String {
    let w = rows.iter().map(|(n, _)| n.len()).max().unwrap_or(0).max("model".len());
    let mut out = format!("{:<w$}  {:>6}  {:>6}  {:>6}  {:>6}\n", "model", "SROCC", "PLCC", "Final", "n");
    for (name, m) in rows {
        let _ = writeln!(
            out,
            "{name:<w$}  {:>6.3}  {:>6.3}  {:>6.3}  {:>6}{}",
            round3(m.srocc),
            round3(m.plcc),
            round3(m.final_score),
            m.n,
            if m.degenerate { "  (degenerate)" } else { "" }
        );
    }
    out
}

fn index_by_id(preds: &[PredictionRecord]) -> Result<HashMap<&str, f64>> {
    let mut map = HashMap::with_capacity(preds.len());
    for p in preds {
        if map.insert(p.video_id.as_str(), p.score).is_some() {
            return Err(Error::validation("video_id", format!("duplicate prediction for {}", p.video_id)));
        }
    }
    Ok(map)
}

/// Joins predictions to the labeled manifest records by id.
pub fn evaluate_records(preds: &[PredictionRecord], manifest: &Manifest) -> Result<MetricsReport> {
    let by_id = index_by_id(preds)?;
    let mut p = Vec::new();
    let mut y = Vec::new();
    let mut missing = Vec::new();
    for r in &manifest.records {
        let Some(label) = r.ecr else { continue };
        match by_id.get(r.id.as_str()) {
            Some(&s) => {
                p.push(s);
                y.push(label);
            }
            None => missing.push(r.id.clone()),
        }
    }
    if !missing.is_empty() {
        return Err(Error::Coverage { missing });
    }
    let ids: BTreeSet<&str> = preds.iter().map(|p| p.model_id.as_str()).collect();
    let model_id = match ids.len() {
        1 => ids.into_iter().next().unwrap().to_string(),
        0 => String::new(),
        _ => "mixed".to_string(),
    };
    Ok(MetricsReport {
        model_id,
        metrics: Metrics::compute(&p, &y)?,
        per_model: None,
    })
}

pub fn evaluate(pred_file: &Path, manifest: &Manifest) -> Result<MetricsReport> {
    evaluate_records(&read_predictions(pred_file)?, manifest)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnsembleMember {
    pub path: PathBuf,
    #[serde(default = "unit_weight")]
    pub weight: f64,
}

fn unit_weight() -> f64 {
    1.0
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnsembleSpec {
    pub members: Vec<EnsembleMember>,
    /// Rescale weights to sum to 1.
    #[serde(default = "yes")]
    pub normalize: bool,
    /// Average per-member normalized ranks instead of scores.
    #[serde(default)]
    pub rank_average: bool,
    #[serde(default = "ensemble_id")]
    pub model_id: String,
}

fn ensemble_id() -> String {
    "ensemble".into()
}

impl EnsembleSpec {
    pub fn uniform(paths: impl IntoIterator<Item = PathBuf>) -> Self {
        EnsembleSpec {
            members: paths.into_iter().map(|path| EnsembleMember { path, weight: 1.0 }).collect(),
            normalize: true,
            rank_average: false,
            model_id: ensemble_id(),
        }
    }

    /// Reads JSON; relative member paths resolve against the spec file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let mut spec: EnsembleSpec = serde_json::from_str(&text).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: e.line(),
            message: e.to_string(),
        })?;
        let base = path.parent().unwrap_or(Path::new("."));
        for m in &mut spec.members {
            if m.path.is_relative() {
                m.path = base.join(&m.path);
            }
        }
        Ok(spec)
    }

    fn check_weights(&self, weights: &[f64]) -> Result<()> {
        if weights.is_empty() {
            return Err(Error::validation("members", "ensemble needs at least one member"));
        }
        if let Some(w) = weights.iter().find(|w| !(w.is_finite() && **w >= 0.0)) {
            return Err(Error::Argument(format!("ensemble weight {w} must be finite and >= 0")));
        }
        if weights.iter().all(|&w| w == 0.0) {
            return Err(Error::validation("weights", "all ensemble weights are zero"));
        }
        Ok(())
    }
}

fn normalized_ranks(scores: &[f64]) -> Vec<f64> {
    let n = scores.len();
    if n < 2 {
        return vec![0.5; n];
    }
    average_ranks(scores).into_iter().map(|r| (r - 1.0) / (n - 1) as f64).collect()
}

/// Weighted per-video combination of in-memory prediction sets (order of the first member).
pub fn ensemble_sets(members: &[(Vec<PredictionRecord>, f64)], spec: &EnsembleSpec) -> Result<Vec<PredictionRecord>> {
    let weights: Vec<f64> = members.iter().map(|(_, w)| *w).collect();
    spec.check_weights(&weights)?;
    let indexed = members
        .iter()
        .map(|(p, _)| index_by_id(p))
        .collect::<Result<Vec<_>>>()?;
    let reference: BTreeSet<&str> = indexed[0].keys().copied().collect();
    let mut missing = BTreeSet::new();
    for idx in &indexed[1..] {
        let ids: BTreeSet<&str> = idx.keys().copied().collect();
        missing.extend(reference.symmetric_difference(&ids).map(|s| s.to_string()));
    }
    if !missing.is_empty() {
        return Err(Error::Coverage {
            missing: missing.into_iter().collect(),
        });
    }
    let order: Vec<&str> = members[0].0.iter().map(|p| p.video_id.as_str()).collect();
    let columns: Vec<Vec<f64>> = indexed
        .iter()
        .map(|idx| {
            let col: Vec<f64> = order.iter().map(|id| idx[id]).collect();
            if spec.rank_average {
                normalized_ranks(&col)
            } else {
                col
            }
        })
        .collect();
    let total: f64 = weights.iter().sum();
    let norm = if spec.normalize { total } else { 1.0 };
    order
        .iter()
        .enumerate()
        .map(|(i, id)| {
            let s: f64 = columns.iter().zip(&weights).map(|(c, w)| w * c[i]).sum::<f64>() / norm;
            PredictionRecord::new(*id, s, spec.model_id.clone())
        })
        .collect()
}

pub fn ensemble(spec: &EnsembleSpec) -> Result<Vec<PredictionRecord>> {
    let members = spec
        .members
        .iter()
        .map(|m| Ok((read_predictions(&m.path)?, m.weight)))
        .collect::<Result<Vec<_>>>()?;
    ensemble_sets(&members, spec)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{ManifestSource, Split, VideoRecord};

    fn brute_pearson(x: &[f64], y: &[f64]) -> f64 {
        let n = x.len() as f64;
        let (mut sx, mut sy) = (0.0, 0.0);
        for i in 0..x.len() {
            sx += x[i];
            sy += y[i];
        }
        let (mx, my) = (sx / n, sy / n);
        let (mut c, mut vx, mut vy) = (0.0, 0.0, 0.0);
        for i in 0..x.len() {
            c += (x[i] - mx) * (y[i] - my);
            vx += (x[i] - mx).powi(2);
            vy += (y[i] - my).powi(2);
        }
        c / (vx * vy).sqrt()
    }

    #[test]
    fn final_score_matches_reported_rows() {
        assert_eq!(round3(final_score(0.691, 0.701)), 0.695);
        assert_eq!(round3(final_score(0.707, 0.714)), 0.710);
        assert_eq!(final_score(1.0, 1.0), 1.0);
    }

    #[test]
    fn srocc_examples() {
        let label = [1.0, 2.0, 3.0, 4.0];
        assert!((srocc(&[10.0, 20.0, 30.0, 40.0], &label).unwrap() - 1.0).abs() < 1e-12);
        assert!((srocc(&[4.0, 3.0, 2.0, 1.0], &label).unwrap() + 1.0).abs() < 1e-12);
        // 1 − 6·2 / (4·15) = 0.8
        assert!((srocc(&[1.0, 3.0, 2.0, 4.0], &label).unwrap() - 0.8).abs() < 1e-12);
    }

    #[test]
    fn ranks_average_ties() {
        assert_eq!(average_ranks(&[3.0, 1.0, 3.0, 2.0]), vec![3.5, 1.0, 3.5, 2.0]);
    }

    #[test]
    fn degenerate_and_undefined() {
        assert!(matches!(srocc(&[1.0], &[1.0]), Err(Error::UndefinedMetric(_))));
        assert!(matches!(srocc(&[1.0, 2.0], &[3.0, 3.0]), Err(Error::UndefinedMetric(_))));
        let c = srocc_detailed(&[0.5, 0.5, 0.5], &[0.1, 0.2, 0.3]).unwrap();
        assert_eq!(c, Correlation { value: 0.0, degenerate: true });
        assert!(plcc_detailed(&[0.5, 0.5], &[0.1, 0.2]).unwrap().degenerate);
        assert!(matches!(plcc(&[1.0, 2.0, 3.0], &[1.0, 2.0]), Err(Error::Shape(_))));
    }

    #[test]
    fn constant_with_inexact_mean_is_degenerate() {
        // 0.1 * 3 / 3 != 0.1 in binary floating point.
        let label = [0.2, 0.9, 0.4];
        assert_eq!(plcc_detailed(&[0.1; 3], &label).unwrap(), Correlation { value: 0.0, degenerate: true });
        let m = Metrics::compute(&[0.7; 5], &[0.3, 0.1, 0.8, 0.5, 0.6]).unwrap();
        assert_eq!(m.final_score.to_bits(), 0.0f64.to_bits());
        assert!(matches!(plcc(&label, &[0.1; 3]), Err(Error::UndefinedMetric(_))));
    }

    #[test]
    fn plcc_examples() {
        let label = [0.1, 0.5, 0.2, 0.9, 0.4, 0.7];
        let affine: Vec<f64> = label.iter().map(|v| 2.0 * v + 3.0).collect();
        assert!((plcc(&affine, &label).unwrap() - 1.0).abs() < 1e-12);
        let neg: Vec<f64> = label.iter().map(|v| -v).collect();
        assert!((plcc(&neg, &label).unwrap() + 1.0).abs() < 1e-12);
        let pred = [0.3, 0.4, 0.1, 0.8, 0.6, 0.5];
        assert!((plcc(&pred, &label).unwrap() - brute_pearson(&pred, &label)).abs() < 1e-9);
    }

    fn rec(id: &str, s: f64) -> PredictionRecord {
        PredictionRecord::new(id, s, "m").unwrap()
    }

    #[test]
    fn ensemble_examples() {
        let spec = EnsembleSpec::uniform([]);
        let a = vec![rec("v1", 0.4), rec("v2", 0.4)];
        let b = vec![rec("v2", 0.6), rec("v1", 0.6)];
        let out = ensemble_sets(&[(a.clone(), 1.0), (b, 1.0)], &spec).unwrap();
        assert!(out.iter().all(|p| (p.score - 0.5).abs() < 1e-12));
        let single = ensemble_sets(&[(a.clone(), 1.0)], &spec).unwrap();
        assert_eq!(single.iter().map(|p| p.score).collect::<Vec<_>>(), vec![0.4, 0.4]);
    }

    #[test]
    fn ensemble_weighted_hand_computed() {
        let ids = ["a", "b", "c", "d", "e"];
        let m1 = [0.1, 0.2, 0.3, 0.4, 0.5];
        let m2 = [0.5, 0.5, 0.5, 0.5, 0.5];
        let m3 = [0.9, 0.0, 0.6, 0.2, 1.0];
        let set = |v: &[f64]| ids.iter().zip(v).map(|(i, s)| rec(i, *s)).collect::<Vec<_>>();
        let out = ensemble_sets(&[(set(&m1), 1.0), (set(&m2), 1.0), (set(&m3), 2.0)], &EnsembleSpec::uniform([])).unwrap();
        // (m1 + m2 + 2·m3) / 4
        let expected = [0.6, 0.175, 0.5, 0.325, 0.75];
        for (p, e) in out.iter().zip(expected) {
            assert!((p.score - e).abs() < 1e-12, "{} vs {e}", p.score);
        }
    }

    #[test]
    fn ensemble_errors() {
        let spec = EnsembleSpec::uniform([]);
        let a = vec![rec("v1", 0.4), rec("v2", 0.4)];
        let b = vec![rec("v1", 0.6), rec("v3", 0.6)];
        match ensemble_sets(&[(a.clone(), 1.0), (b, 1.0)], &spec) {
            Err(Error::Coverage { missing }) => assert_eq!(missing, vec!["v2", "v3"]),
            other => panic!("{other:?}"),
        }
        assert!(matches!(ensemble_sets(&[(a.clone(), -1.0)], &spec), Err(Error::Argument(_))));
        assert!(matches!(ensemble_sets(&[(a.clone(), 0.0)], &spec), Err(Error::Validation { .. })));
        assert!(ensemble_sets(&[], &spec).is_err());
        let dup = vec![rec("v1", 0.4), rec("v1", 0.5)];
        assert!(matches!(ensemble_sets(&[(dup, 1.0)], &spec), Err(Error::Validation { .. })));
    }

    #[test]
    fn rank_average_flag() {
        let spec = EnsembleSpec {
            rank_average: true,
            ..EnsembleSpec::uniform([])
        };
        let a = vec![rec("v1", 0.1), rec("v2", 0.2), rec("v3", 0.9)];
        let out = ensemble_sets(&[(a, 1.0)], &spec).unwrap();
        assert_eq!(out.iter().map(|p| p.score).collect::<Vec<_>>(), vec![0.0, 0.5, 1.0]);
    }

    fn manifest(labels: &[f64]) -> Manifest {
        let records = labels
            .iter()
            .enumerate()
            .map(|(i, &y)| VideoRecord {
                id: format!("v{i}"),
                video_path: "x.rvid".into(),
                audio_path: None,
                title: None,
                description: None,
                duration_s: 10.0,
                ecr: Some(y),
            })
            .collect();
        Manifest::new(records, Split::Test, ManifestSource::Synthetic)
    }

    #[test]
    fn evaluate_perfect_and_antitone() {
        let labels = [0.2, 0.5, 0.9, 0.1];
        let m = manifest(&labels);
        let perfect: Vec<_> = labels.iter().enumerate().map(|(i, &y)| rec(&format!("v{i}"), y)).collect();
        let r = evaluate_records(&perfect, &m).unwrap();
        assert!((r.final_score() - 1.0).abs() < 1e-12 && r.metrics.n == 4);
        let anti: Vec<_> = labels.iter().enumerate().map(|(i, &y)| rec(&format!("v{i}"), 1.0 - y)).collect();
        let r = evaluate_records(&anti, &m).unwrap();
        assert!((r.srocc() + 1.0).abs() < 1e-12 && (r.plcc() + 1.0).abs() < 1e-12);
        assert!(r.to_table().contains("-1.000"));
        let json: serde_json::Value = serde_json::from_str(&r.to_json()).unwrap();
        for k in ["srocc", "plcc", "final_score", "n"] {
            assert!(json.get(k).is_some(), "{k}");
        }
    }

    #[test]
    fn evaluate_coverage_and_duplicates() {
        let m = manifest(&[0.2, 0.5, 0.9]);
        let partial = vec![rec("v0", 0.1), rec("v1", 0.2)];
        assert!(matches!(evaluate_records(&partial, &m), Err(Error::Coverage { missing }) if missing == vec!["v2"]));
        let dup = vec![rec("v0", 0.1), rec("v1", 0.2), rec("v2", 0.3), rec("v0", 0.3)];
        assert!(matches!(evaluate_records(&dup, &m), Err(Error::Validation { .. })));
    }
}
