//! Scoring predicted intervals against ground truth.
//!
//! Counts follow the per-test convention: a test without ground-truth events
//! and without predictions contributes one true negative.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mapback::EventInterval;

pub const DEFAULT_OVERLAP_THRESHOLD: f64 = 0.3;

/// Reference event intervals for one test recording.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GroundTruth {
    pub source_id: String,
    pub intervals: Vec<[f64; 2]>,
}

impl GroundTruth {
    pub fn new(source_id: impl Into<String>, intervals: Vec<[f64; 2]>) -> Result<Self> {
        let gt = Self { source_id: source_id.into(), intervals };
        gt.validate()?;
        Ok(gt)
    }

    pub fn validate(&self) -> Result<()> {
        for (i, &[a, b]) in self.intervals.iter().enumerate() {
            if !(a.is_finite() && b.is_finite() && a < b) {
                return Err(Error::data(format!("{}: interval {i} ({a}, {b}) is not ordered", self.source_id)));
            }
            if i > 0 && a < self.intervals[i - 1][1] {
                return Err(Error::data(format!("{}: interval {i} overlaps or precedes its predecessor", self.source_id)));
            }
        }
        Ok(())
    }

    pub fn test_has_event(&self) -> bool {
        !self.intervals.is_empty()
    }
}

#[derive(Deserialize)]
#[serde(untagged)]
enum TruthFile {
    Many(Vec<GroundTruth>),
    One(GroundTruth),
}

/// Reads a ground-truth file holding either one object or a list of them.
pub fn read_ground_truth(path: &Path) -> Result<Vec<GroundTruth>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let truths = match serde_json::from_str::<TruthFile>(&text)? {
        TruthFile::Many(v) => v,
        TruthFile::One(t) => vec![t],
    };
    for t in &truths {
        t.validate()?;
    }
    Ok(truths)
}

pub fn write_ground_truth(path: &Path, truths: &[GroundTruth]) -> Result<()> {
    let text = serde_json::to_string_pretty(truths)?;
    fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

/// Intersection over union of two time intervals.
pub fn temporal_iou(a: (f64, f64), b: (f64, f64)) -> f64 {
    let inter = (a.1.min(b.1) - a.0.max(b.0)).max(0.0);
    let union = (a.1 - a.0) + (b.1 - b.0) - inter;
    if union > 0.0 {
        inter / union
    } else {
        0.0
    }
}

/// Boundary errors of one matched prediction relative to its truth interval.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundaryErrors {
    /// Truth length `L = beta1 - alpha1`.
    pub length: f64,
    /// Signed `alpha2 - alpha1`, seconds.
    pub delta_start: f64,
    /// `round(100 * |delta_start| / L)`.
    pub delta_start_pct: i64,
    pub delta_start_frac: f64,
    pub delta_end: f64,
    pub delta_end_pct: i64,
    pub delta_end_frac: f64,
}

pub fn boundary_errors(truth: (f64, f64), pred: (f64, f64)) -> Result<BoundaryErrors> {
    let length = truth.1 - truth.0;
    if !(length > 0.0) {
        return Err(Error::data(format!("truth interval ({}, {}) has non-positive length", truth.0, truth.1)));
    }
    let delta_start = pred.0 - truth.0;
    let delta_end = pred.1 - truth.1;
    let delta_start_frac = delta_start.abs() / length;
    let delta_end_frac = delta_end.abs() / length;
    Ok(BoundaryErrors {
        length,
        delta_start,
        delta_start_pct: (100.0 * delta_start_frac).round() as i64,
        delta_start_frac,
        delta_end,
        delta_end_pct: (100.0 * delta_end_frac).round() as i64,
        delta_end_frac,
    })
}

/// A row of a published comparison table, as printed (two-decimal seconds, integer percent).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReportedRow {
    pub truth: (f64, f64),
    pub pred: (f64, f64),
    pub length: f64,
    pub delta_start: f64,
    pub delta_start_pct: i64,
    pub delta_end: f64,
    pub delta_end_pct: i64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RowCheck {
    pub computed: BoundaryErrors,
    /// Names of the reported columns that disagree with the endpoints.
    pub mismatches: Vec<&'static str>,
}

impl RowCheck {
    pub fn consistent(&self) -> bool {
        self.mismatches.is_empty()
    }
}

/// Recomputes a reported row from its endpoints and lists the columns that
/// do not follow from them (seconds compared at the printed precision).
pub fn check_reported_row(row: &ReportedRow) -> Result<RowCheck> {
    const SECONDS_TOL: f64 = 0.005 + 1e-9;
    let computed = boundary_errors(row.truth, row.pred)?;
    let mut mismatches = Vec::new();
    if (computed.length - row.length).abs() > SECONDS_TOL {
        mismatches.push("length");
    }
    if (computed.delta_start - row.delta_start).abs() > SECONDS_TOL {
        mismatches.push("delta_start");
    }
    if computed.delta_start_pct != row.delta_start_pct {
        mismatches.push("delta_start_pct");
    }
    if (computed.delta_end - row.delta_end).abs() > SECONDS_TOL {
        mismatches.push("delta_end");
    }
    if computed.delta_end_pct != row.delta_end_pct {
        mismatches.push("delta_end_pct");
    }
    Ok(RowCheck { computed, mismatches })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchRecord {
    pub source_id: String,
    pub truth: [f64; 2],
    pub prediction: [f64; 2],
    pub iou: f64,
    pub errors: BoundaryErrors,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Counts {
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub tn: usize,
}

impl std::ops::AddAssign for Counts {
    fn add_assign(&mut self, o: Self) {
        self.tp += o.tp;
        self.fp += o.fp;
        self.fn_ += o.fn_;
        self.tn += o.tn;
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MatchOutcome {
    pub counts: Counts,
    pub matches: Vec<MatchRecord>,
}

/// One-to-one matching of predictions to truth intervals for a single test.
///
/// Pairs are taken greedily by descending temporal IoU; a pair is a true
/// positive when its IoU reaches `overlap_threshold`.
pub fn match_detections(pred: &[EventInterval], truth: &GroundTruth, overlap_threshold: f64) -> Result<MatchOutcome> {
    if !(overlap_threshold > 0.0 && overlap_threshold <= 1.0) {
        return Err(Error::arg(format!("overlap threshold must lie in (0, 1], got {overlap_threshold}")));
    }
    // canonical order so the input permutation cannot influence tie-breaking
    let mut preds: Vec<&EventInterval> = pred.iter().collect();
    preds.sort_by(|a, b| {
        a.start
            .total_cmp(&b.start)
            .then(a.end.total_cmp(&b.end))
            .then(b.confidence.total_cmp(&a.confidence))
    });

    let mut pairs = Vec::new();
    for (ti, &[a, b]) in truth.intervals.iter().enumerate() {
        for (pi, p) in preds.iter().enumerate() {
            let iou = temporal_iou((a, b), (p.start, p.end));
            if iou >= overlap_threshold {
                pairs.push((iou, ti, pi));
            }
        }
    }
    pairs.sort_by(|x, y| y.0.total_cmp(&x.0).then(x.1.cmp(&y.1)).then(x.2.cmp(&y.2)));

    let mut truth_used = vec![false; truth.intervals.len()];
    let mut pred_used = vec![false; preds.len()];
    let mut matches = Vec::new();
    for (iou, ti, pi) in pairs {
        if truth_used[ti] || pred_used[pi] {
            continue;
        }
        truth_used[ti] = true;
        pred_used[pi] = true;
        let [a, b] = truth.intervals[ti];
        let p = preds[pi];
        matches.push(MatchRecord {
            source_id: truth.source_id.clone(),
            truth: [a, b],
            prediction: [p.start, p.end],
            iou,
            errors: boundary_errors((a, b), (p.start, p.end))?,
        });
    }
    matches.sort_by(|x, y| x.truth[0].total_cmp(&y.truth[0]));

    let tp = matches.len();
    let counts = Counts {
        tp,
        fp: preds.len() - tp,
        fn_: truth.intervals.len() - tp,
        tn: usize::from(truth.intervals.is_empty() && preds.is_empty()),
    };
    Ok(MatchOutcome { counts, matches })
}

/// Precision, recall, accuracy and F1; `None` where a denominator vanishes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassificationMetrics {
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    pub accuracy: Option<f64>,
    pub f1: Option<f64>,
    /// Set when every count is zero and no metric is defined.
    pub undefined: bool,
}

fn ratio(num: usize, den: usize) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

/// `P = TP/(FP+TP)`, `R = TP/(FN+TP)`, `ACC = (TP+TN)/(TP+TN+FP+FN)`,
/// `F1 = 2PR/(P+R)`.
///
/// F1 is evaluated through the identity `2PR/(P+R) = 2TP/(2TP+FP+FN)`, so the
/// result is the correctly rounded value of the harmonic mean. F1 is `None`
/// whenever P or R is undefined or both are zero.
pub fn classification_metrics(tp: usize, fp: usize, fn_: usize, tn: usize) -> ClassificationMetrics {
    let precision = ratio(tp, tp + fp);
    let recall = ratio(tp, tp + fn_);
    let accuracy = ratio(tp + tn, tp + tn + fp + fn_);
    let f1 = match (precision, recall) {
        (Some(_), Some(_)) if tp > 0 => ratio(2 * tp, 2 * tp + fp + fn_),
        _ => None,
    };
    ClassificationMetrics { precision, recall, accuracy, f1, undefined: tp + fp + fn_ + tn == 0 }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub tests: usize,
    #[serde(flatten)]
    pub counts: Counts,
    pub metrics: ClassificationMetrics,
    pub overlap_threshold: f64,
    pub matches: Vec<MatchRecord>,
}

impl EvalReport {
    /// Fraction of matches whose start and end errors are both within `frac * L`.
    pub fn fraction_within(&self, frac: f64) -> Option<f64> {
        let ok = self
            .matches
            .iter()
            .filter(|m| m.errors.delta_start_frac <= frac && m.errors.delta_end_frac <= frac)
            .count();
        ratio(ok, self.matches.len())
    }

    /// Plain-text summary: a metrics row followed by one row per match.
    pub fn to_table(&self) -> String {
        let fmt = |v: Option<f64>| v.map_or_else(|| "-".to_string(), |x| format!("{x:.3}"));
        let c = self.counts;
        let m = self.metrics;
        let mut s = String::new();
        writeln!(s, "{:>6} {:>6} {:>6} {:>6} | {:>6} {:>6} {:>6} {:>6}", "TP", "FP", "FN", "TN", "P", "R", "ACC", "F1").unwrap();
        writeln!(
            s,
            "{:>6} {:>6} {:>6} {:>6} | {:>6} {:>6} {:>6} {:>6}",
            c.tp,
            c.fp,
            c.fn_,
            c.tn,
            fmt(m.precision),
            fmt(m.recall),
            fmt(m.accuracy),
            fmt(m.f1)
        )
        .unwrap();
        if !self.matches.is_empty() {
            s.push('\n');
            writeln!(
                s,
                "{:<16} {:>18} {:>18} {:>6} {:>7} {:>4} {:>7} {:>4}",
                "test", "truth", "predicted", "L", "dStart", "%", "dEnd", "%"
            )
            .unwrap();
            for r in &self.matches {
                let e = r.errors;
                writeln!(
                    s,
                    "{:<16} {:>18} {:>18} {:>6.2} {:>+7.2} {:>4} {:>+7.2} {:>4}",
                    r.source_id,
                    format!("({:.2}, {:.2})", r.truth[0], r.truth[1]),
                    format!("({:.2}, {:.2})", r.prediction[0], r.prediction[1]),
                    e.length,
                    e.delta_start,
                    e.delta_start_pct,
                    e.delta_end,
                    e.delta_end_pct
                )
                .unwrap();
            }
        }
        s
    }
}

/// Scores a whole corpus. Predictions whose source has no ground truth count
/// as false positives.
pub fn evaluate(predictions: &[EventInterval], truths: &[GroundTruth], overlap_threshold: f64) -> Result<EvalReport> {
    let mut by_source: BTreeMap<&str, Vec<EventInterval>> = BTreeMap::new();
    for p in predictions {
        by_source.entry(p.source_id.as_str()).or_default().push(p.clone());
    }
    let mut counts = Counts::default();
    let mut matches = Vec::new();
    for truth in truths {
        let preds = by_source.remove(truth.source_id.as_str()).unwrap_or_default();
        let outcome = match_detections(&preds, truth, overlap_threshold)?;
        counts += outcome.counts;
        matches.extend(outcome.matches);
    }
    counts.fp += by_source.values().map(Vec::len).sum::<usize>();
    Ok(EvalReport {
        tests: truths.len(),
        counts,
        metrics: classification_metrics(counts.tp, counts.fp, counts.fn_, counts.tn),
        overlap_threshold,
        matches,
    })
}
