//! Timepoint (micro) and event (macro) F1 with blink as the positive class.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::segment::{events_from_labels, BlinkEvent};

/// Default IoU a predicted event needs to match a true one.
pub const DEFAULT_IOU: f64 = 0.5;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub tn: usize,
}

impl ConfusionCounts {
    pub fn total(&self) -> usize {
        self.tp + self.fp + self.fn_ + self.tn
    }

    /// Counts with the roles of the classes swapped.
    pub fn swapped(&self) -> Self {
        ConfusionCounts {
            tp: self.tn,
            fp: self.fn_,
            fn_: self.fp,
            tn: self.tp,
        }
    }

    pub fn precision(&self) -> f64 {
        ratio(self.tp, self.tp + self.fp)
    }

    pub fn recall(&self) -> f64 {
        ratio(self.tp, self.tp + self.fn_)
    }

    pub fn f1(&self) -> f64 {
        f1(self.precision(), self.recall())
    }
}

impl std::ops::Add for ConfusionCounts {
    type Output = Self;

    fn add(self, o: Self) -> Self {
        ConfusionCounts {
            tp: self.tp + o.tp,
            fp: self.fp + o.fp,
            fn_: self.fn_ + o.fn_,
            tn: self.tn + o.tn,
        }
    }
}

/// `a / b`, with `0 / 0 = 0`.
fn ratio(a: usize, b: usize) -> f64 {
    if b == 0 {
        0.0
    } else {
        a as f64 / b as f64
    }
}

pub fn confusion(pred: &[u8], truth: &[u8]) -> Result<ConfusionCounts> {
    if pred.len() != truth.len() {
        return Err(Error::Contract(format!(
            "{} predictions for {} labels",
            pred.len(),
            truth.len()
        )));
    }
    let mut c = ConfusionCounts::default();
    for (&p, &t) in pred.iter().zip(truth) {
        match (p != 0, t != 0) {
            (true, true) => c.tp += 1,
            (true, false) => c.fp += 1,
            (false, true) => c.fn_ += 1,
            (false, false) => c.tn += 1,
        }
    }
    Ok(c)
}

/// Harmonic mean of precision and recall; 0 when both are 0.
pub fn f1(precision: f64, recall: f64) -> f64 {
    if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    }
}

/// Blink-class F1 over individual samples.
pub fn f1_micro(pred: &[u8], truth: &[u8]) -> Result<f64> {
    Ok(confusion(pred, truth)?.f1())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PerClassF1 {
    pub blink: f64,
    pub no_blink: f64,
}

impl PerClassF1 {
    pub fn of(c: &ConfusionCounts) -> Self {
        PerClassF1 {
            blink: c.f1(),
            no_blink: c.swapped().f1(),
        }
    }

    pub fn mean(&self) -> f64 {
        0.5 * (self.blink + self.no_blink)
    }
}

/// Expected per-class F1 of a fair coin predictor at blink prior `prior`:
/// each class has precision equal to its prior and recall 1/2.
pub fn uniform_guess_f1(prior: f64) -> PerClassF1 {
    PerClassF1 {
        blink: f1(prior, 0.5),
        no_blink: f1(1.0 - prior, 0.5),
    }
}

fn iou(a: &BlinkEvent, b: &BlinkEvent) -> f64 {
    let lo = a.onset.max(b.onset);
    let hi = a.offset.min(b.offset);
    let inter = if hi >= lo { hi - lo + 1 } else { 0 };
    let union = a.duration() + b.duration() - inter;
    inter as f64 / union as f64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventMatch {
    /// `(pred index, true index)` pairs.
    pub matches: Vec<(usize, usize)>,
    pub unmatched_pred: Vec<usize>,
    pub unmatched_true: Vec<usize>,
}

/// Greedy one-to-one matching in time order: each predicted event takes the
/// earliest still-unmatched true event with IoU at least `threshold`.
pub fn event_match(pred: &[BlinkEvent], truth: &[BlinkEvent], threshold: f64) -> EventMatch {
    let mut taken = vec![false; truth.len()];
    let mut matches = Vec::new();
    let mut unmatched_pred = Vec::new();
    let mut first = 0;
    for (i, p) in pred.iter().enumerate() {
        while first < truth.len() && truth[first].offset < p.onset {
            first += 1;
        }
        let hit = (first..truth.len())
            .take_while(|&j| truth[j].onset <= p.offset)
            .find(|&j| !taken[j] && iou(p, &truth[j]) >= threshold);
        match hit {
            Some(j) => {
                taken[j] = true;
                matches.push((i, j));
            }
            None => unmatched_pred.push(i),
        }
    }
    let unmatched_true = (0..truth.len()).filter(|&j| !taken[j]).collect();
    EventMatch {
        matches,
        unmatched_pred,
        unmatched_true,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EventScores {
    pub event_precision: f64,
    pub event_recall: f64,
    pub f1_macro: f64,
    pub matched: usize,
    pub pred_events: usize,
    pub true_events: usize,
    /// No events on either side; the scores are the 1/1/1 convention.
    pub degenerate: bool,
}

/// Event-level scores, one example per complete blink.
pub fn f1_macro(pred: &[u8], truth: &[u8], threshold: f64) -> Result<EventScores> {
    if pred.len() != truth.len() {
        return Err(Error::Contract(format!(
            "{} predictions for {} labels",
            pred.len(),
            truth.len()
        )));
    }
    Ok(event_scores(
        &events_from_labels(pred),
        &events_from_labels(truth),
        threshold,
    ))
}

pub fn event_scores(pred: &[BlinkEvent], truth: &[BlinkEvent], threshold: f64) -> EventScores {
    if pred.is_empty() && truth.is_empty() {
        return EventScores {
            event_precision: 1.0,
            event_recall: 1.0,
            f1_macro: 1.0,
            matched: 0,
            pred_events: 0,
            true_events: 0,
            degenerate: true,
        };
    }
    let m = event_match(pred, truth, threshold).matches.len();
    let p = ratio(m, pred.len());
    let r = ratio(m, truth.len());
    EventScores {
        event_precision: p,
        event_recall: r,
        f1_macro: f1(p, r),
        matched: m,
        pred_events: pred.len(),
        true_events: truth.len(),
        degenerate: false,
    }
}

/// Everything reported for one label sequence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub f1_micro: f64,
    pub f1_macro: f64,
    pub event_precision: f64,
    pub event_recall: f64,
    pub per_class_f1: PerClassF1,
    pub counts: ConfusionCounts,
    pub events: EventScores,
    pub iou_threshold: f64,
}

pub fn evaluate(pred: &[u8], truth: &[u8], threshold: f64) -> Result<EvalReport> {
    let counts = confusion(pred, truth)?;
    let events = f1_macro(pred, truth, threshold)?;
    Ok(EvalReport {
        f1_micro: counts.f1(),
        f1_macro: events.f1_macro,
        event_precision: events.event_precision,
        event_recall: events.event_recall,
        per_class_f1: PerClassF1::of(&counts),
        counts,
        events,
        iou_threshold: threshold,
    })
}

impl EvalReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// One line of the aggregate score table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateRow {
    pub model: String,
    pub channels: usize,
    pub cohort: String,
    pub f1_micro: f64,
    pub f1_macro: f64,
    pub event_p: f64,
    pub event_r: f64,
}

impl AggregateRow {
    pub fn new(
        model: impl Into<String>,
        channels: usize,
        cohort: impl Into<String>,
        r: &EvalReport,
    ) -> Self {
        AggregateRow {
            model: model.into(),
            channels,
            cohort: cohort.into(),
            f1_micro: r.f1_micro,
            f1_macro: r.f1_macro,
            event_p: r.event_precision,
            event_r: r.event_recall,
        }
    }
}

pub fn write_aggregate_csv(path: &Path, rows: &[AggregateRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::Ingestion {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    let wrap = |e: csv::Error| Error::Ingestion {
        path: path.to_path_buf(),
        message: e.to_string(),
    };
    // Header is written even for an empty table.
    w.write_record([
        "model", "channels", "cohort", "f1_micro", "f1_macro", "event_p", "event_r",
    ])
    .map_err(wrap)?;
    for r in rows {
        w.write_record([
            r.model.clone(),
            r.channels.to_string(),
            r.cohort.clone(),
            format!("{:.5}", r.f1_micro),
            format!("{:.5}", r.f1_macro),
            format!("{:.5}", r.event_p),
            format!("{:.5}", r.event_r),
        ])
        .map_err(wrap)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}
