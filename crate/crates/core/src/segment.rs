//! Offset-shifted windowing, per-window inference and weighted voting.

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{select_channels, ChannelConfig, Recording};
use crate::error::{Error, Result};
use crate::nn::Model;
use crate::tensor::Tensor;

/// How a recording is cut into model-sized windows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WindowPlan {
    pub window_len: usize,
    pub stride: usize,
    pub offsets: Vec<usize>,
    /// Vote weight per offset; `None` means 1 for every offset.
    #[serde(default)]
    pub weights: Option<Vec<f64>>,
}

impl Default for WindowPlan {
    fn default() -> Self {
        WindowPlan {
            window_len: 1024,
            stride: 1024,
            offsets: vec![0, 256, 512, 768],
            weights: None,
        }
    }
}

impl WindowPlan {
    pub fn new(window_len: usize, stride: usize, offsets: Vec<usize>) -> Result<Self> {
        let plan = WindowPlan {
            window_len,
            stride,
            offsets,
            weights: None,
        };
        plan.validate()?;
        Ok(plan)
    }

    /// Non-overlapping windows at a single offset.
    pub fn single(window_len: usize) -> Self {
        WindowPlan {
            window_len,
            stride: window_len,
            offsets: vec![0],
            weights: None,
        }
    }

    pub fn with_weights(mut self, weights: Vec<f64>) -> Result<Self> {
        self.weights = Some(weights);
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        if self.window_len == 0 || self.stride == 0 {
            return Err(Error::Config(
                "window_len and stride must be positive".into(),
            ));
        }
        if self.stride > self.window_len {
            return Err(Error::Config(format!(
                "stride {} exceeds window_len {}",
                self.stride, self.window_len
            )));
        }
        if self.offsets.is_empty() {
            return Err(Error::Config("at least one offset is required".into()));
        }
        if let Some(&o) = self.offsets.iter().find(|&&o| o >= self.window_len) {
            return Err(Error::Config(format!(
                "offset {o} is not below window_len {}",
                self.window_len
            )));
        }
        let mut sorted = self.offsets.clone();
        sorted.sort_unstable();
        if sorted.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::Config("offsets must be distinct".into()));
        }
        if let Some(w) = &self.weights {
            if w.len() != self.offsets.len() {
                return Err(Error::Config(format!(
                    "{} weights for {} offsets",
                    w.len(),
                    self.offsets.len()
                )));
            }
            if w.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
                return Err(Error::Config(
                    "vote weights must be finite and non-negative".into(),
                ));
            }
        }
        Ok(())
    }

    fn weight(&self, offset_index: usize) -> f64 {
        self.weights.as_ref().map_or(1.0, |w| w[offset_index])
    }
}

/// Half-open window `[start, start + len)` with its vote weight.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Span {
    pub start: usize,
    pub len: usize,
    pub weight: f64,
}

impl Span {
    pub fn end(&self) -> usize {
        self.start + self.len
    }
}

/// Windows for every offset while fully inside `[0, t)`, plus one
/// right-aligned tail window when the last sample is otherwise uncovered.
/// The tail votes with the first offset's weight.
pub fn plan_windows(t: usize, plan: &WindowPlan) -> Result<Vec<Span>> {
    plan.validate()?;
    let len = plan.window_len;
    if t < len {
        return Err(Error::InputTooShort {
            len: t,
            window_len: len,
        });
    }
    let mut spans = Vec::new();
    for (i, &offset) in plan.offsets.iter().enumerate() {
        let mut start = offset;
        while start + len <= t {
            spans.push(Span {
                start,
                len,
                weight: plan.weight(i),
            });
            start += plan.stride;
        }
    }
    if !spans.iter().any(|s| s.end() == t) {
        spans.push(Span {
            start: t - len,
            len,
            weight: plan.weight(0),
        });
    }
    Ok(spans)
}

/// Weighted majority per sample: 1 iff the weight voting 1 strictly exceeds
/// the weight voting 0. Ties and uncovered samples give 0.
///
/// Contributions are summed in a canonical span order, so the result does
/// not depend on the order windows are supplied in.
pub fn vote(predictions: &[Vec<u8>], spans: &[Span], t: usize) -> Result<Vec<u8>> {
    if predictions.len() != spans.len() {
        return Err(Error::Contract(format!(
            "{} predictions for {} spans",
            predictions.len(),
            spans.len()
        )));
    }
    for (p, s) in predictions.iter().zip(spans) {
        if p.len() != s.len {
            return Err(Error::Contract(format!(
                "prediction of length {} for span of length {}",
                p.len(),
                s.len
            )));
        }
        if s.end() > t {
            return Err(Error::Contract(format!(
                "span [{}, {}) exceeds length {t}",
                s.start,
                s.end()
            )));
        }
        if p.iter().any(|&v| v > 1) {
            return Err(Error::Contract("predictions must be 0/1".into()));
        }
    }
    let mut order: Vec<usize> = (0..spans.len()).collect();
    order.sort_by(|&a, &b| {
        let (sa, sb) = (&spans[a], &spans[b]);
        (sa.start, sa.len, sa.weight.to_bits(), &predictions[a]).cmp(&(
            sb.start,
            sb.len,
            sb.weight.to_bits(),
            &predictions[b],
        ))
    });
    let mut ones = vec![0.0; t];
    let mut zeros = vec![0.0; t];
    for i in order {
        let s = &spans[i];
        for (j, &p) in predictions[i].iter().enumerate() {
            if p == 1 {
                ones[s.start + j] += s.weight;
            } else {
                zeros[s.start + j] += s.weight;
            }
        }
    }
    Ok(ones
        .iter()
        .zip(&zeros)
        .map(|(o, z)| u8::from(o > z))
        .collect())
}

/// Select channels, window, run the model on every window, vote.
pub fn segment(
    model: &Model,
    recording: &Recording,
    cfg: &ChannelConfig,
    plan: &WindowPlan,
) -> Result<Vec<u8>> {
    let expected = model.spec().input_channels();
    if cfg.count() != expected {
        return Err(Error::Contract(format!(
            "model takes {expected} channels, configuration selects {}",
            cfg.count()
        )));
    }
    let x = select_channels(recording, cfg)?;
    segment_tensor(model, &x, plan)
}

/// [`segment`] on an already selected `[C x T]` input.
pub fn segment_tensor(model: &Model, x: &Tensor, plan: &WindowPlan) -> Result<Vec<u8>> {
    let t = x.cols();
    let spans = plan_windows(t, plan)?;
    let predictions = spans
        .par_iter()
        .map(|s| model.predict(&window(x, s.start, s.len)))
        .collect::<Result<Vec<_>>>()?;
    vote(&predictions, &spans, t)
}

/// Columns `[start, start + len)` of a `[C x T]` tensor.
pub fn window(x: &Tensor, start: usize, len: usize) -> Tensor {
    let data: Vec<f64> = (0..x.rows())
        .flat_map(|r| x.row(r)[start..start + len].iter().copied())
        .collect();
    Tensor::new(vec![x.rows(), len], data).expect("window of a valid tensor")
}

/// Maximal run of blink samples, `offset` inclusive.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlinkEvent {
    pub onset: usize,
    pub offset: usize,
}

impl BlinkEvent {
    /// Length in samples.
    pub fn duration(&self) -> usize {
        self.offset - self.onset + 1
    }
}

pub fn events_from_labels(labels: &[u8]) -> Vec<BlinkEvent> {
    let mut events = Vec::new();
    let mut onset = None;
    for (t, &l) in labels.iter().enumerate() {
        match (l != 0, onset) {
            (true, None) => onset = Some(t),
            (false, Some(s)) => {
                events.push(BlinkEvent {
                    onset: s,
                    offset: t - 1,
                });
                onset = None;
            }
            _ => {}
        }
    }
    if let Some(s) = onset {
        events.push(BlinkEvent {
            onset: s,
            offset: labels.len() - 1,
        });
    }
    events
}

/// Inverse of [`events_from_labels`] for a recording of length `t`.
pub fn rasterize(events: &[BlinkEvent], t: usize) -> Vec<u8> {
    let mut labels = vec![0; t];
    for e in events {
        labels[e.onset..=e.offset.min(t.saturating_sub(1))].fill(1);
    }
    labels
}

/// Writes `t,label_pred`.
pub fn write_predictions_csv(path: &Path, labels: &[u8]) -> Result<()> {
    let mut out = String::with_capacity(labels.len() * 6 + 16);
    out.push_str("t,label_pred\n");
    for (t, l) in labels.iter().enumerate() {
        out.push_str(&format!("{t},{l}\n"));
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Reads the 0/1 column `column` of a CSV such as `t,label_pred` or a recording file.
pub fn read_labels_csv(path: &Path, column: &str) -> Result<Vec<u8>> {
    let mut reader = csv::Reader::from_path(path).map_err(|e| Error::Ingestion {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    let headers = reader
        .headers()
        .map_err(|e| Error::Ingestion {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?
        .clone();
    let col = headers
        .iter()
        .position(|h| h == column)
        .ok_or_else(|| Error::Ingestion {
            path: path.to_path_buf(),
            message: format!("missing {column} column"),
        })?;
    let mut labels = Vec::new();
    for (i, rec) in reader.records().enumerate() {
        let row = i + 2;
        let rec = rec.map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            row,
            message: e.to_string(),
        })?;
        labels.push(match rec.get(col).map(str::trim) {
            Some("0") => 0,
            Some("1") => 1,
            other => {
                return Err(Error::Parse {
                    path: path.to_path_buf(),
                    row,
                    message: format!("label {other:?} outside {{0,1}}"),
                })
            }
        });
    }
    Ok(labels)
}
