//! Weighted cross-entropy training with Adam, early stopping and checkpoints.

mod checkpoint;

pub use checkpoint::{Checkpoint, NormalizationInfo, CHECKPOINT_MAGIC, FORMAT_VERSION};

use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{select_channels, ChannelConfig, Recording};
use crate::error::{Error, Result};
use crate::metrics::confusion;
use crate::metrics::ConfusionCounts;
use crate::nn::{Dropout, HyperParams, Model, Param};
use crate::segment::{segment_tensor, window, WindowPlan};
use crate::tensor::{Graph, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassWeights {
    pub no_blink: f64,
    pub blink: f64,
}

impl ClassWeights {
    pub const EQUAL: ClassWeights = ClassWeights {
        no_blink: 1.0,
        blink: 1.0,
    };

    /// `1 / frequency` of each class; equal weights when a class is absent.
    pub fn inverse_frequency(examples: &[Example]) -> Self {
        let total: usize = examples.iter().map(|e| e.labels.len()).sum();
        let ones: usize = examples
            .iter()
            .map(|e| e.labels.iter().filter(|&&l| l == 1).count())
            .sum();
        if ones == 0 || ones == total {
            return Self::EQUAL;
        }
        let p = ones as f64 / total as f64;
        ClassWeights {
            no_blink: 1.0 / (1.0 - p),
            blink: 1.0 / p,
        }
    }

    pub fn as_array(&self) -> [f64; 2] {
        [self.no_blink, self.blink]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    /// Windows per optimizer step.
    pub batch_size: usize,
    pub learning_rate: f64,
    /// `None` derives inverse class frequencies from the training windows.
    pub class_weights: Option<ClassWeights>,
    pub dropout_rate: f64,
    pub seed: u64,
    /// Epochs without a better search score before stopping.
    pub patience: usize,
    /// Window length used when scoring the search recordings.
    pub search_window_len: usize,
    /// Optional global gradient-norm cap.
    pub grad_clip: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 50,
            batch_size: 8,
            learning_rate: 1e-3,
            class_weights: None,
            dropout_rate: 0.2,
            seed: 0,
            patience: 10,
            search_window_len: 1024,
            grad_clip: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad(format!(
                "learning_rate must be positive, got {}",
                self.learning_rate
            ));
        }
        if let Some(w) = self.class_weights {
            if !(w.blink > 0.0 && w.no_blink > 0.0 && w.blink.is_finite() && w.no_blink.is_finite())
            {
                return bad("class weights must be positive".into());
            }
        }
        if self.patience < 1 {
            return bad("patience must be at least 1".into());
        }
        if self.batch_size < 1 {
            return bad("batch_size must be at least 1".into());
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return bad(format!("dropout_rate {} outside [0, 1)", self.dropout_rate));
        }
        if self.search_window_len < 1 {
            return bad("search_window_len must be positive".into());
        }
        if let Some(c) = self.grad_clip {
            if c.is_nan() || c <= 0.0 {
                return bad("grad_clip must be positive".into());
            }
        }
        Ok(())
    }

    /// Hex sha256 of the canonical JSON form.
    pub fn digest(&self) -> String {
        use sha2::{Digest, Sha256};
        let json = serde_json::to_string(self).expect("train config serializes");
        Sha256::digest(json.as_bytes())
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect()
    }
}

/// A `[C x T]` input with its per-sample labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Example {
    pub x: Tensor,
    pub labels: Vec<u8>,
}

impl Example {
    pub fn new(x: Tensor, labels: Vec<u8>) -> Result<Self> {
        if x.shape().len() != 2 || x.cols() != labels.len() {
            return Err(Error::Dimension(format!(
                "input {:?} for {} labels",
                x.shape(),
                labels.len()
            )));
        }
        Ok(Example { x, labels })
    }

    /// Cuts `[start, start + len)` windows every `stride` samples, adding a
    /// right-aligned last window when the tiling leaves a tail. Shorter
    /// inputs yield themselves whole.
    pub fn windows(&self, len: usize, stride: usize) -> Vec<Example> {
        let t = self.labels.len();
        if t <= len {
            return vec![self.clone()];
        }
        let mut starts: Vec<usize> = (0..=t - len).step_by(stride.max(1)).collect();
        if starts.last() != Some(&(t - len)) {
            starts.push(t - len);
        }
        starts
            .into_iter()
            .map(|s| Example {
                x: window(&self.x, s, len),
                labels: self.labels[s..s + len].to_vec(),
            })
            .collect()
    }
}

/// The selected channels of a recording with its labels.
pub fn recording_example(r: &Recording, channels: &ChannelConfig) -> Result<Example> {
    Example::new(select_channels(r, channels)?, r.labels.clone())
}

/// Mean over time of class-weighted cross-entropy of softmaxed logits.
pub fn loss(logits: &Tensor, labels: &[u8], weights: ClassWeights) -> Result<f64> {
    let mut g = Graph::new();
    let z = g.constant(logits.clone());
    let l = g.weighted_cross_entropy(z, labels, weights.as_array())?;
    Ok(g.value(l).item())
}

/// Loss and per-parameter gradients for one example.
pub fn example_gradients(
    model: &Model,
    ex: &Example,
    weights: ClassWeights,
    dropout: Option<&mut Dropout>,
) -> Result<(f64, Vec<Vec<f64>>)> {
    let mut g = Graph::new();
    let vars = model.bind(&mut g, true);
    let x = g.constant(ex.x.clone());
    let logits = model.forward(&mut g, x, &vars, dropout)?;
    let l = g.weighted_cross_entropy(logits, &ex.labels, weights.as_array())?;
    g.backward(l)?;
    let grads = vars
        .iter()
        .zip(model.params())
        .map(|(&v, p)| {
            g.grad(v)
                .map_or_else(|| vec![0.0; p.value.len()], <[f64]>::to_vec)
        })
        .collect();
    Ok((g.value(l).item(), grads))
}

/// Adaptive moment estimation.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    t: i32,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(params: &[Param], lr: f64) -> Self {
        let zeros: Vec<Vec<f64>> = params.iter().map(|p| vec![0.0; p.value.len()]).collect();
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    pub fn step(&mut self, params: &mut [Param], grads: &[Vec<f64>]) {
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t);
        let c2 = 1.0 - self.beta2.powi(self.t);
        for (((p, g), m), v) in params
            .iter_mut()
            .zip(grads)
            .zip(&mut self.m)
            .zip(&mut self.v)
        {
            for (((w, &gi), mi), vi) in p
                .value
                .data_mut()
                .iter_mut()
                .zip(g)
                .zip(m.iter_mut())
                .zip(v.iter_mut())
            {
                *mi = self.beta1 * *mi + (1.0 - self.beta1) * gi;
                *vi = self.beta2 * *vi + (1.0 - self.beta2) * gi * gi;
                *w -= self.lr * (*mi / c1) / ((*vi / c2).sqrt() + self.eps);
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub loss: f64,
    pub search_f1_micro: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    /// Weights of the best epoch (the initialization when no epoch ran).
    pub checkpoint: Checkpoint,
    pub history: Vec<EpochRecord>,
    pub best_epoch: Option<usize>,
    pub class_weights: ClassWeights,
}

/// Per-window seed for dropout masks.
fn mix(seed: u64, epoch: usize, index: usize) -> u64 {
    let mut z = seed ^ ((epoch as u64) << 32) ^ index as u64;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Blink-class F1 over the pooled samples of all `search` examples.
pub fn search_f1(model: &Model, search: &[Example], window_len: usize) -> Result<f64> {
    let mut counts = ConfusionCounts::default();
    for ex in search {
        let pred = if ex.labels.len() < window_len {
            model.predict(&ex.x)?
        } else {
            segment_tensor(model, &ex.x, &WindowPlan::single(window_len))?
        };
        counts = counts + confusion(&pred, &ex.labels)?;
    }
    Ok(counts.f1())
}

/// Trains `hp` on `train` windows, selecting the epoch with the best
/// blink F1 on `search` (or the lowest training loss when `search` is empty).
pub fn train(
    hp: &HyperParams,
    train: &[Example],
    search: &[Example],
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(Error::Config("training needs at least one window".into()));
    }
    let mut model = Model::new(hp, cfg.seed)?;
    let channels = model.spec().input_channels();
    if let Some(bad) = train.iter().chain(search).find(|e| e.x.rows() != channels) {
        return Err(Error::Dimension(format!(
            "model takes {channels} channels, example has {}",
            bad.x.rows()
        )));
    }
    let weights = cfg
        .class_weights
        .unwrap_or_else(|| ClassWeights::inverse_frequency(train));
    let mut adam = Adam::new(model.params(), cfg.learning_rate);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed);

    let mut history = Vec::new();
    let mut best = model.clone();
    let mut best_epoch = None;
    let mut best_score = f64::NEG_INFINITY;
    let mut stale = 0;
    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for (b, batch) in order.chunks(cfg.batch_size).enumerate() {
            let results = batch
                .par_iter()
                .enumerate()
                .map(|(i, &idx)| {
                    let mut dropout = Dropout::new(
                        cfg.dropout_rate,
                        mix(cfg.seed, epoch, b * cfg.batch_size + i),
                    )?;
                    example_gradients(&model, &train[idx], weights, Some(&mut dropout))
                })
                .collect::<Result<Vec<_>>>()?;
            // Fixed-order reduction keeps runs bitwise reproducible.
            let scale = 1.0 / batch.len() as f64;
            let mut grads: Vec<Vec<f64>> = model
                .params()
                .iter()
                .map(|p| vec![0.0; p.value.len()])
                .collect();
            for (l, g) in &results {
                if !l.is_finite() {
                    return Err(Error::Divergence { epoch });
                }
                total += l;
                for (acc, gi) in grads.iter_mut().zip(g) {
                    acc.iter_mut().zip(gi).for_each(|(a, v)| *a += scale * v);
                }
            }
            if let Some(cap) = cfg.grad_clip {
                let norm = grads.iter().flatten().map(|v| v * v).sum::<f64>().sqrt();
                if norm > cap {
                    let s = cap / norm;
                    grads.iter_mut().flatten().for_each(|v| *v *= s);
                }
            }
            adam.step(model.params_mut(), &grads);
        }
        if model.params().iter().any(|p| !p.value.is_finite()) {
            return Err(Error::Divergence { epoch });
        }
        let epoch_loss = total / train.len() as f64;
        let search_score = if search.is_empty() {
            None
        } else {
            Some(search_f1(&model, search, cfg.search_window_len)?)
        };
        history.push(EpochRecord {
            epoch,
            loss: epoch_loss,
            search_f1_micro: search_score,
        });
        let score = search_score.unwrap_or(-epoch_loss);
        if score > best_score {
            best_score = score;
            best = model.clone();
            best_epoch = Some(epoch);
            stale = 0;
        } else {
            stale += 1;
            if stale >= cfg.patience {
                break;
            }
        }
    }
    Ok(TrainOutcome {
        checkpoint: Checkpoint::new(best, NormalizationInfo::default(), cfg),
        history,
        best_epoch,
        class_weights: weights,
    })
}

/// Writes `epoch,loss,search_f1_micro`; a missing search score is left empty.
pub fn write_history_csv(path: &Path, history: &[EpochRecord]) -> Result<()> {
    let mut out = String::from("epoch,loss,search_f1_micro\n");
    for r in history {
        let f1 = r.search_f1_micro.map(|v| v.to_string()).unwrap_or_default();
        out.push_str(&format!("{},{},{}\n", r.epoch, r.loss, f1));
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}
