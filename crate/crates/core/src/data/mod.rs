//! Recordings, electrode selection and subject-level splits.

mod io;
mod split;

pub use io::{
    load_dataset, load_manifest, load_recording, write_manifest, write_recording_csv, ManifestEntry,
};
pub use split::{make_split, Split, Subject};

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Sampling rate of the reference recordings.
pub const REFERENCE_RATE_HZ: f64 = 512.0;

/// Electrode labels of the 10-20 system (plus the common 10-10 extensions
/// found in frontal montages) accepted as channel columns.
pub const TEN_TWENTY: [&str; 33] = [
    "Fp1", "Fp2", "Fpz", "AF3", "AF4", "AF7", "AF8", "AFz", "F7", "F3", "Fz", "F4", "F8", "F1",
    "F2", "F5", "F6", "T3", "C3", "Cz", "C4", "T4", "T5", "P3", "Pz", "P4", "T6", "O1", "Oz", "O2",
    "A1", "A2", "FCz",
];

/// Electrode that every recording must carry.
pub const REQUIRED_ELECTRODE: &str = "Fp1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Cohort {
    #[serde(rename = "HC")]
    Hc,
    #[serde(rename = "PD")]
    Pd,
}

impl Cohort {
    pub fn label(self) -> &'static str {
        match self {
            Cohort::Hc => "HC",
            Cohort::Pd => "PD",
        }
    }
}

impl fmt::Display for Cohort {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for Cohort {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "HC" => Ok(Cohort::Hc),
            "PD" => Ok(Cohort::Pd),
            other => Err(Error::Config(format!(
                "unknown cohort {other:?}, expected HC or PD"
            ))),
        }
    }
}

/// Location and scale removed from one channel.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChannelStats {
    pub mean: f64,
    pub sd: f64,
}

impl ChannelStats {
    pub const IDENTITY: ChannelStats = ChannelStats { mean: 0.0, sd: 1.0 };

    /// Population statistics; a flat channel keeps `sd = 1`.
    pub fn of(values: &[f64]) -> Self {
        let n = values.len().max(1) as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        let sd = var.sqrt();
        ChannelStats {
            mean,
            sd: if sd > 0.0 && sd.is_finite() { sd } else { 1.0 },
        }
    }
}

/// One subject's recording. `channels` holds the values after the stored
/// per-channel normalization; raw microvolts are `value * sd + mean`.
#[derive(Debug, Clone, PartialEq)]
pub struct Recording {
    pub subject_id: String,
    pub cohort: Cohort,
    pub sample_rate_hz: f64,
    pub channel_names: Vec<String>,
    pub channels: Vec<Vec<f64>>,
    pub labels: Vec<u8>,
    pub stats: Vec<ChannelStats>,
}

impl Recording {
    /// Builds a raw (unnormalized) recording, validating its invariants.
    pub fn new(
        subject_id: impl Into<String>,
        cohort: Cohort,
        sample_rate_hz: f64,
        channel_names: Vec<String>,
        channels: Vec<Vec<f64>>,
        labels: Vec<u8>,
    ) -> Result<Self> {
        let stats = vec![ChannelStats::IDENTITY; channels.len()];
        let r = Recording {
            subject_id: subject_id.into(),
            cohort,
            sample_rate_hz,
            channel_names,
            channels,
            labels,
            stats,
        };
        r.validate()?;
        Ok(r)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sample_rate_hz > 0.0 && self.sample_rate_hz.is_finite()) {
            return Err(Error::Config(format!(
                "sample rate {} must be positive",
                self.sample_rate_hz
            )));
        }
        if self.channel_names.len() != self.channels.len()
            || self.stats.len() != self.channels.len()
        {
            return Err(Error::Contract(
                "channel names, rows and stats disagree in count".into(),
            ));
        }
        let t = self.labels.len();
        if let Some((name, row)) = self
            .channel_names
            .iter()
            .zip(&self.channels)
            .find(|(_, row)| row.len() != t)
        {
            return Err(Error::Contract(format!(
                "channel {name} has {} samples, labels have {t}",
                row.len()
            )));
        }
        if let Some(bad) = self.labels.iter().find(|&&l| l > 1) {
            return Err(Error::Contract(format!("label {bad} outside {{0,1}}")));
        }
        for name in &self.channel_names {
            if !TEN_TWENTY.contains(&name.as_str()) {
                return Err(Error::Contract(format!("{name} is not a 10-20 electrode")));
            }
        }
        if self.channels.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("recording {}", self.subject_id)));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Whether the rate matches the reference recordings; other rates are
    /// accepted but flagged.
    pub fn is_reference_rate(&self) -> bool {
        self.sample_rate_hz == REFERENCE_RATE_HZ
    }

    pub fn positive_fraction(&self) -> f64 {
        if self.labels.is_empty() {
            return 0.0;
        }
        self.labels.iter().filter(|&&l| l == 1).count() as f64 / self.labels.len() as f64
    }

    pub fn channel(&self, name: &str) -> Option<&[f64]> {
        self.channel_names
            .iter()
            .position(|n| n == name)
            .map(|i| self.channels[i].as_slice())
    }

    /// Per-channel z-score; statistics compose with any already stored so
    /// that [`Recording::denormalized`] always returns the original values.
    pub fn normalized(&self) -> Recording {
        let mut out = self.clone();
        for (row, stats) in out.channels.iter_mut().zip(out.stats.iter_mut()) {
            let s = ChannelStats::of(row);
            row.iter_mut().for_each(|v| *v = (*v - s.mean) / s.sd);
            *stats = ChannelStats {
                mean: stats.mean + stats.sd * s.mean,
                sd: stats.sd * s.sd,
            };
        }
        out
    }

    /// Values in the original units.
    pub fn denormalized(&self) -> Recording {
        let mut out = self.clone();
        for (row, stats) in out.channels.iter_mut().zip(out.stats.iter_mut()) {
            row.iter_mut().for_each(|v| *v = *v * stats.sd + stats.mean);
            *stats = ChannelStats::IDENTITY;
        }
        out
    }
}

/// Ordered electrode subset fed to a model.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChannelConfig {
    pub names: Vec<String>,
}

impl ChannelConfig {
    /// The study montages: 1 -> Fp1; 3 -> Fp1, Fz, Fp2; 5 -> Fp1, Fp2, Fz, F3, F4.
    pub fn standard(count: usize) -> Result<Self> {
        let names: &[&str] = match count {
            1 => &["Fp1"],
            3 => &["Fp1", "Fz", "Fp2"],
            5 => &["Fp1", "Fp2", "Fz", "F3", "F4"],
            n => {
                return Err(Error::Config(format!(
                    "channel count must be 1, 3 or 5, got {n}"
                )))
            }
        };
        Ok(ChannelConfig {
            names: names.iter().map(|s| s.to_string()).collect(),
        })
    }

    pub fn count(&self) -> usize {
        self.names.len()
    }
}

/// Rows of `r` in the order of `cfg`, as a `[count x T]` tensor.
pub fn select_channels(r: &Recording, cfg: &ChannelConfig) -> Result<Tensor> {
    if r.is_empty() {
        return Err(Error::Contract(format!(
            "recording {} is empty",
            r.subject_id
        )));
    }
    let mut data = Vec::with_capacity(cfg.count() * r.len());
    for name in &cfg.names {
        let row = r
            .channel(name)
            .ok_or_else(|| Error::Selection(name.clone()))?;
        data.extend_from_slice(row);
    }
    Tensor::new(vec![cfg.count(), r.len()], data)
}
