//! Deterministic synthetic frontal EEG with labelled blinks.
//!
//! Blinks are raised-cosine bumps `A * 0.5 * (1 - cos(2 pi j / W))` added
//! to all five electrodes with a fixed spatial gain ladder, on top of white
//! noise and, for the PD cohort, a common tremor sinusoid. A sample is
//! labelled blink exactly where its pulse exceeds 10% of the peak amplitude.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::data::{Cohort, Recording, REFERENCE_RATE_HZ};
use crate::error::{Error, Result};

/// Electrodes emitted by the generator and their blink gains.
pub const ELECTRODE_GAINS: [(&str, f64); 5] = [
    ("Fp1", 1.0),
    ("Fp2", 1.0),
    ("Fz", 0.8),
    ("F3", 0.6),
    ("F4", 0.6),
];

/// Fraction of the peak above which a pulse sample is labelled blink.
pub const LABEL_THRESHOLD: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Tremor {
    pub freq_hz: f64,
    pub amplitude_uv: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub subject_id: String,
    pub duration_s: f64,
    pub sample_rate_hz: f64,
    pub blink_rate_per_min: f64,
    pub blink_amplitude_uv: f64,
    /// Inclusive range the per-blink pulse width is drawn from.
    pub blink_width_ms: (f64, f64),
    pub noise_sd_uv: f64,
    /// Present for PD-mode recordings.
    pub tremor: Option<Tremor>,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            subject_id: "synth".into(),
            duration_s: 60.0,
            sample_rate_hz: REFERENCE_RATE_HZ,
            blink_rate_per_min: 20.0,
            blink_amplitude_uv: 150.0,
            blink_width_ms: (100.0, 300.0),
            noise_sd_uv: 20.0,
            tremor: None,
            seed: 0,
        }
    }
}

impl SynthConfig {
    /// PD-mode variant: a 5 Hz, 30 uV tremor on every channel.
    pub fn with_tremor(mut self) -> Self {
        self.tremor = Some(Tremor {
            freq_hz: 5.0,
            amplitude_uv: 30.0,
        });
        self
    }

    pub fn cohort(&self) -> Cohort {
        if self.tremor.is_some() {
            Cohort::Pd
        } else {
            Cohort::Hc
        }
    }

    fn samples(&self) -> usize {
        (self.duration_s * self.sample_rate_hz).round() as usize
    }

    fn width_samples(&self, ms: f64) -> usize {
        (ms * self.sample_rate_hz / 1000.0).round() as usize
    }

    pub fn blink_count(&self) -> usize {
        (self.blink_rate_per_min * self.duration_s / 60.0).round() as usize
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(self.duration_s > 0.0 && self.duration_s.is_finite()) {
            return bad(format!(
                "duration_s must be positive, got {}",
                self.duration_s
            ));
        }
        if !(self.sample_rate_hz > 0.0 && self.sample_rate_hz.is_finite()) {
            return bad(format!(
                "sample_rate_hz must be positive, got {}",
                self.sample_rate_hz
            ));
        }
        if self.samples() == 0 {
            return bad("duration shorter than one sample".into());
        }
        if !(self.blink_rate_per_min >= 0.0 && self.blink_rate_per_min.is_finite()) {
            return bad(format!(
                "blink_rate_per_min must be non-negative, got {}",
                self.blink_rate_per_min
            ));
        }
        if !(self.blink_amplitude_uv > 100.0 && self.blink_amplitude_uv.is_finite()) {
            return bad(format!(
                "blink_amplitude_uv must exceed 100, got {}",
                self.blink_amplitude_uv
            ));
        }
        let (lo, hi) = self.blink_width_ms;
        if !(lo > 0.0 && lo <= hi && hi.is_finite()) {
            return bad(format!("blink_width_ms range ({lo}, {hi}) is invalid"));
        }
        if self.width_samples(lo) < 2 {
            return bad(format!("blink width {lo} ms is under two samples"));
        }
        if !(self.noise_sd_uv >= 0.0 && self.noise_sd_uv.is_finite()) {
            return bad(format!(
                "noise_sd_uv must be non-negative, got {}",
                self.noise_sd_uv
            ));
        }
        if let Some(t) = self.tremor {
            if !(4.0..=6.0).contains(&t.freq_hz) {
                return bad(format!("tremor freq_hz must lie in 4-6, got {}", t.freq_hz));
            }
            if !(t.amplitude_uv >= 0.0 && t.amplitude_uv.is_finite()) {
                return bad(format!(
                    "tremor amplitude_uv must be non-negative, got {}",
                    t.amplitude_uv
                ));
            }
        }
        let count = self.blink_count();
        if let Some(slot) = self.samples().checked_div(count) {
            let widest = self.width_samples(hi);
            if slot < widest + 2 {
                return bad(format!(
                    "{count} blinks of up to {widest} samples do not fit without overlap in {} samples",
                    self.samples()
                ));
            }
        }
        Ok(())
    }
}

/// Ground-truth placement of one generated blink.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pulse {
    pub start: usize,
    pub width: usize,
}

impl Pulse {
    /// Unit-peak raised-cosine value at sample `j` of the pulse.
    pub fn shape(&self, j: usize) -> f64 {
        let theta = 2.0 * std::f64::consts::PI * j as f64 / self.width as f64;
        0.5 * (1.0 - theta.cos())
    }
}

/// Generated recording plus the pulses that built it.
#[derive(Debug, Clone, PartialEq)]
pub struct Synthetic {
    pub recording: Recording,
    pub pulses: Vec<Pulse>,
    /// Exact fraction of blink-labelled samples.
    pub positive_fraction: f64,
}

/// Builds a raw (microvolt) recording; identical configs give identical output.
pub fn generate(cfg: &SynthConfig) -> Result<Recording> {
    generate_detailed(cfg).map(|s| s.recording)
}

pub fn generate_detailed(cfg: &SynthConfig) -> Result<Synthetic> {
    cfg.validate()?;
    let n = cfg.samples();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);

    let count = cfg.blink_count();
    let mut pulses = Vec::with_capacity(count);
    if let Some(slot) = n.checked_div(count) {
        let (lo, hi) = (
            cfg.width_samples(cfg.blink_width_ms.0),
            cfg.width_samples(cfg.blink_width_ms.1),
        );
        for k in 0..count {
            let width = rng.random_range(lo..=hi);
            // One sample of margin on each side keeps neighbouring labels apart.
            let start = k * slot + 1 + rng.random_range(0..=slot - width - 2);
            pulses.push(Pulse { start, width });
        }
    }

    let mut blink = vec![0.0; n];
    let mut labels = vec![0u8; n];
    for p in &pulses {
        for j in 0..p.width {
            let v = cfg.blink_amplitude_uv * p.shape(j);
            blink[p.start + j] = v;
            if v > LABEL_THRESHOLD * cfg.blink_amplitude_uv {
                labels[p.start + j] = 1;
            }
        }
    }

    let tremor = cfg
        .tremor
        .map(|t| (t, rng.random_range(0.0..std::f64::consts::TAU)));
    let noise = Normal::new(0.0, cfg.noise_sd_uv).map_err(|e| Error::Config(e.to_string()))?;
    let channels: Vec<Vec<f64>> = ELECTRODE_GAINS
        .iter()
        .map(|&(_, gain)| {
            (0..n)
                .map(|t| {
                    let mut v = gain * blink[t] + noise.sample(&mut rng);
                    if let Some((tr, phase)) = tremor {
                        let secs = t as f64 / cfg.sample_rate_hz;
                        v += tr.amplitude_uv
                            * (std::f64::consts::TAU * tr.freq_hz * secs + phase).sin();
                    }
                    v
                })
                .collect()
        })
        .collect();

    let recording = Recording::new(
        cfg.subject_id.clone(),
        cfg.cohort(),
        cfg.sample_rate_hz,
        ELECTRODE_GAINS.iter().map(|(n, _)| n.to_string()).collect(),
        channels,
        labels,
    )?;
    let positive_fraction = recording.positive_fraction();
    Ok(Synthetic {
        recording,
        pulses,
        positive_fraction,
    })
}
