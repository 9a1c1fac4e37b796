//! Blink segmentation of frontal EEG.
//!
//! Multi-channel recordings go in, per-sample blink / no-blink labels come
//! out. The crate carries its own small autodiff engine ([`tensor`]), the
//! convolutional and recurrent model zoo ([`nn`]), data ingestion
//! ([`data`]), a synthetic signal generator ([`synth`]), windowed inference
//! with voting ([`segment`]), F1 evaluation ([`metrics`]), training
//! ([`train`]) and the grid-search harness ([`harness`]).

pub mod data;
pub mod error;
pub mod harness;
pub mod metrics;
pub mod nn;
pub mod segment;
pub mod synth;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
