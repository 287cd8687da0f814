//! Quality-aware foundation-model pipeline for paired PPG / ECG waveforms.
//!
//! The crate covers the whole desk-scale pipeline:
//!
//! - [`waveio`]: raw waveform records, the binary corpus container and a
//!   synthetic PPG/ECG generator with controllable artifacts.
//! - [`preprocess`]: record filtering, 30 s / 15 s-hop segmentation, gap
//!   interpolation, windowed-sinc resampling and min-max normalization.
//! - [`sqi`]: signal quality indices, the five-class quality label and
//!   quality-divergent pair mining.
//! - [`spectral`]: DFT, amplitude/phase spectra and their inverse.
//! - [`autodiff`]: a small reverse-mode tensor engine with a finite-difference
//!   gradient checker.
//! - [`model`]: the windowed-sparse-attention encoder and its heads.
//! - [`train`]: teacher/student self-distillation pretraining.
//! - [`downstream`]: fine-tuning heads, metrics and evaluation.
//! - [`config`]: TOML run configuration with includes.
//! - [`experiment`]: desk-scale experiments (linear probes, ablations).

pub mod autodiff;
mod binio;
pub mod config;
pub mod downstream;
pub mod error;
pub mod experiment;
pub mod model;
pub mod preprocess;
pub mod spectral;
pub mod sqi;
pub mod train;
pub mod waveio;

pub use error::{Error, Result};

/// Segment length in seconds.
pub const SEGMENT_SECONDS: f64 = 30.0;
/// Sampling rate of every segment after resampling.
pub const SEGMENT_RATE_HZ: f64 = 300.0;
/// Samples per channel in a segment.
pub const SEGMENT_LEN: usize = 9000;
/// Channels per segment (PPG, ECG lead II).
pub const SEGMENT_CHANNELS: usize = 2;
