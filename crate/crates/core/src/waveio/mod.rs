//! Raw waveform records, the on-disk corpus container, and the synthetic
//! PPG/ECG generator.

mod container;
pub mod synth;

pub use container::{decode_corpus, encode_corpus, read_corpus, write_corpus};
pub use synth::{
    generate_subject, generate_synthetic, Episode, NoiseKind, SubjectSpec, SyntheticSpec,
};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Physiological channel carried by a record.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Channel {
    Ppg,
    EcgLeadII,
}

impl Channel {
    pub(crate) fn tag(self) -> u8 {
        match self {
            Channel::Ppg => 0,
            Channel::EcgLeadII => 1,
        }
    }

    pub(crate) fn from_tag(tag: u8) -> Option<Channel> {
        match tag {
            0 => Some(Channel::Ppg),
            1 => Some(Channel::EcgLeadII),
            _ => None,
        }
    }
}

/// A single-channel recording at its native sampling rate.
///
/// `missing_mask[i]` is true when `samples[i]` was not acquired; the sample
/// value under a set mask bit carries no meaning.
#[derive(Clone, Debug, PartialEq)]
pub struct WaveformRecord {
    subject_id: String,
    channel: Channel,
    sampling_rate_hz: f64,
    start_time_s: f64,
    samples: Vec<f32>,
    missing_mask: Vec<bool>,
}

impl WaveformRecord {
    pub fn new(
        subject_id: impl Into<String>,
        channel: Channel,
        sampling_rate_hz: f64,
        start_time_s: f64,
        samples: Vec<f32>,
        missing_mask: Vec<bool>,
    ) -> Result<Self> {
        if !(sampling_rate_hz.is_finite() && sampling_rate_hz > 0.0) {
            return Err(Error::Validation(format!(
                "sampling rate must be positive, got {sampling_rate_hz}"
            )));
        }
        if !start_time_s.is_finite() {
            return Err(Error::Validation("start time must be finite".into()));
        }
        if samples.len() != missing_mask.len() {
            return Err(Error::Validation(format!(
                "{} samples but {} mask entries",
                samples.len(),
                missing_mask.len()
            )));
        }
        Ok(WaveformRecord {
            subject_id: subject_id.into(),
            channel,
            sampling_rate_hz,
            start_time_s,
            samples,
            missing_mask,
        })
    }

    /// A record with no missing samples.
    pub fn complete(
        subject_id: impl Into<String>,
        channel: Channel,
        sampling_rate_hz: f64,
        start_time_s: f64,
        samples: Vec<f32>,
    ) -> Result<Self> {
        let mask = vec![false; samples.len()];
        Self::new(
            subject_id,
            channel,
            sampling_rate_hz,
            start_time_s,
            samples,
            mask,
        )
    }

    pub fn subject_id(&self) -> &str {
        &self.subject_id
    }

    pub fn channel(&self) -> Channel {
        self.channel
    }

    pub fn sampling_rate_hz(&self) -> f64 {
        self.sampling_rate_hz
    }

    pub fn start_time_s(&self) -> f64 {
        self.start_time_s
    }

    pub fn samples(&self) -> &[f32] {
        &self.samples
    }

    pub fn missing_mask(&self) -> &[bool] {
        &self.missing_mask
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_s(&self) -> f64 {
        self.samples.len() as f64 / self.sampling_rate_hz
    }

    pub fn missing_fraction(&self) -> f64 {
        if self.missing_mask.is_empty() {
            return 0.0;
        }
        self.missing_mask.iter().filter(|&&m| m).count() as f64 / self.missing_mask.len() as f64
    }
}
