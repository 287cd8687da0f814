//! Record filtering, segmentation, gap interpolation, resampling to 300 Hz
//! and per-segment min-max normalization.

mod container;
mod resample;

pub use container::{decode_segments, encode_segments, read_segments, write_segments};
pub use resample::{resample, resample_to_len};

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::waveio::{Channel, WaveformRecord};
use crate::{SEGMENT_CHANNELS, SEGMENT_LEN, SEGMENT_RATE_HZ};

/// Hop between consecutive segment starts (50 % overlap).
pub const SEGMENT_HOP_SECONDS: f64 = 15.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PreprocessConfig {
    /// Records shorter than this are dropped.
    pub min_duration_s: f64,
    /// Records with a larger fraction of missing samples are dropped.
    pub max_missing_fraction: f64,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        PreprocessConfig {
            min_duration_s: 300.0,
            max_missing_fraction: 0.20,
        }
    }
}

/// A 30 s, two-channel (PPG, ECG) window at 300 Hz, min-max normalized per
/// channel.
///
/// The pre-normalization amplitude range of each channel is kept so that the
/// raw amplitudes can be recovered (`raw = min + x * (max - min)`); the
/// perfusion index depends on them.
#[derive(Clone, Debug, PartialEq)]
pub struct Segment {
    subject_id: String,
    t_start_s: f64,
    channels: [Vec<f32>; SEGMENT_CHANNELS],
    raw_range: [(f64, f64); SEGMENT_CHANNELS],
}

impl Segment {
    pub fn new(
        subject_id: impl Into<String>,
        t_start_s: f64,
        channels: [Vec<f32>; SEGMENT_CHANNELS],
        raw_range: [(f64, f64); SEGMENT_CHANNELS],
    ) -> Result<Self> {
        if !t_start_s.is_finite() {
            return Err(Error::Validation("segment start must be finite".into()));
        }
        for (c, ch) in channels.iter().enumerate() {
            if ch.len() != SEGMENT_LEN {
                return Err(Error::Validation(format!(
                    "channel {c} has {} samples, expected {SEGMENT_LEN}",
                    ch.len()
                )));
            }
            if let Some(i) = ch.iter().position(|v| !(0.0..=1.0).contains(v)) {
                return Err(Error::Validation(format!(
                    "channel {c} sample {i} = {} outside [0, 1]",
                    ch[i]
                )));
            }
            let (lo, hi) = raw_range[c];
            if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
                return Err(Error::Validation(format!(
                    "channel {c} raw range ({lo}, {hi}) invalid"
                )));
            }
        }
        Ok(Segment {
            subject_id: subject_id.into(),
            t_start_s,
            channels,
            raw_range,
        })
    }

    /// Builds a segment from two un-normalized 9000-sample channels.
    pub fn from_raw(
        subject_id: impl Into<String>,
        t_start_s: f64,
        ppg: &[f64],
        ecg: &[f64],
    ) -> Result<Self> {
        let (p, p_range) = normalize_with_range(ppg)?;
        let (e, e_range) = normalize_with_range(ecg)?;
        Segment::new(subject_id, t_start_s, [p, e], [p_range, e_range])
    }

    pub fn subject_id(&self) -> &str {
        &self.subject_id
    }

    pub fn t_start_s(&self) -> f64 {
        self.t_start_s
    }

    /// Normalized samples of channel `c` (0 = PPG, 1 = ECG).
    pub fn channel(&self, c: usize) -> &[f32] {
        &self.channels[c]
    }

    pub fn ppg(&self) -> &[f32] {
        &self.channels[0]
    }

    pub fn ecg(&self) -> &[f32] {
        &self.channels[1]
    }

    pub fn channel_f64(&self, c: usize) -> Vec<f64> {
        self.channels[c].iter().map(|&v| v as f64).collect()
    }

    pub fn raw_range(&self, c: usize) -> (f64, f64) {
        self.raw_range[c]
    }

    /// Pre-normalization amplitudes of channel `c`.
    pub fn raw_channel(&self, c: usize) -> Vec<f64> {
        let (lo, hi) = self.raw_range[c];
        self.channels[c]
            .iter()
            .map(|&v| lo + v as f64 * (hi - lo))
            .collect()
    }
}

/// Keeps records lasting at least `min_duration_s` with at most
/// `max_missing_fraction` missing samples.
pub fn filter_records(records: Vec<WaveformRecord>, cfg: &PreprocessConfig) -> Vec<WaveformRecord> {
    records
        .into_iter()
        .filter(|r| {
            r.duration_s() >= cfg.min_duration_s && r.missing_fraction() <= cfg.max_missing_fraction
        })
        .collect()
}

/// Maps `samples` onto [0, 1]; a flat input maps to all 0.5. Spans below
/// rounding noise (relative 1e-9) count as flat.
pub fn minmax_normalize(samples: &[f64]) -> Vec<f64> {
    let (lo, hi) = min_max(samples);
    if hi - lo > 1e-9 * lo.abs().max(hi.abs()) {
        let span = hi - lo;
        samples
            .iter()
            .map(|&v| ((v - lo) / span).clamp(0.0, 1.0))
            .collect()
    } else {
        vec![0.5; samples.len()]
    }
}

fn min_max(samples: &[f64]) -> (f64, f64) {
    samples
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
            (lo.min(v), hi.max(v))
        })
}

fn normalize_with_range(samples: &[f64]) -> Result<(Vec<f32>, (f64, f64))> {
    if samples.is_empty() {
        return Err(Error::Contract("cannot normalize an empty window".into()));
    }
    if samples.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite(
            "window contains non-finite samples".into(),
        ));
    }
    let range = min_max(samples);
    let norm = minmax_normalize(samples)
        .into_iter()
        .map(|v| v as f32)
        .collect();
    Ok((norm, range))
}

/// Fills masked samples by linear interpolation between the nearest observed
/// neighbours; leading and trailing gaps hold the nearest observed value. An
/// entirely missing window becomes all zeros.
pub fn interpolate_missing(samples: &[f64], missing: &[bool]) -> Vec<f64> {
    let mut out = samples.to_vec();
    let observed: Vec<usize> = (0..samples.len()).filter(|&i| !missing[i]).collect();
    let (first, last) = match (observed.first(), observed.last()) {
        (Some(&f), Some(&l)) => (f, l),
        _ => return vec![0.0; samples.len()],
    };
    for v in out.iter_mut().take(first) {
        *v = samples[first];
    }
    for v in out.iter_mut().skip(last + 1) {
        *v = samples[last];
    }
    for w in observed.windows(2) {
        let (a, b) = (w[0], w[1]);
        if b > a + 1 {
            let (ya, yb) = (samples[a], samples[b]);
            for (i, v) in out.iter_mut().enumerate().take(b).skip(a + 1) {
                let t = (i - a) as f64 / (b - a) as f64;
                *v = ya + t * (yb - ya);
            }
        }
    }
    out
}

fn resampled_channel(record: &WaveformRecord) -> Result<Vec<f64>> {
    let raw: Vec<f64> = record.samples().iter().map(|&v| v as f64).collect();
    let filled = interpolate_missing(&raw, record.missing_mask());
    resample(&filled, record.sampling_rate_hz(), SEGMENT_RATE_HZ)
}

/// Cuts a time-aligned PPG/ECG record pair into 30 s windows every 15 s,
/// anchored at the record start; only windows covered by both channels are
/// emitted. Gaps are interpolated and the channels resampled once over the
/// whole record, so overlapping windows share identical samples.
pub fn segment_pairwise(ppg: &WaveformRecord, ecg: &WaveformRecord) -> Result<Vec<Segment>> {
    if ppg.subject_id() != ecg.subject_id() {
        return Err(Error::Contract(format!(
            "records belong to different subjects ('{}' vs '{}')",
            ppg.subject_id(),
            ecg.subject_id()
        )));
    }
    if (ppg.start_time_s() - ecg.start_time_s()).abs() > 1e-6 {
        return Err(Error::Contract(format!(
            "records are not time-aligned (start {} vs {})",
            ppg.start_time_s(),
            ecg.start_time_s()
        )));
    }
    if ppg.channel() != Channel::Ppg || ecg.channel() != Channel::EcgLeadII {
        return Err(Error::Contract(
            "expected a (PPG, ECG lead II) record pair".into(),
        ));
    }
    let hop = (SEGMENT_HOP_SECONDS * SEGMENT_RATE_HZ).round() as usize;
    let covered = |r: &WaveformRecord| (r.duration_s() * SEGMENT_RATE_HZ + 1e-6).floor() as usize;
    let usable = covered(ppg).min(covered(ecg));
    if usable < SEGMENT_LEN {
        return Ok(Vec::new());
    }
    let p = resampled_channel(ppg)?;
    let e = resampled_channel(ecg)?;
    let usable = usable.min(p.len()).min(e.len());
    let mut out = Vec::new();
    let mut start = 0;
    while start + SEGMENT_LEN <= usable {
        out.push(Segment::from_raw(
            ppg.subject_id(),
            ppg.start_time_s() + start as f64 / SEGMENT_RATE_HZ,
            &p[start..start + SEGMENT_LEN],
            &e[start..start + SEGMENT_LEN],
        )?);
        start += hop;
    }
    Ok(out)
}

/// Filters a corpus, matches PPG with ECG records of the same subject and
/// start time, and segments every pair. Output is ordered by
/// (subject, start time); unmatched records are skipped.
pub fn preprocess_corpus(
    records: Vec<WaveformRecord>,
    cfg: &PreprocessConfig,
) -> Result<Vec<Segment>> {
    let kept = filter_records(records, cfg);
    let mut groups: BTreeMap<(String, u64), [Option<WaveformRecord>; 2]> = BTreeMap::new();
    for r in kept {
        let key = (r.subject_id().to_string(), r.start_time_s().to_bits());
        let slot = match r.channel() {
            Channel::Ppg => 0,
            Channel::EcgLeadII => 1,
        };
        groups.entry(key).or_default()[slot] = Some(r);
    }
    let mut segments = Vec::new();
    for (_, pair) in groups {
        if let [Some(p), Some(e)] = &pair {
            segments.extend(segment_pairwise(p, e)?);
        }
    }
    segments.sort_by(|a, b| {
        a.subject_id()
            .cmp(b.subject_id())
            .then(a.t_start_s().total_cmp(&b.t_start_s()))
    });
    Ok(segments)
}
