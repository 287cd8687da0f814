//! Signal quality indices, the five-class quality label and mining of
//! quality-divergent segment pairs.

mod ecg;
mod pairs;
mod ppg;

pub use ecg::{
    beat_sqi_from_times, detect_beats, ecg_beat_sqi, ecg_noise_flags, ecg_noise_sqi,
    rr_plausibility, sample_entropy,
};
pub use pairs::{mine_pairs, QualityPair, PAIR_WINDOW_S};
pub use ppg::{
    histogram_entropy, perfusion_index, ppg_entropy_sqi, ppg_perfusion_sqi, ppg_power_sqi,
    ppg_relative_power_sqi, ppg_skewness_sqi, skewness,
};

use std::collections::BTreeMap;
use std::fmt;
use std::io::{BufRead, Write};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::preprocess::Segment;
use crate::SEGMENT_RATE_HZ;

/// Thresholds and weights of the quality pipeline.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SqiConfig {
    /// Heart-rate band for the power and perfusion components, Hz.
    pub power_band_hz: (f64, f64),
    /// Upper edge of the reference band for the power component, Hz.
    pub power_total_hz: f64,
    /// Perfusion index that scores 1.
    pub perfusion_ref: f64,
    /// Skewness that scores 1.
    pub skewness_ref: f64,
    pub relative_band_hz: (f64, f64),
    pub relative_total_hz: f64,
    pub entropy_bins: usize,
    /// ECG sub-window length for noise flagging, s.
    pub ecg_window_s: f64,
    pub energy_z_threshold: f64,
    pub sampen_m: usize,
    /// Sample-entropy tolerance as a multiple of the sub-window std.
    pub sampen_r: f64,
    pub sampen_threshold: f64,
    pub hr_range_bpm: (f64, f64),
    pub rr_ratio_range: (f64, f64),
    /// Weight of the PPG index in the fused score; ECG gets the rest.
    pub ppg_weight: f64,
    /// Weight of the noise component in the ECG index; beats get the rest.
    pub ecg_noise_weight: f64,
}

impl Default for SqiConfig {
    fn default() -> Self {
        SqiConfig {
            power_band_hz: (0.5, 4.0),
            power_total_hz: 15.0,
            perfusion_ref: 0.05,
            skewness_ref: 0.0,
            relative_band_hz: (1.0, 2.25),
            relative_total_hz: 8.0,
            entropy_bins: 16,
            ecg_window_s: 3.0,
            energy_z_threshold: 3.0,
            sampen_m: 2,
            sampen_r: 0.2,
            sampen_threshold: 1.5,
            hr_range_bpm: (30.0, 220.0),
            rr_ratio_range: (2.0 / 3.0, 1.5),
            ppg_weight: 0.5,
            ecg_noise_weight: 0.5,
        }
    }
}

impl SqiConfig {
    pub fn validate(&self) -> Result<()> {
        let unit = |name: &str, v: f64| {
            if (0.0..=1.0).contains(&v) {
                Ok(())
            } else {
                Err(Error::Config(format!(
                    "sqi.{name} must be in [0, 1], got {v}"
                )))
            }
        };
        unit("ppg_weight", self.ppg_weight)?;
        unit("ecg_noise_weight", self.ecg_noise_weight)?;
        let bands = [
            ("power_band_hz", self.power_band_hz),
            ("relative_band_hz", self.relative_band_hz),
            ("hr_range_bpm", self.hr_range_bpm),
            ("rr_ratio_range", self.rr_ratio_range),
        ];
        for (name, (lo, hi)) in bands {
            if !(lo.is_finite() && hi.is_finite() && 0.0 <= lo && lo < hi) {
                return Err(Error::Config(format!(
                    "sqi.{name} must satisfy 0 <= lo < hi, got [{lo}, {hi}]"
                )));
            }
        }
        if !(self.perfusion_ref > 0.0)
            || self.entropy_bins < 2
            || !(self.ecg_window_s > 0.0)
            || self.sampen_m == 0
        {
            return Err(Error::Config(
                "sqi: perfusion_ref and ecg_window_s must be positive, entropy_bins >= 2, sampen_m >= 1".into(),
            ));
        }
        Ok(())
    }
}

/// Five quality classes, ordered from worst to best.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum QualityLabel {
    Bad,
    Poor,
    Acceptable,
    Good,
    Excellent,
}

impl QualityLabel {
    pub const ALL: [QualityLabel; 5] = [
        QualityLabel::Bad,
        QualityLabel::Poor,
        QualityLabel::Acceptable,
        QualityLabel::Good,
        QualityLabel::Excellent,
    ];

    /// Thresholds at 0.9 / 0.7 / 0.5 / 0.3, each closed below.
    pub fn from_sqi(sqi: f64) -> QualityLabel {
        if sqi >= 0.9 {
            QualityLabel::Excellent
        } else if sqi >= 0.7 {
            QualityLabel::Good
        } else if sqi >= 0.5 {
            QualityLabel::Acceptable
        } else if sqi >= 0.3 {
            QualityLabel::Poor
        } else {
            QualityLabel::Bad
        }
    }

    /// Class index, 0 = Bad ... 4 = Excellent.
    pub fn index(self) -> usize {
        self as usize
    }

    pub fn as_str(self) -> &'static str {
        match self {
            QualityLabel::Bad => "Bad",
            QualityLabel::Poor => "Poor",
            QualityLabel::Acceptable => "Acceptable",
            QualityLabel::Good => "Good",
            QualityLabel::Excellent => "Excellent",
        }
    }
}

impl fmt::Display for QualityLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for QualityLabel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        QualityLabel::ALL
            .into_iter()
            .find(|l| l.as_str().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::Validation(format!("unknown quality label '{s}'")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QualityAssessment {
    pub sqi_ppg: f64,
    pub sqi_ecg: f64,
    pub sqi: f64,
    pub label: QualityLabel,
    pub components: BTreeMap<String, f64>,
}

/// Component scores of the PPG channel, in a fixed order.
pub const PPG_COMPONENTS: [&str; 5] = [
    "ppg_power",
    "ppg_perfusion",
    "ppg_skewness",
    "ppg_relative_power",
    "ppg_entropy",
];
pub const ECG_COMPONENTS: [&str; 2] = ["ecg_noise", "ecg_beat"];

fn unit(v: f64) -> f64 {
    if v.is_finite() {
        v.clamp(0.0, 1.0)
    } else {
        0.0
    }
}

/// Scores one PPG window (normalized plus raw amplitudes) and one ECG window,
/// all at `fs`.
pub fn assess_channels(
    ppg: &[f64],
    ppg_raw: &[f64],
    ecg: &[f64],
    fs: f64,
    cfg: &SqiConfig,
) -> QualityAssessment {
    let ppg_scores = [
        ppg_power_sqi(ppg, fs, cfg),
        ppg_perfusion_sqi(ppg_raw, fs, cfg),
        ppg_skewness_sqi(ppg, cfg),
        ppg_relative_power_sqi(ppg, fs, cfg),
        ppg_entropy_sqi(ppg, cfg),
    ]
    .map(unit);
    let ecg_scores = [ecg_noise_sqi(ecg, fs, cfg), ecg_beat_sqi(ecg, fs, cfg)].map(unit);
    let sqi_ppg = unit(ppg_scores.iter().sum::<f64>() / ppg_scores.len() as f64);
    let sqi_ecg =
        unit(cfg.ecg_noise_weight * ecg_scores[0] + (1.0 - cfg.ecg_noise_weight) * ecg_scores[1]);
    let sqi = unit(cfg.ppg_weight * sqi_ppg + (1.0 - cfg.ppg_weight) * sqi_ecg);
    let components = PPG_COMPONENTS
        .iter()
        .zip(ppg_scores)
        .chain(ECG_COMPONENTS.iter().zip(ecg_scores))
        .map(|(k, v)| (k.to_string(), v))
        .collect();
    QualityAssessment {
        sqi_ppg,
        sqi_ecg,
        sqi,
        label: QualityLabel::from_sqi(sqi),
        components,
    }
}

/// Scores a preprocessed segment; perfusion uses the recovered raw PPG.
pub fn assess(segment: &Segment, cfg: &SqiConfig) -> QualityAssessment {
    assess_channels(
        &segment.channel_f64(0),
        &segment.raw_channel(0),
        &segment.channel_f64(1),
        SEGMENT_RATE_HZ,
        cfg,
    )
}

/// Scores many segments, splitting the work over `threads` scoped threads.
/// The result is independent of the thread count.
pub fn assess_all(segments: &[Segment], cfg: &SqiConfig, threads: usize) -> Vec<QualityAssessment> {
    let threads = threads.max(1).min(segments.len().max(1));
    if threads == 1 {
        return segments.iter().map(|s| assess(s, cfg)).collect();
    }
    let chunk = segments.len().div_ceil(threads);
    std::thread::scope(|scope| {
        let handles: Vec<_> = segments
            .chunks(chunk)
            .map(|part| {
                scope.spawn(move || part.iter().map(|s| assess(s, cfg)).collect::<Vec<_>>())
            })
            .collect();
        handles
            .into_iter()
            .flat_map(|h| h.join().expect("scoring thread panicked"))
            .collect()
    })
}

/// One line of the quality manifest.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    /// Position of the segment in its segment file.
    pub index: usize,
    pub subject_id: String,
    pub t_start_s: f64,
    pub sqi_ppg: f64,
    pub sqi_ecg: f64,
    pub sqi: f64,
    pub label: QualityLabel,
    pub components: BTreeMap<String, f64>,
}

impl ManifestEntry {
    pub fn new(index: usize, segment: &Segment, a: QualityAssessment) -> Self {
        ManifestEntry {
            index,
            subject_id: segment.subject_id().to_string(),
            t_start_s: segment.t_start_s(),
            sqi_ppg: a.sqi_ppg,
            sqi_ecg: a.sqi_ecg,
            sqi: a.sqi,
            label: a.label,
            components: a.components,
        }
    }
}

/// Assesses every segment and builds the manifest.
pub fn build_manifest(segments: &[Segment], cfg: &SqiConfig, threads: usize) -> Vec<ManifestEntry> {
    assess_all(segments, cfg, threads)
        .into_iter()
        .enumerate()
        .map(|(i, a)| ManifestEntry::new(i, &segments[i], a))
        .collect()
}

/// Writes one JSON object per line.
pub fn write_jsonl<T: Serialize>(items: &[T], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = std::io::BufWriter::new(file);
    for item in items {
        let line = serde_json::to_string(item).map_err(|e| Error::Validation(e.to_string()))?;
        writeln!(w, "{line}").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Reads one JSON object per non-empty line; errors carry the line number.
pub fn read_jsonl<T: for<'de> Deserialize<'de>>(path: impl AsRef<Path>) -> Result<Vec<T>> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (no, line) in std::io::BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let item = serde_json::from_str(&line)
            .map_err(|e| Error::Validation(format!("{}:{}: {e}", path.display(), no + 1)))?;
        out.push(item);
    }
    Ok(out)
}
