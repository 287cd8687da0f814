//! Desk-scale experiments: a synthetic multi-subject corpus, the pretraining
//! smoke run with its linear quality probe, and the ablation axes.

use std::collections::BTreeSet;
use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::downstream::{extract_features, split_by_subject, LinearProbe};
use crate::error::{Error, Result};
use crate::model::Encoder;
use crate::preprocess::{preprocess_corpus, Segment};
use crate::sqi::{build_manifest, mine_pairs, ManifestEntry, QualityLabel, QualityPair};
use crate::train::{pretrain, PairSource, StepLog, TrainState};
use crate::waveio::{generate_subject, Episode, NoiseKind, SubjectSpec, WaveformRecord};

/// Shape of the synthetic corpus: every subject is a run of fixed-length
/// episodes, each with a random artifact kind and level.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CorpusConfig {
    pub subjects: usize,
    pub episodes: usize,
    pub episode_s: f64,
    pub sampling_rate_hz: f64,
    /// Heart rate drawn uniformly per subject.
    pub heart_rate_bpm: (f64, f64),
    /// Artifact level drawn log-uniformly per episode.
    pub noise_level: (f64, f64),
    /// Probability that an episode has no artifact.
    pub clean_probability: f64,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        CorpusConfig {
            subjects: 24,
            episodes: 8,
            episode_s: 60.0,
            sampling_rate_hz: 250.0,
            heart_rate_bpm: (55.0, 110.0),
            noise_level: (0.02, 2.0),
            clean_probability: 0.2,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub corpus: CorpusConfig,
    /// Pairs drawn from the training subjects for a smoke run.
    pub pairs: usize,
    /// Fraction of subjects held out from pretraining and probe fitting.
    pub holdout_fraction: f64,
    /// Trailing window (steps) of the smoothed final loss.
    pub smooth_window: usize,
    /// Seeded repetitions of the window comparison.
    pub repeats: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            corpus: CorpusConfig::default(),
            pairs: 500,
            holdout_fraction: 0.25,
            smooth_window: 20,
            repeats: 10,
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        let c = &self.corpus;
        let bad = |m: &str| Err(Error::Config(format!("experiment: {m}")));
        if c.subjects < 2 || c.episodes == 0 {
            return bad("corpus needs at least 2 subjects and 1 episode");
        }
        if !(c.episode_s > 0.0 && c.sampling_rate_hz > 0.0) {
            return bad("episode_s and sampling_rate_hz must be positive");
        }
        if !(c.heart_rate_bpm.0 > 20.0
            && c.heart_rate_bpm.0 <= c.heart_rate_bpm.1
            && c.heart_rate_bpm.1 < 300.0)
        {
            return bad("heart_rate_bpm must be an increasing range inside (20, 300)");
        }
        if !(c.noise_level.0 > 0.0 && c.noise_level.0 <= c.noise_level.1) {
            return bad("noise_level must be an increasing positive range");
        }
        if !(0.0..=1.0).contains(&c.clean_probability)
            || !(0.0..1.0).contains(&self.holdout_fraction)
        {
            return bad("clean_probability must lie in [0, 1] and holdout_fraction in [0, 1)");
        }
        if self.pairs == 0 || self.smooth_window == 0 || self.repeats == 0 {
            return bad("pairs, smooth_window and repeats must be positive");
        }
        Ok(())
    }
}

/// Per-subject recording plans of the synthetic corpus.
pub fn subject_specs(cfg: &CorpusConfig, seed: u64) -> Vec<SubjectSpec> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let artifacts = &NoiseKind::ALL[1..];
    let (lo, hi) = (cfg.noise_level.0.ln(), cfg.noise_level.1.ln());
    (0..cfg.subjects)
        .map(|s| {
            let heart_rate_bpm = rng.random_range(cfg.heart_rate_bpm.0..=cfg.heart_rate_bpm.1);
            let episodes = (0..cfg.episodes)
                .map(|_| {
                    let clean = rng.random::<f64>() < cfg.clean_probability;
                    let kind = artifacts[rng.random_range(0..artifacts.len())];
                    let level = rng.random_range(lo..=hi).exp();
                    Episode {
                        noise_kind: if clean { NoiseKind::None } else { kind },
                        noise_level: if clean { 0.0 } else { level },
                        duration_s: cfg.episode_s,
                    }
                })
                .collect();
            SubjectSpec {
                subject_id: format!("subj{s:03}"),
                heart_rate_bpm,
                sampling_rate_hz: cfg.sampling_rate_hz,
                start_time_s: 0.0,
                seed: rng.random(),
                episodes,
            }
        })
        .collect()
}

pub fn generate_corpus(cfg: &CorpusConfig, seed: u64) -> Result<Vec<WaveformRecord>> {
    let mut records = Vec::new();
    for spec in subject_specs(cfg, seed) {
        let (ppg, ecg) = generate_subject(&spec)?;
        records.push(ppg);
        records.push(ecg);
    }
    Ok(records)
}

/// Segments, their quality manifest and every quality-divergent pair.
#[derive(Clone, Debug)]
pub struct DeskCorpus {
    pub segments: Vec<Segment>,
    pub manifest: Vec<ManifestEntry>,
    pub pairs: Vec<QualityPair>,
}

impl DeskCorpus {
    /// Runs the full data pipeline on the configured synthetic corpus.
    pub fn build(cfg: &RunConfig) -> Result<DeskCorpus> {
        let records = generate_corpus(&cfg.experiment.corpus, cfg.seed)?;
        let segments = preprocess_corpus(records, &cfg.preprocess)?;
        let manifest = build_manifest(&segments, &cfg.sqi, cfg.threads);
        let pairs = mine_pairs(&manifest);
        Ok(DeskCorpus {
            segments,
            manifest,
            pairs,
        })
    }

    /// Segment count per quality label, worst first.
    pub fn label_counts(&self) -> [usize; 5] {
        let mut c = [0; 5];
        self.manifest.iter().for_each(|e| c[e.label.index()] += 1);
        c
    }
}

/// Outcome of one smoke run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SmokeReport {
    pub seed: u64,
    pub window: usize,
    pub lambda_amp: f64,
    pub lambda_pha: f64,
    pub steps: usize,
    pub pairs: usize,
    /// L_pre of the first step.
    pub initial_loss: f64,
    /// Mean L_pre over the trailing smoothing window.
    pub final_loss: f64,
    pub loss_ratio: f64,
    /// Held-out accuracy of the probe on pretrained teacher features.
    pub probe_accuracy: f64,
    /// The same probe on the encoder at its initialization.
    pub random_probe_accuracy: f64,
    /// Held-out accuracy of always predicting the most frequent training label.
    pub chance: f64,
    pub train_segments: usize,
    pub test_segments: usize,
}

/// Pretrained teacher plus the report and the step log.
pub struct SmokeOutcome {
    pub report: SmokeReport,
    pub state: TrainState,
    pub log: Vec<StepLog>,
}

/// Pretrains on pairs from the training subjects, then fits a 5-class
/// linear quality probe on pooled teacher features of every training
/// segment and scores it on the held-out subjects.
pub fn smoke_run(corpus: &DeskCorpus, cfg: &RunConfig) -> Result<SmokeOutcome> {
    let exp = &cfg.experiment;
    let subjects: Vec<&str> = corpus.segments.iter().map(Segment::subject_id).collect();
    let split = split_by_subject(&subjects, exp.holdout_fraction, cfg.seed)?;
    let train_subjects: BTreeSet<&str> = split.train.iter().map(|&i| subjects[i]).collect();

    let mut pairs: Vec<QualityPair> = corpus
        .pairs
        .iter()
        .filter(|p| train_subjects.contains(p.subject_id.as_str()))
        .cloned()
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    pairs.shuffle(&mut rng);
    pairs.truncate(exp.pairs);
    if pairs.is_empty() {
        return Err(Error::Validation(
            "the training subjects yield no quality-divergent pairs".into(),
        ));
    }

    let mut log = Vec::new();
    let state = pretrain(
        &cfg.model,
        &cfg.pretrain,
        PairSource {
            segments: &corpus.segments,
            pairs: &pairs,
        },
        |l| {
            log.push(l.clone());
            Ok(())
        },
    )?;
    let initial_loss = log.first().map_or(f64::NAN, |l| l.l_pre);
    let tail = &log[log.len().saturating_sub(exp.smooth_window)..];
    let final_loss = tail.iter().map(|l| l.l_pre).sum::<f64>() / tail.len() as f64;

    let labels: Vec<usize> = corpus.manifest.iter().map(|e| e.label.index()).collect();
    let pick = |idx: &[usize]| -> (Vec<&Segment>, Vec<usize>) {
        (
            idx.iter().map(|&i| &corpus.segments[i]).collect(),
            idx.iter().map(|&i| labels[i]).collect(),
        )
    };
    let (train_segs, train_y) = pick(&split.train);
    let (test_segs, test_y) = pick(&split.test);
    let classes = QualityLabel::ALL.len();
    let probe_acc = |enc: &Encoder| -> Result<f64> {
        let xtr = extract_features(enc, &train_segs, cfg.threads)?;
        let xte = extract_features(enc, &test_segs, cfg.threads)?;
        Ok(LinearProbe::fit(&xtr, &train_y, classes, &cfg.probe)?.accuracy(&xte, &test_y))
    };
    let probe_accuracy = probe_acc(&state.teacher)?;
    let random_probe_accuracy = probe_acc(&Encoder::new(cfg.model.clone(), cfg.pretrain.seed)?)?;

    let mut counts = vec![0usize; classes];
    train_y.iter().for_each(|&y| counts[y] += 1);
    let majority = (0..classes).rev().max_by_key(|&c| counts[c]).unwrap_or(0);
    let chance = if test_y.is_empty() {
        0.0
    } else {
        test_y.iter().filter(|&&y| y == majority).count() as f64 / test_y.len() as f64
    };

    let report = SmokeReport {
        seed: cfg.seed,
        window: cfg.model.window,
        lambda_amp: cfg.pretrain.lambda_amp,
        lambda_pha: cfg.pretrain.lambda_pha,
        steps: log.len(),
        pairs: pairs.len(),
        initial_loss,
        final_loss,
        loss_ratio: final_loss / initial_loss,
        probe_accuracy,
        random_probe_accuracy,
        chance,
        train_segments: train_segs.len(),
        test_segments: test_segs.len(),
    };
    Ok(SmokeOutcome { report, state, log })
}

/// What an ablation varies.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Axis {
    /// Attention window sizes.
    Window,
    /// On/off grid of the amplitude and phase reconstruction terms.
    Loss,
    /// Seeded repetitions, comparing two window sizes per seed.
    Seed,
}

impl std::str::FromStr for Axis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "window" => Ok(Axis::Window),
            "loss" => Ok(Axis::Loss),
            "seed" => Ok(Axis::Seed),
            _ => Err(Error::Validation(format!(
                "unknown ablation axis '{s}' (window, loss, seed)"
            ))),
        }
    }
}

/// Loss-grid settings, named by the reconstruction terms left on.
pub const LOSS_GRID: [&str; 4] = ["amp+pha", "amp", "pha", "none"];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub setting: String,
    pub report: SmokeReport,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationTable {
    pub axis: Axis,
    pub rows: Vec<AblationRow>,
}

impl AblationTable {
    /// Fixed-width text table, one row per run.
    pub fn render(&self) -> String {
        let mut s = format!(
            "{:<10} {:>6} {:>7} {:>7} {:>6} {:>9} {:>9} {:>7} {:>9} {:>10} {:>7}\n",
            "setting",
            "seed",
            "window",
            "l_amp",
            "steps",
            "L_pre0",
            "L_preN",
            "ratio",
            "probe",
            "probe_rnd",
            "chance"
        );
        for r in &self.rows {
            let m = &r.report;
            let _ = writeln!(
                s,
                "{:<10} {:>6} {:>7} {:>7.2} {:>6} {:>9.4} {:>9.4} {:>7.3} {:>9.4} {:>10.4} {:>7.4}",
                r.setting,
                m.seed,
                m.window,
                m.lambda_amp,
                m.steps,
                m.initial_loss,
                m.final_loss,
                m.loss_ratio,
                m.probe_accuracy,
                m.random_probe_accuracy,
                m.chance
            );
        }
        s
    }
}

fn loss_setting(cfg: &mut RunConfig, name: &str) -> Result<()> {
    let (amp, pha) = match name {
        "amp+pha" => (true, true),
        "amp" => (true, false),
        "pha" => (false, true),
        "none" => (false, false),
        _ => {
            return Err(Error::Validation(format!(
                "unknown loss setting '{name}' (one of {})",
                LOSS_GRID.join(", ")
            )))
        }
    };
    let base = (cfg.pretrain.lambda_amp, cfg.pretrain.lambda_pha);
    cfg.pretrain.lambda_amp = if amp { base.0 } else { 0.0 };
    cfg.pretrain.lambda_pha = if pha { base.1 } else { 0.0 };
    Ok(())
}

/// Runs one smoke run per value of the axis on a shared corpus.
///
/// Window values are sizes, loss values are names from [`LOSS_GRID`], seed
/// values are seed offsets; each seed runs two rows, at window 0 and at the
/// configured window.
pub fn ablate(
    corpus: &DeskCorpus,
    base: &RunConfig,
    axis: Axis,
    values: &[String],
    mut on_row: impl FnMut(&AblationRow),
) -> Result<AblationTable> {
    if values.is_empty() {
        return Err(Error::Validation(
            "ablation needs at least one value".into(),
        ));
    }
    let mut rows = Vec::new();
    let mut push = |cfg: RunConfig, setting: String| -> Result<()> {
        cfg.validate()?;
        let row = AblationRow {
            setting,
            report: smoke_run(corpus, &cfg)?.report,
        };
        on_row(&row);
        rows.push(row);
        Ok(())
    };
    for v in values {
        let mut cfg = base.clone();
        match axis {
            Axis::Window => {
                cfg.model.window = v.parse().map_err(|_| {
                    Error::Validation(format!("window value '{v}' is not an integer"))
                })?;
                push(cfg, format!("w={v}"))?;
            }
            Axis::Loss => {
                loss_setting(&mut cfg, v)?;
                push(cfg, v.clone())?;
            }
            Axis::Seed => {
                let offset: u64 = v.parse().map_err(|_| {
                    Error::Validation(format!("seed value '{v}' is not an integer"))
                })?;
                cfg.seed = base.seed + offset;
                cfg.resolve()?;
                let mut off = cfg.clone();
                off.model.window = 0;
                push(off, "w=0".into())?;
                push(cfg, format!("w={}", base.model.window))?;
            }
        }
    }
    Ok(AblationTable { axis, rows })
}

/// Seeds (row pairs of a seed table) where window 0 probes strictly worse
/// than the configured window.
pub fn window_wins(table: &AblationTable) -> (usize, usize) {
    let pairs: Vec<&[AblationRow]> = table.rows.chunks(2).filter(|c| c.len() == 2).collect();
    let wins = pairs
        .iter()
        .filter(|c| c[0].report.probe_accuracy < c[1].report.probe_accuracy)
        .count();
    (wins, pairs.len())
}
