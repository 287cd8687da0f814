use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use serde::Serialize;

use qualityfm::autodiff::primitive_checks;
use qualityfm::config::RunConfig;
use qualityfm::downstream::{evaluate, finetune, read_model, write_model, LabelRecord, Task};
use qualityfm::experiment::{ablate, generate_corpus, window_wins, Axis, DeskCorpus, LOSS_GRID};
use qualityfm::model::{
    encoder_grad_check, equivalence_check, gradcheck_config, read_checkpoint, write_checkpoint,
};
use qualityfm::preprocess::{preprocess_corpus, read_segments, write_segments};
use qualityfm::sqi::{
    build_manifest, mine_pairs, read_jsonl, write_jsonl, ManifestEntry, QualityPair,
};
use qualityfm::train::{pretrain, pretrain_grad_check, PairSource};
use qualityfm::waveio::{generate_synthetic, read_corpus, write_corpus, NoiseKind, SyntheticSpec};
use qualityfm::Error;

/// Quality-aware PPG/ECG foundation-model pipeline.
#[derive(Parser)]
#[command(name = "qualityfm", version)]
struct Cli {
    /// Run configuration (TOML); built-in defaults when absent.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Overrides the configured thread count.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic PPG/ECG corpus.
    GenSynth {
        #[arg(long, required_unless_present = "desk")]
        bpm: Option<f64>,
        /// none, gaussian, baseline_wander, motion_burst or dropout.
        #[arg(long, required_unless_present = "desk")]
        noise: Option<String>,
        #[arg(long, required_unless_present = "desk")]
        level: Option<f64>,
        /// Seconds.
        #[arg(long, required_unless_present = "desk")]
        duration: Option<f64>,
        #[arg(long, default_value_t = 500.0)]
        rate: f64,
        #[arg(long)]
        subject: Option<String>,
        /// Generate the multi-subject corpus of the `experiment.corpus` section instead.
        #[arg(long, conflicts_with_all = ["bpm", "noise", "level", "duration", "subject"])]
        desk: bool,
        #[arg(long)]
        out: PathBuf,
    },
    /// Segment, resample and normalize a corpus into a segment file.
    Preprocess {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score segment quality; writes a JSONL manifest.
    Sqi {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Mine quality-divergent pairs from a manifest; writes JSONL.
    Pairs {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Self-distillation pretraining; saves the teacher encoder.
    Pretrain {
        #[arg(long)]
        pairs: PathBuf,
        /// Segment file the pairs index into.
        #[arg(long)]
        segments: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Per-step JSONL training log.
        #[arg(long)]
        log: Option<PathBuf>,
    },
    /// Fine-tune a pretrained encoder on a labelled task.
    Finetune {
        #[arg(long)]
        task: Task,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Segment file.
        #[arg(long)]
        data: PathBuf,
        /// JSONL of {"index": .., "target": [..]} records.
        #[arg(long)]
        labels: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluate a fine-tuned model on held-out subjects.
    Eval {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        labels: PathBuf,
        /// JSON report.
        #[arg(long)]
        report: PathBuf,
        /// Per-segment predictions as JSONL.
        #[arg(long)]
        predictions: Option<PathBuf>,
        /// Also score subjects seen during fine-tuning.
        #[arg(long)]
        all_subjects: bool,
    },
    /// Finite-difference gradient and attention checks.
    Gradcheck {
        #[arg(long, value_enum, default_value_t = Scope::All)]
        scope: Scope,
        /// JSON report of every check.
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Run an ablation axis on the configured synthetic corpus.
    Ablate {
        /// window, loss or seed.
        #[arg(long)]
        axis: Axis,
        /// Comma-separated values; defaults to the full axis.
        #[arg(long, value_delimiter = ',')]
        values: Vec<String>,
        /// JSON table.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Scope {
    All,
    Primitives,
    Encoder,
    Loss,
    Attention,
}

/// Raised when checks ran but some failed their threshold.
#[derive(Debug)]
struct ChecksFailed(usize);

impl std::fmt::Display for ChecksFailed {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{} check(s) above threshold", self.0)
    }
}

impl std::error::Error for ChecksFailed {}

fn load_config(cli: &Cli) -> Result<RunConfig> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(t) = cli.threads {
        cfg.threads = t;
    }
    cfg.resolve()?;
    Ok(cfg)
}

fn write_json<T: Serialize>(value: &T, path: &Path) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

#[derive(Serialize)]
struct CheckRow {
    name: String,
    /// Relative gradient error, or absolute output difference for attention.
    max_error: f64,
    threshold: f64,
    pass: bool,
}

fn gradcheck(scope: Scope, seed: u64, report: Option<&Path>) -> Result<()> {
    let mut rows = Vec::new();
    let wants = |s: Scope| scope == Scope::All || scope == s;
    if wants(Scope::Primitives) {
        for r in primitive_checks(10)? {
            rows.push((format!("primitive/{}", r.name), r.max_rel_error, 1e-6));
        }
    }
    if wants(Scope::Encoder) {
        rows.push((
            "encoder".into(),
            encoder_grad_check(&gradcheck_config(), seed)?,
            1e-4,
        ));
    }
    if wants(Scope::Loss) {
        rows.push(("pretrain_loss".into(), pretrain_grad_check(seed)?, 1e-4));
    }
    if wants(Scope::Attention) {
        let (wide, self_only) = equivalence_check(50, seed)?;
        rows.push(("attention/wide_window_vs_full".into(), wide, 1e-10));
        rows.push(("attention/zero_window_vs_identity".into(), self_only, 0.0));
    }
    let rows: Vec<CheckRow> = rows
        .into_iter()
        .map(|(name, err, threshold)| CheckRow {
            name,
            max_error: err,
            threshold,
            pass: err <= threshold,
        })
        .collect();
    for r in &rows {
        println!(
            "{:<40} {:>12.3e} <= {:<8.0e} {}",
            r.name,
            r.max_error,
            r.threshold,
            if r.pass { "ok" } else { "FAIL" }
        );
    }
    if let Some(p) = report {
        write_json(&rows, p)?;
    }
    let failed = rows.iter().filter(|r| !r.pass).count();
    if failed > 0 {
        return Err(ChecksFailed(failed).into());
    }
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    let cfg = load_config(&cli)?;
    match cli.command {
        Command::GenSynth {
            bpm,
            noise,
            level,
            duration,
            rate,
            subject,
            desk,
            out,
        } => {
            let records = if desk {
                generate_corpus(&cfg.experiment.corpus, cfg.seed)?
            } else {
                let kind: NoiseKind = noise.as_deref().unwrap_or("none").parse()?;
                let mut spec = SyntheticSpec::new(
                    bpm.unwrap_or_default(),
                    kind,
                    level.unwrap_or_default(),
                    duration.unwrap_or_default(),
                    cfg.seed,
                );
                spec.sampling_rate_hz = rate;
                if let Some(s) = subject {
                    spec.subject_id = s;
                }
                let (ppg, ecg) = generate_synthetic(&spec)?;
                vec![ppg, ecg]
            };
            write_corpus(&records, &out)?;
            eprintln!("wrote {} records to {}", records.len(), out.display());
        }
        Command::Preprocess { input, out } => {
            let records = read_corpus(&input)?;
            let n = records.len();
            let segments = preprocess_corpus(records, &cfg.preprocess)?;
            write_segments(&segments, &out)?;
            eprintln!("{n} records -> {} segments", segments.len());
        }
        Command::Sqi { input, out } => {
            let segments = read_segments(&input)?;
            let manifest = build_manifest(&segments, &cfg.sqi, cfg.threads);
            write_jsonl(&manifest, &out)?;
            eprintln!("scored {} segments", manifest.len());
        }
        Command::Pairs { input, out } => {
            let manifest: Vec<ManifestEntry> = read_jsonl(&input)?;
            let pairs = mine_pairs(&manifest);
            write_jsonl(&pairs, &out)?;
            eprintln!("{} pairs from {} segments", pairs.len(), manifest.len());
        }
        Command::Pretrain {
            pairs,
            segments,
            out,
            log,
        } => {
            let segs = read_segments(&segments)?;
            let pairs: Vec<QualityPair> = read_jsonl(&pairs)?;
            let mut writer = match &log {
                Some(p) => Some(BufWriter::new(
                    File::create(p).with_context(|| format!("creating {}", p.display()))?,
                )),
                None => None,
            };
            let state = pretrain(
                &cfg.model,
                &cfg.pretrain,
                PairSource {
                    segments: &segs,
                    pairs: &pairs,
                },
                |l| {
                    if let Some(w) = writer.as_mut() {
                        let line = serde_json::to_string(l)
                            .map_err(|e| Error::Validation(e.to_string()))?;
                        writeln!(w, "{line}")
                            .map_err(|e| Error::Validation(format!("writing log: {e}")))?;
                    }
                    if l.step % 10 == 0 {
                        eprintln!(
                            "step {:>6}  L_pre {:.5}  L_dis {:.5}",
                            l.step, l.l_pre, l.l_dis
                        );
                    }
                    Ok(())
                },
            )?;
            if let Some(mut w) = writer {
                w.flush().context("flushing training log")?;
            }
            write_checkpoint(&out, &state.teacher)?;
            eprintln!("{} steps; teacher saved to {}", state.step, out.display());
        }
        Command::Finetune {
            task,
            checkpoint,
            data,
            labels,
            out,
        } => {
            let encoder = read_checkpoint(&checkpoint)?;
            let segments = read_segments(&data)?;
            let labels: Vec<LabelRecord> = read_jsonl(&labels)?;
            let model = finetune(encoder, &segments, &labels, task, &cfg.finetune)?;
            write_model(&out, &model)?;
            eprintln!(
                "fine-tuned on {} subjects; model saved to {}",
                model.train_subjects.len(),
                out.display()
            );
        }
        Command::Eval {
            model,
            data,
            labels,
            report,
            predictions,
            all_subjects,
        } => {
            let model = read_model(&model)?;
            let segments = read_segments(&data)?;
            let labels: Vec<LabelRecord> = read_jsonl(&labels)?;
            let (rep, preds) = evaluate(&model, &segments, &labels, all_subjects, cfg.threads)?;
            write_json(&rep, &report)?;
            if let Some(p) = predictions {
                write_jsonl(&preds, &p)?;
            }
            println!("{}", serde_json::to_string_pretty(&rep)?);
        }
        Command::Gradcheck { scope, report } => gradcheck(scope, cfg.seed, report.as_deref())?,
        Command::Ablate { axis, values, out } => {
            let values = if values.is_empty() {
                match axis {
                    Axis::Window => ["0", "2", "4", "8", "16"].map(String::from).to_vec(),
                    Axis::Loss => LOSS_GRID.map(String::from).to_vec(),
                    Axis::Seed => (0..cfg.experiment.repeats).map(|i| i.to_string()).collect(),
                }
            } else {
                values
            };
            let corpus = DeskCorpus::build(&cfg)?;
            eprintln!(
                "corpus: {} segments, {} pairs, labels (Bad..Excellent) {:?}",
                corpus.segments.len(),
                corpus.pairs.len(),
                corpus.label_counts()
            );
            let table = ablate(&corpus, &cfg, axis, &values, |row| {
                eprintln!(
                    "{}: probe {:.4} (random init {:.4}, chance {:.4}), L_pre ratio {:.3}",
                    row.setting,
                    row.report.probe_accuracy,
                    row.report.random_probe_accuracy,
                    row.report.chance,
                    row.report.loss_ratio
                );
            })?;
            print!("{}", table.render());
            if axis == Axis::Seed {
                let (wins, n) = window_wins(&table);
                println!(
                    "window 0 probes worse than window {} in {wins} of {n} seeds",
                    cfg.model.window
                );
            }
            if let Some(p) = out {
                write_json(&table, &p)?;
            }
        }
    }
    Ok(())
}

/// Exit code and label of an error's category.
fn category(e: &anyhow::Error) -> (u8, &'static str) {
    if e.downcast_ref::<ChecksFailed>().is_some() {
        return (1, "check");
    }
    match e.downcast_ref::<Error>() {
        Some(Error::Validation(_) | Error::Contract(_) | Error::Shape { .. }) => (3, "validation"),
        Some(Error::Format { .. }) => (4, "format"),
        Some(Error::Config(_)) => (5, "config"),
        Some(Error::NonFinite(_)) => (6, "numeric"),
        Some(Error::Io { .. }) => (7, "io"),
        None if e.downcast_ref::<std::io::Error>().is_some() => (7, "io"),
        None => (8, "internal"),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let (code, label) = category(&e);
            eprintln!("error [{label}]: {e:#}");
            ExitCode::from(code)
        }
    }
}
