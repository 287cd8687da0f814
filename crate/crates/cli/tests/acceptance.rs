//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! Criteria that fail are reported, not hidden; the process exits 0 unless
//! `ACCEPTANCE_STRICT=1` is set. `ACCEPTANCE_ONLY=3,7` runs a subset.

use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use qualityfm::autodiff::{primitive_checks, Graph, Tensor};
use qualityfm::config::RunConfig;
use qualityfm::downstream::{classify_metrics, rank_auc, regress_metrics};
use qualityfm::experiment::{smoke_run, AblationTable, DeskCorpus};
use qualityfm::model::{
    encoder_grad_check, equivalence_check, gradcheck_config, pwsa_attention, tokenize, window_mask,
    AttentionMask, Encoder, ModelConfig, Preset,
};
use qualityfm::preprocess::Segment;
use qualityfm::spectral::{dft_full, inverse_check, spectral_target};
use qualityfm::sqi::{assess, mine_pairs, ManifestEntry, QualityLabel, SqiConfig, PAIR_WINDOW_S};
use qualityfm::train::{
    distillation_loss, ema_momentum, pair_loss, pretrain_grad_check, soft_distribution,
    PretrainConfig, ReconTarget,
};

/// Outcome of one criterion: pass flag and a one-line summary.
type Outcome = anyhow::Result<(bool, String)>;

fn workspace_root() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..")
}

fn desk_config() -> anyhow::Result<RunConfig> {
    Ok(RunConfig::load(workspace_root().join("configs/desk.toml"))?)
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    v[v.len() / 2]
}

fn c1_gradients() -> Outcome {
    let t = Instant::now();
    let prims = primitive_checks(10)?;
    let worst = prims.iter().map(|r| r.max_rel_error).fold(0.0, f64::max);
    let enc = encoder_grad_check(&gradcheck_config(), 0)?;
    let loss = pretrain_grad_check(0)?;
    let secs = t.elapsed().as_secs_f64();
    let pass = worst <= 1e-6 && enc <= 1e-4 && loss <= 1e-4 && secs < 60.0;
    Ok((
        pass,
        format!(
            "{} primitives max {worst:.2e} (<= 1e-6); encoder {enc:.2e}, L_pre {loss:.2e} (<= 1e-4); {secs:.1} s (< 60)",
            prims.len()
        ),
    ))
}

fn c2_attention_equivalence() -> Outcome {
    let (wide, self_only) = equivalence_check(50, 2)?;
    let identity = (1..20).all(|n| {
        let m = window_mask(n, 0);
        (0..n * n).all(|x| m[x] == (x / n == x % n))
    });
    Ok((
        wide <= 1e-10 && self_only == 0.0 && identity,
        format!("w >= 2(n-1) vs full: max |diff| {wide:.2e} (<= 1e-10); w = 0 vs V: {self_only:e}; identity mask {identity}"),
    ))
}

/// Median wall time of `pwsa_attention` (hidden 512, 4 heads) per case.
/// Trials are interleaved across cases so that machine drift hits all of
/// them alike.
fn time_attention(
    cases: &[(usize, AttentionMask)],
    trials: usize,
    rng: &mut ChaCha8Rng,
) -> anyhow::Result<Vec<f64>> {
    let hidden = 512;
    let inputs: Vec<[Tensor; 3]> = cases
        .iter()
        .map(|&(n, _)| {
            [(); 3].map(|_| {
                Tensor::matrix(
                    n,
                    hidden,
                    (0..n * hidden)
                        .map(|_| rng.random_range(-1.0..1.0))
                        .collect(),
                )
            })
        })
        .collect();
    let mut times = vec![Vec::with_capacity(trials); cases.len()];
    for trial in 0..=trials {
        for (c, ((_, mask), [q, k, v])) in cases.iter().zip(&inputs).enumerate() {
            let t = Instant::now();
            std::hint::black_box(pwsa_attention(q, k, v, 4, mask)?);
            // trial 0 is a warm-up
            if trial > 0 {
                times[c].push(t.elapsed().as_secs_f64());
            }
        }
    }
    Ok(times.into_iter().map(median).collect())
}

fn c3_scaling() -> Outcome {
    let t = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let ns = [150, 300, 600];
    let win = time_attention(&ns.map(|n| (n, AttentionMask::Window(8))), 20, &mut rng)?;
    let full = time_attention(
        &ns.map(|n| (n, AttentionMask::Dense(vec![true; n * n]))),
        20,
        &mut rng,
    )?;
    let ratio = |v: &[f64]| [v[1] / v[0], v[2] / v[1]];
    let (rw, rf) = (ratio(&win), ratio(&full));
    let secs = t.elapsed().as_secs_f64();
    let pass = rw.iter().all(|&r| r <= 2.6) && rf.iter().all(|&r| r > 3.4) && secs < 300.0;
    Ok((
        pass,
        format!(
            "window 8 per doubling {:.2}x, {:.2}x (<= 2.6); full {:.2}x, {:.2}x (> 3.4); {secs:.0} s",
            rw[0], rw[1], rf[0], rf[1]
        ),
    ))
}

fn c4_spectral() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut dft_err = 0.0f64;
    for n in 1..=64 {
        let x: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let fast = dft_full(&x)?;
        for (k, c) in fast.iter().enumerate() {
            let (mut re, mut im) = (0.0, 0.0);
            for (j, &v) in x.iter().enumerate() {
                let a = -2.0 * std::f64::consts::PI * (k * j) as f64 / n as f64;
                re += v * a.cos();
                im += v * a.sin();
            }
            dft_err = dft_err.max((c.re - re).abs()).max((c.im - im).abs());
        }
    }
    let (mut round_trip, mut parseval) = (0.0f64, 0.0f64);
    for trial in 0..5 {
        let x: Vec<f64> = (0..9000)
            .map(|i| match trial % 3 {
                0 => rng.random_range(-1.0..1.0),
                1 => (i as f64 * 0.013).sin() + 0.1 * rng.random_range(-1.0..1.0),
                _ => rng.random_range(-100.0..100.0) * f64::from(u8::from(i % 7 == 0)),
            })
            .collect();
        let back = inverse_check(&spectral_target(&[&x])?)?;
        round_trip = back[0]
            .iter()
            .zip(&x)
            .map(|(a, b)| (a - b).abs())
            .fold(round_trip, f64::max);
        let time: f64 = x.iter().map(|v| v * v).sum();
        let freq: f64 = dft_full(&x)?.iter().map(|c| c.norm_sqr()).sum::<f64>() / x.len() as f64;
        parseval = parseval.max((time - freq).abs() / time);
    }
    Ok((
        dft_err <= 1e-10 && round_trip <= 1e-9 && parseval <= 1e-9,
        format!("FFT vs naive (N <= 64) {dft_err:.2e} (<= 1e-10); round trip {round_trip:.2e} (<= 1e-9); Parseval {parseval:.2e} (<= 1e-9)"),
    ))
}

fn c5_distillation() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let (mut sum_err, mut ent_err) = (0.0f64, 0.0f64);
    for _ in 0..200 {
        let k = rng.random_range(2..128);
        let logits: Vec<f64> = (0..k).map(|_| rng.random_range(-20.0..20.0)).collect();
        let tau_t = rng.random_range(0.02..2.0);
        let tau_s = rng.random_range(0.02..2.0);
        let p = soft_distribution(&logits, tau_t)?;
        sum_err = sum_err.max((p.iter().sum::<f64>() - 1.0).abs());
        // student logits rescaled so that P_s = P_t exactly
        let student: Vec<f64> = logits.iter().map(|l| l * tau_s / tau_t).collect();
        let entropy: f64 = -p
            .iter()
            .filter(|&&v| v > 0.0)
            .map(|v| v * v.ln())
            .sum::<f64>();
        let loss = distillation_loss(&logits, &student, tau_t, tau_s)?;
        ent_err = ent_err.max((loss - entropy).abs());
    }
    let cfg = PretrainConfig::default();
    let total = 1000;
    let lambdas: Vec<f64> = (0..=total)
        .map(|s| ema_momentum(s, total, cfg.ema_start, cfg.ema_end))
        .collect::<Result<_, _>>()?;
    let endpoints = lambdas[0] == 0.996 && lambdas[total] == 1.0;
    let monotone = lambdas.windows(2).all(|w| w[0] <= w[1]);

    let model = ModelConfig::preset(Preset::Tiny);
    let wave =
        |f: f64| -> Vec<f64> { (0..model.input_len).map(|i| (i as f64 * f).sin()).collect() };
    let (hp, he, lp, le) = (wave(0.02), wave(0.05), wave(0.03), wave(0.07));
    let target = ReconTarget::from_channels(&hp, &he)?;
    let student = Encoder::new(model.clone(), 1)?;
    let teacher = Encoder::new(model.clone(), 2)?;
    let mut g = Graph::new();
    let s = student.register(&mut g, true);
    let t = teacher.register(&mut g, true);
    let h = g.constant(tokenize(&model, &hp, &he)?);
    let l = g.constant(tokenize(&model, &lp, &le)?);
    let out = pair_loss(&mut g, &model, &cfg, &s, &t, h, l, &target, None)?;
    g.backward(out.total)?;
    let teacher_zero = t.vars().iter().all(|&v| g.grad(v).is_none());
    let student_moves = s.vars().iter().any(|&v| {
        g.grad(v)
            .is_some_and(|gr| gr.data().iter().any(|&x| x != 0.0))
    });

    let pass = sum_err <= 1e-12
        && ent_err <= 1e-12
        && endpoints
        && monotone
        && teacher_zero
        && student_moves;
    Ok((
        pass,
        format!(
            "softmax sum err {sum_err:.1e}; loss - entropy {ent_err:.1e} (<= 1e-12); lambda(0) {} lambda(T) {} monotone {monotone}; teacher grad zero {teacher_zero}",
            lambdas[0], lambdas[total]
        ),
    ))
}

fn random_segment(rng: &mut ChaCha8Rng, i: usize) -> anyhow::Result<Segment> {
    let n = qualityfm::SEGMENT_LEN;
    let channel = |rng: &mut ChaCha8Rng| -> Vec<f64> {
        let kind = rng.random_range(0..6);
        let f = rng.random_range(0.001..0.2);
        let amp = 10f64.powf(rng.random_range(-4.0..3.0));
        let offset = rng.random_range(-10.0..10.0);
        (0..n)
            .map(|k| {
                let t = k as f64;
                offset
                    + amp
                        * match kind {
                            0 => rng.random_range(-1.0..1.0),
                            1 => (t * f).sin(),
                            2 => (t * f).sin().powi(31),
                            3 => f64::from(u8::from(k % 300 < 3)),
                            4 => 0.0,
                            _ => {
                                (t * f).sin()
                                    + rng.random_range(-3.0..3.0)
                                        * f64::from(u8::from(k % 977 < 40))
                            }
                        }
            })
            .collect()
    };
    let ppg = channel(rng);
    let ecg = channel(rng);
    Ok(Segment::from_raw(format!("r{i}"), 0.0, &ppg, &ecg)?)
}

fn c6_sqi() -> Outcome {
    let boundaries = [
        (0.9, QualityLabel::Excellent, QualityLabel::Good),
        (0.7, QualityLabel::Good, QualityLabel::Acceptable),
        (0.5, QualityLabel::Acceptable, QualityLabel::Poor),
        (0.3, QualityLabel::Poor, QualityLabel::Bad),
    ];
    let labels_exact = boundaries.iter().all(|&(b, at, below)| {
        QualityLabel::from_sqi(b) == at && QualityLabel::from_sqi(b.next_down()) == below
    });

    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let cfg = SqiConfig::default();
    let mut out_of_range = 0;
    for i in 0..1000 {
        let a = assess(&random_segment(&mut rng, i)?, &cfg);
        let unit = |v: f64| (0.0..=1.0).contains(&v);
        if !(a.components.values().all(|&v| unit(v))
            && unit(a.sqi)
            && unit(a.sqi_ppg)
            && unit(a.sqi_ecg))
        {
            out_of_range += 1;
        }
    }

    // 10 segments: two subjects, near-boundary separations, repeated labels
    let spec: [(&str, f64, QualityLabel); 10] = [
        ("a", 0.0, QualityLabel::Excellent),
        ("a", 15.0, QualityLabel::Poor),
        ("a", 299.0, QualityLabel::Bad),
        ("a", 300.0, QualityLabel::Good),
        ("a", 314.9, QualityLabel::Excellent),
        ("a", 620.0, QualityLabel::Acceptable),
        ("b", 0.0, QualityLabel::Good),
        ("b", 0.0, QualityLabel::Bad),
        ("b", 100.0, QualityLabel::Good),
        ("b", 400.0, QualityLabel::Poor),
    ];
    let entries: Vec<ManifestEntry> = spec
        .iter()
        .enumerate()
        .rev()
        .map(|(i, &(s, t, label))| ManifestEntry {
            index: i,
            subject_id: s.into(),
            t_start_s: t,
            sqi_ppg: 0.0,
            sqi_ecg: 0.0,
            sqi: 0.0,
            label,
            components: Default::default(),
        })
        .collect();
    let mut expected = Vec::new();
    for i in 0..spec.len() {
        for j in 0..spec.len() {
            let (a, b) = (&spec[i], &spec[j]);
            if a.0 == b.0 && (a.1 - b.1).abs() < PAIR_WINDOW_S && a.2 > b.2 {
                expected.push((i, j));
            }
        }
    }
    let mut got: Vec<(usize, usize)> = mine_pairs(&entries)
        .iter()
        .map(|p| (p.high, p.low))
        .collect();
    expected.sort();
    got.sort();
    let pairs_exact = got == expected;
    Ok((
        labels_exact && out_of_range == 0 && pairs_exact,
        format!(
            "label boundaries exact {labels_exact}; {out_of_range} of 1000 random segments out of [0, 1]; mined {} pairs, exhaustive {} (equal {pairs_exact})",
            got.len(),
            expected.len()
        ),
    ))
}

fn c7_smoke() -> Outcome {
    let t = Instant::now();
    let cfg = desk_config()?;
    let corpus = DeskCorpus::build(&cfg)?;
    let r = smoke_run(&corpus, &cfg)?.report;
    let secs = t.elapsed().as_secs_f64();
    let loss_ok = r.loss_ratio <= 0.8;
    let chance_ok = r.probe_accuracy >= r.chance + 0.15;
    let random_ok = r.probe_accuracy >= r.random_probe_accuracy + 0.05;
    Ok((
        loss_ok && chance_ok && random_ok && secs < 900.0,
        format!(
            "{} pairs, {} steps: L_pre {:.3} -> {:.3} (ratio {:.3}, <= 0.8 {loss_ok}); probe {:.3} vs chance {:.3} (+0.15 {chance_ok}) vs random init {:.3} (+0.05 {random_ok}); {secs:.0} s",
            r.pairs, r.steps, r.initial_loss, r.final_loss, r.loss_ratio, r.probe_accuracy, r.chance, r.random_probe_accuracy
        ),
    ))
}

fn cli(args: &[&str], dir: &Path) -> anyhow::Result<std::process::Output> {
    let out = Command::new(env!("CARGO_BIN_EXE_qualityfm"))
        .args(args)
        .current_dir(dir)
        .output()?;
    anyhow::ensure!(
        out.status.success(),
        "qualityfm {} failed ({}): {}",
        args.join(" "),
        out.status,
        String::from_utf8_lossy(&out.stderr)
    );
    Ok(out)
}

fn read_table(path: &Path) -> anyhow::Result<AblationTable> {
    Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
}

fn finite_rows(t: &AblationTable) -> bool {
    t.rows.iter().all(|r| {
        let m = &r.report;
        [
            m.initial_loss,
            m.final_loss,
            m.probe_accuracy,
            m.random_probe_accuracy,
            m.chance,
        ]
        .iter()
        .all(|v| v.is_finite())
    })
}

fn c8_ablation() -> Outcome {
    let t = Instant::now();
    let dir = tempfile::tempdir()?;
    let config = workspace_root().join("configs/desk.toml");
    let config = config.to_str().unwrap_or_default();
    let run = |axis: &str, values: &str, out: &str| -> anyhow::Result<AblationTable> {
        cli(
            &[
                "--config", config, "ablate", "--axis", axis, "--values", values, "--out", out,
            ],
            dir.path(),
        )?;
        read_table(&dir.path().join(out))
    };
    let window = run("window", "0,2,4,8,16", "window.json")?;
    let loss = run("loss", "amp+pha,amp,pha,none", "loss.json")?;
    let seeds = run("seed", "0,1,2,3,4,5,6,7,8,9", "seed.json")?;
    let (wins, n) = qualityfm::experiment::window_wins(&seeds);
    let secs = t.elapsed().as_secs_f64();
    let tables_ok = window.rows.len() == 5
        && loss.rows.len() == 4
        && finite_rows(&window)
        && finite_rows(&loss);
    let directional = n == 10 && wins >= 7;
    let row = |t: &AblationTable| -> String {
        t.rows
            .iter()
            .map(|r| format!("{} {:.3}", r.setting, r.report.probe_accuracy))
            .collect::<Vec<_>>()
            .join(", ")
    };
    Ok((
        tables_ok && directional && secs < 7200.0,
        format!(
            "window sweep [{}]; loss grid [{}]; w=0 worse than w=8 in {wins}/{n} seeds (>= 7); {:.0} min",
            row(&window),
            row(&loss),
            secs / 60.0
        ),
    ))
}

fn c9_metrics() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut confusion_ok = true;
    let mut auc_err = 0.0f64;
    for _ in 0..100 {
        let n = rng.random_range(1..300);
        let labels: Vec<bool> = (0..n).map(|_| rng.random_bool(0.4)).collect();
        let scores: Vec<f64> = (0..n)
            .map(|_| f64::from(rng.random_range(0u8..15)) / 14.0)
            .collect();
        let th = rng.random_range(0.0..1.0);
        let r = classify_metrics(&labels, &scores, th)?;
        let mut c = [0usize; 4];
        for (&y, &s) in labels.iter().zip(&scores) {
            c[usize::from(y) * 2 + usize::from(s >= th)] += 1;
        }
        confusion_ok &= [r.tn, r.fp, r.fn_, r.tp] == c;
        if let Some(auc) = rank_auc(&labels, &scores) {
            let pos = labels.iter().filter(|&&y| y).count() as f64;
            let neg = n as f64 - pos;
            let mut ths = scores.clone();
            ths.sort_by(|a, b| b.total_cmp(a));
            ths.dedup();
            let mut pts = vec![(0.0, 0.0)];
            for t in ths {
                let tp = labels
                    .iter()
                    .zip(&scores)
                    .filter(|(&y, &s)| y && s >= t)
                    .count() as f64;
                let fp = labels
                    .iter()
                    .zip(&scores)
                    .filter(|(&y, &s)| !y && s >= t)
                    .count() as f64;
                pts.push((fp / neg, tp / pos));
            }
            let trap: f64 = pts
                .windows(2)
                .map(|w| (w[1].0 - w[0].0) * (w[1].1 + w[0].1) / 2.0)
                .sum();
            auc_err = auc_err.max((auc - trap).abs());
        }
    }
    let truth: Vec<f64> = (0..50).map(|_| rng.random_range(80.0..180.0)).collect();
    let naive = vec![120.0; 50];
    let mase = regress_metrics("sbp", &truth, &naive, &naive)?.mase_percent;
    Ok((
        confusion_ok && auc_err <= 1e-12 && mase == Some(100.0),
        format!("confusion matches brute force {confusion_ok}; |AUC - trapezoid| {auc_err:.1e} (<= 1e-12); MASE at naive {mase:?}"),
    ))
}

fn c10_determinism() -> Outcome {
    let root = tempfile::tempdir()?;
    let desk = workspace_root().join("configs/desk.toml");
    let config = format!(
        "include = [{:?}]\nseed = 11\n[experiment.corpus]\nsubjects = 4\nepisodes = 6\n[pretrain]\nmax_steps = 4\nbatch_size = 3\n[finetune]\nepochs = 2\n[experiment]\npairs = 40\n",
        desk.to_str().unwrap_or_default()
    );
    let labels = |dir: &Path| -> anyhow::Result<()> {
        let text = std::fs::read_to_string(dir.join("manifest.jsonl"))?;
        let mut out = String::new();
        for line in text.lines() {
            let e: ManifestEntry = serde_json::from_str(line)?;
            let y = if e.label >= QualityLabel::Good {
                1.0
            } else {
                0.0
            };
            out.push_str(&format!("{{\"index\":{},\"target\":[{y}]}}\n", e.index));
        }
        std::fs::write(dir.join("labels.jsonl"), out)?;
        Ok(())
    };
    let stages: [&[&str]; 11] = [
        &["gen-synth", "--desk", "--out", "corpus.qwc"],
        &[
            "gen-synth",
            "--bpm",
            "72",
            "--noise",
            "motion_burst",
            "--level",
            "0.5",
            "--duration",
            "60",
            "--out",
            "single.qwc",
        ],
        &["preprocess", "--in", "corpus.qwc", "--out", "segments.qseg"],
        &["sqi", "--in", "segments.qseg", "--out", "manifest.jsonl"],
        &["pairs", "--in", "manifest.jsonl", "--out", "pairs.jsonl"],
        &[
            "pretrain",
            "--pairs",
            "pairs.jsonl",
            "--segments",
            "segments.qseg",
            "--out",
            "teacher.ckpt",
            "--log",
            "train.jsonl",
        ],
        &[
            "finetune",
            "--task",
            "af",
            "--checkpoint",
            "teacher.ckpt",
            "--data",
            "segments.qseg",
            "--labels",
            "labels.jsonl",
            "--out",
            "model.qft",
        ],
        &[
            "eval",
            "--model",
            "model.qft",
            "--data",
            "segments.qseg",
            "--labels",
            "labels.jsonl",
            "--report",
            "report.json",
            "--predictions",
            "predictions.jsonl",
        ],
        &[
            "gradcheck",
            "--scope",
            "attention",
            "--report",
            "gradcheck.json",
        ],
        &[
            "ablate",
            "--axis",
            "window",
            "--values",
            "0,4",
            "--out",
            "ablate.json",
        ],
        &[
            "ablate",
            "--axis",
            "loss",
            "--values",
            "none",
            "--out",
            "ablate_loss.json",
        ],
    ];
    let mut runs = Vec::new();
    for rep in 0..2 {
        let dir = root.path().join(format!("run{rep}"));
        std::fs::create_dir(&dir)?;
        std::fs::write(dir.join("run.toml"), &config)?;
        for stage in stages {
            let mut args = vec!["--config", "run.toml", "--threads", "1"];
            args.extend_from_slice(stage);
            if stage[0] == "finetune" {
                labels(&dir)?;
            }
            cli(&args, &dir)?;
        }
        runs.push(dir);
    }
    let mut files: Vec<String> = std::fs::read_dir(&runs[0])?
        .map(|e| e.map(|e| e.file_name().to_string_lossy().into_owned()))
        .collect::<Result<_, _>>()?;
    files.sort();
    let differing: Vec<&String> = files
        .iter()
        .filter(|f| std::fs::read(runs[0].join(f)).ok() != std::fs::read(runs[1].join(f)).ok())
        .collect();
    Ok((
        differing.is_empty() && files.len() >= 14,
        format!(
            "{} stages run twice (seed 11, 1 thread): {} output files compared, {} differ {:?}",
            stages.len(),
            files.len(),
            differing.len(),
            differing
        ),
    ))
}

type Criterion = (usize, &'static str, fn() -> Outcome);

fn main() {
    let criteria: [Criterion; 10] = [
        (1, "gradient correctness", c1_gradients),
        (2, "attention equivalence", c2_attention_equivalence),
        (3, "O(n w) attention scaling", c3_scaling),
        (4, "spectral fidelity", c4_spectral),
        (5, "distillation mechanics", c5_distillation),
        (6, "SQI and labeling", c6_sqi),
        (7, "pretraining smoke", c7_smoke),
        (8, "ablation axes", c8_ablation),
        (9, "metric oracles", c9_metrics),
        (10, "determinism", c10_determinism),
    ];
    let only: Option<Vec<usize>> = std::env::var("ACCEPTANCE_ONLY")
        .ok()
        .map(|s| s.split(',').filter_map(|x| x.trim().parse().ok()).collect());
    let mut failed = 0;
    let total = Instant::now();
    for (id, name, check) in criteria {
        if only.as_ref().is_some_and(|o| !o.contains(&id)) {
            continue;
        }
        let t = Instant::now();
        let (pass, detail) = match check() {
            Ok(r) => r,
            Err(e) => (false, format!("error: {e:#}")),
        };
        failed += usize::from(!pass);
        println!(
            "[{}] criterion {id:>2} {name}: {detail} [{}]",
            if pass { "PASS" } else { "FAIL" },
            fmt_duration(t.elapsed())
        );
    }
    println!(
        "acceptance: {failed} criterion(s) failed, {}",
        fmt_duration(total.elapsed())
    );
    if failed > 0 && std::env::var("ACCEPTANCE_STRICT").is_ok_and(|v| v == "1") {
        std::process::exit(1);
    }
}

fn fmt_duration(d: Duration) -> String {
    format!("{:.1} s", d.as_secs_f64())
}
