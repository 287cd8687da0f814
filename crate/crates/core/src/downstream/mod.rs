//! Downstream adaptation of a pretrained encoder: subject-disjoint splits,
//! fine-tuning with a linear head, evaluation reports and metrics.

mod metrics;
mod probe;

pub use metrics::{
    classify_metrics, rank_auc, regress_metrics, ClassificationReport, RegressionReport,
    TargetReport,
};
pub use probe::{LinearProbe, ProbeConfig};

use std::collections::BTreeSet;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Tensor, Var};
use crate::binio::{read_file, write_file, Reader, Writer};
use crate::error::{Error, Result};
use crate::model::{decode_checkpoint, encode, encode_checkpoint, tokenize, Encoder};
use crate::preprocess::Segment;
use crate::train::{Adam, AdamConfig};

/// Downstream task. `vtac` and `af` are binary classification, `bp`
/// regresses systolic and diastolic pressure.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    Vtac,
    Af,
    Bp,
}

impl Task {
    pub fn is_classification(self) -> bool {
        !matches!(self, Task::Bp)
    }

    /// Values per label record.
    pub fn target_width(self) -> usize {
        if self.is_classification() {
            1
        } else {
            2
        }
    }

    /// Head outputs: two class logits, or two standardized targets.
    pub fn head_width(self) -> usize {
        2
    }

    pub fn target_names(self) -> &'static [&'static str] {
        match self {
            Task::Vtac | Task::Af => &["label"],
            Task::Bp => &["sbp", "dbp"],
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Task::Vtac => "vtac",
            Task::Af => "af",
            Task::Bp => "bp",
        }
    }
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Task {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "vtac" => Ok(Task::Vtac),
            "af" => Ok(Task::Af),
            "bp" => Ok(Task::Bp),
            _ => Err(Error::Validation(format!(
                "unknown task {s:?} (expected vtac, af or bp)"
            ))),
        }
    }
}

/// Target values of one segment: `[0 | 1]` for classification, `[sbp, dbp]`
/// for blood pressure.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LabelRecord {
    pub index: usize,
    pub target: Vec<f64>,
}

pub fn check_labels(task: Task, labels: &[LabelRecord], n_segments: usize) -> Result<()> {
    let mut seen = BTreeSet::new();
    for l in labels {
        if l.index >= n_segments {
            return Err(Error::Contract(format!(
                "label for segment {} but only {n_segments} segments",
                l.index
            )));
        }
        if !seen.insert(l.index) {
            return Err(Error::Contract(format!(
                "segment {} labelled twice",
                l.index
            )));
        }
        if l.target.len() != task.target_width() {
            return Err(Error::Contract(format!(
                "task {task} expects {} target value(s), segment {} has {}",
                task.target_width(),
                l.index,
                l.target.len()
            )));
        }
        if task.is_classification() && !(l.target[0] == 0.0 || l.target[0] == 1.0) {
            return Err(Error::Contract(format!(
                "task {task} expects labels 0 or 1, segment {} has {}",
                l.index, l.target[0]
            )));
        }
        if l.target.iter().any(|v| !v.is_finite()) {
            return Err(Error::Contract(format!(
                "non-finite target for segment {}",
                l.index
            )));
        }
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Split {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

/// Assigns whole subjects to the test side: `round(fraction * subjects)`
/// subjects (at least one on each side when there are two or more), chosen
/// by a seeded shuffle of the sorted subject list.
pub fn split_by_subject<S: AsRef<str>>(
    subjects: &[S],
    test_fraction: f64,
    seed: u64,
) -> Result<Split> {
    if !(0.0..=1.0).contains(&test_fraction) {
        return Err(Error::Config(format!(
            "test_fraction must lie in [0, 1], got {test_fraction}"
        )));
    }
    let unique: BTreeSet<&str> = subjects.iter().map(|s| s.as_ref()).collect();
    let mut order: Vec<&str> = unique.into_iter().collect();
    let n = order.len();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut n_test = (test_fraction * n as f64).round() as usize;
    if n >= 2 && test_fraction > 0.0 && test_fraction < 1.0 {
        n_test = n_test.clamp(1, n - 1);
    }
    let test: BTreeSet<&str> = order[..n_test].iter().copied().collect();
    let mut split = Split {
        train: Vec::new(),
        test: Vec::new(),
    };
    for (i, s) in subjects.iter().enumerate() {
        if test.contains(s.as_ref()) {
            split.test.push(i);
        } else {
            split.train.push(i);
        }
    }
    Ok(split)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FinetuneConfig {
    pub lr: f64,
    pub weight_decay: f64,
    pub epochs: usize,
    pub batch_size: usize,
    /// Loss weight of the positive class.
    pub class_weight: f64,
    /// Mains frequency of the recordings; carried for completeness, no
    /// filtering uses it.
    pub powerline_hz: f64,
    /// Train only the head on fixed encoder features.
    pub freeze_backbone: bool,
    /// Fraction of subjects held out from fine-tuning.
    pub test_fraction: f64,
    /// Taken from the run configuration, not the section.
    #[serde(skip)]
    pub seed: u64,
    #[serde(skip)]
    pub threads: usize,
}

impl Default for FinetuneConfig {
    fn default() -> Self {
        FinetuneConfig {
            lr: 1e-4,
            weight_decay: 0.005,
            epochs: 500,
            batch_size: 512,
            class_weight: 3.54,
            powerline_hz: 60.0,
            freeze_backbone: false,
            test_fraction: 0.2,
            seed: 0,
            threads: 1,
        }
    }
}

impl FinetuneConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr >= 0.0 && self.weight_decay >= 0.0 && self.class_weight > 0.0) {
            return Err(Error::Config(
                "finetune lr and weight_decay must be >= 0 and class_weight > 0".into(),
            ));
        }
        if self.epochs == 0 || self.batch_size == 0 || self.threads == 0 {
            return Err(Error::Config(
                "finetune epochs, batch_size and threads must be positive".into(),
            ));
        }
        if !(0.0..1.0).contains(&self.test_fraction) {
            return Err(Error::Config(format!(
                "finetune test_fraction must lie in [0, 1), got {}",
                self.test_fraction
            )));
        }
        Ok(())
    }

    fn adam(&self) -> AdamConfig {
        AdamConfig {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: self.weight_decay,
        }
    }
}

/// Linear map from pooled features to the task outputs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Head {
    /// `[hidden, outputs]`.
    pub weight: Tensor,
    pub bias: Tensor,
}

impl Head {
    pub fn zeros(hidden: usize, outputs: usize) -> Self {
        Head {
            weight: Tensor::zeros(&[hidden, outputs]),
            bias: Tensor::zeros(&[outputs]),
        }
    }

    fn apply(&self, x: &[f64]) -> Vec<f64> {
        let out = self.bias.numel();
        let mut z = self.bias.data().to_vec();
        for (j, v) in x.iter().enumerate() {
            let w = &self.weight.data()[j * out..(j + 1) * out];
            z.iter_mut().zip(w).for_each(|(z, w)| *z += v * w);
        }
        z
    }
}

/// A fine-tuned encoder with its head and the target standardization.
#[derive(Clone, Debug, PartialEq)]
pub struct FinetunedModel {
    pub task: Task,
    pub encoder: Encoder,
    pub head: Head,
    /// Training-set mean per target; also the naive regression baseline.
    pub target_mean: Vec<f64>,
    pub target_std: Vec<f64>,
    /// Subjects seen during fine-tuning, excluded from evaluation.
    pub train_subjects: Vec<String>,
}

/// Head loss on a batch of pooled features `[rows, hidden]`: class-weighted
/// cross-entropy or MSE on standardized targets.
fn head_loss(
    g: &mut Graph<'_>,
    task: Task,
    class_weight: f64,
    pooled: Var,
    w: Var,
    b: Var,
    targets: &[Vec<f64>],
) -> Result<Var> {
    let z = g.matmul(pooled, w)?;
    let z = g.add(z, b)?;
    let rows = targets.len();
    if task.is_classification() {
        let mut t = Vec::with_capacity(rows * 2);
        for y in targets {
            if y[0] == 1.0 {
                t.extend([0.0, class_weight]);
            } else {
                t.extend([1.0, 0.0]);
            }
        }
        let t = g.constant(Tensor::new(vec![rows, 2], t)?);
        let logp = g.log_softmax(z, 1.0);
        g.cross_entropy(t, logp)
    } else {
        let t = g.constant(Tensor::new(vec![rows, 2], targets.concat())?);
        g.mse(z, t)
    }
}

fn standardize(targets: &[Vec<f64>], task: Task) -> (Vec<f64>, Vec<f64>) {
    let width = task.target_width();
    if task.is_classification() {
        return (vec![0.0; width], vec![1.0; width]);
    }
    let n = targets.len() as f64;
    let mut mean = vec![0.0; width];
    for t in targets {
        mean.iter_mut().zip(t).for_each(|(m, v)| *m += v / n);
    }
    let mut std = vec![0.0; width];
    for t in targets {
        std.iter_mut()
            .zip(t)
            .zip(&mean)
            .for_each(|((s, v), m)| *s += (v - m).powi(2) / n);
    }
    std.iter_mut()
        .for_each(|s| *s = if *s > 1e-24 { s.sqrt() } else { 1.0 });
    (mean, std)
}

fn pooled_features(
    encoder: &Encoder,
    segments: &[&Segment],
    threads: usize,
) -> Result<Vec<Vec<f64>>> {
    let one = |s: &Segment| -> Result<Vec<f64>> {
        let (_, pooled, _) = encoder.infer(&s.channel_f64(0), &s.channel_f64(1))?;
        Ok(pooled.into_data())
    };
    if threads <= 1 || segments.len() < 2 {
        return segments.iter().map(|s| one(s)).collect();
    }
    let chunk = segments.len().div_ceil(threads);
    std::thread::scope(|scope| {
        let handles: Vec<_> = segments
            .chunks(chunk)
            .map(|c| scope.spawn(move || c.iter().map(|s| one(s)).collect::<Result<Vec<_>>>()))
            .collect();
        let mut out = Vec::with_capacity(segments.len());
        for h in handles {
            out.extend(
                h.join()
                    .map_err(|_| Error::Contract("feature worker panicked".into()))??,
            );
        }
        Ok(out)
    })
}

/// Pooled encoder features of each segment, without gradients.
pub fn extract_features(
    encoder: &Encoder,
    segments: &[&Segment],
    threads: usize,
) -> Result<Vec<Vec<f64>>> {
    pooled_features(encoder, segments, threads)
}

/// Trains only the head on fixed features (targets already standardized).
pub fn fit_head(
    features: &[Vec<f64>],
    targets: &[Vec<f64>],
    task: Task,
    cfg: &FinetuneConfig,
) -> Result<Head> {
    if features.is_empty() || features.len() != targets.len() {
        return Err(Error::Contract(format!(
            "{} feature rows but {} targets",
            features.len(),
            targets.len()
        )));
    }
    let hidden = features[0].len();
    let mut params = vec![
        Tensor::zeros(&[hidden, task.head_width()]),
        Tensor::zeros(&[task.head_width()]),
    ];
    let mut opt = Adam::new(cfg.adam(), &params);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..features.len()).collect();
    for _ in 0..cfg.epochs {
        order.shuffle(&mut rng);
        for batch in order.chunks(cfg.batch_size) {
            let x: Vec<f64> = batch
                .iter()
                .flat_map(|&i| features[i].iter().copied())
                .collect();
            let y: Vec<Vec<f64>> = batch.iter().map(|&i| targets[i].clone()).collect();
            let mut g = Graph::new();
            let w = g.param(params[0].clone());
            let b = g.param(params[1].clone());
            let x = g.constant(Tensor::new(vec![batch.len(), hidden], x)?);
            let loss = head_loss(&mut g, task, cfg.class_weight, x, w, b, &y)?;
            if !g.value(loss).item().is_finite() {
                return Err(Error::NonFinite("fine-tuning head loss".into()));
            }
            g.backward(loss)?;
            let grads = vec![
                g.take_grad(w)
                    .map(Tensor::into_data)
                    .unwrap_or_else(|| vec![0.0; params[0].numel()]),
                g.take_grad(b)
                    .map(Tensor::into_data)
                    .unwrap_or_else(|| vec![0.0; params[1].numel()]),
            ];
            opt.step(&mut params, &grads, &[true, false], cfg.lr)?;
        }
    }
    let bias = params.pop().expect("two tensors");
    let weight = params.pop().expect("two tensors");
    Ok(Head { weight, bias })
}

/// Adapts a pretrained (teacher) encoder to `task` on the training subjects
/// of `labels`. With `freeze_backbone` only the head moves; otherwise the
/// encoder is trained jointly with the head.
pub fn finetune(
    encoder: Encoder,
    segments: &[Segment],
    labels: &[LabelRecord],
    task: Task,
    cfg: &FinetuneConfig,
) -> Result<FinetunedModel> {
    cfg.validate()?;
    check_labels(task, labels, segments.len())?;
    if labels.is_empty() {
        return Err(Error::Validation("no labelled segments".into()));
    }
    let subjects: Vec<&str> = labels
        .iter()
        .map(|l| segments[l.index].subject_id())
        .collect();
    let split = split_by_subject(&subjects, cfg.test_fraction, cfg.seed)?;
    let train: Vec<&LabelRecord> = split.train.iter().map(|&i| &labels[i]).collect();
    if train.is_empty() {
        return Err(Error::Validation(
            "no training subjects left after the split".into(),
        ));
    }
    let train_subjects: BTreeSet<String> = train
        .iter()
        .map(|l| segments[l.index].subject_id().to_string())
        .collect();
    let raw: Vec<Vec<f64>> = train.iter().map(|l| l.target.clone()).collect();
    let (mean, std) = standardize(&raw, task);
    let targets: Vec<Vec<f64>> = raw
        .iter()
        .map(|t| {
            t.iter()
                .zip(&mean)
                .zip(&std)
                .map(|((v, m), s)| (v - m) / s)
                .collect()
        })
        .collect();
    let segs: Vec<&Segment> = train.iter().map(|l| &segments[l.index]).collect();

    let (encoder, head) = if cfg.freeze_backbone {
        let features = pooled_features(&encoder, &segs, cfg.threads)?;
        let head = fit_head(&features, &targets, task, cfg)?;
        (encoder, head)
    } else {
        train_jointly(encoder, &segs, &targets, task, cfg)?
    };
    Ok(FinetunedModel {
        task,
        encoder,
        head,
        target_mean: mean,
        target_std: std,
        train_subjects: train_subjects.into_iter().collect(),
    })
}

fn train_jointly(
    mut encoder: Encoder,
    segs: &[&Segment],
    targets: &[Vec<f64>],
    task: Task,
    cfg: &FinetuneConfig,
) -> Result<(Encoder, Head)> {
    let hidden = encoder.config().hidden;
    let head = Head::zeros(hidden, task.head_width());
    let mut params: Vec<Tensor> = encoder.tensors().to_vec();
    params.push(head.weight);
    params.push(head.bias);
    let decay: Vec<bool> = params.iter().map(|t| t.shape().len() >= 2).collect();
    let mut opt = Adam::new(cfg.adam(), &params);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..segs.len()).collect();
    let tokens: Vec<Tensor> = segs
        .iter()
        .map(|s| tokenize(encoder.config(), &s.channel_f64(0), &s.channel_f64(1)))
        .collect::<Result<_>>()?;
    let model_cfg = encoder.config().clone();
    for _ in 0..cfg.epochs {
        order.shuffle(&mut rng);
        for batch in order.chunks(cfg.batch_size) {
            let mut grads: Vec<Vec<f64>> = params.iter().map(|p| vec![0.0; p.numel()]).collect();
            for &i in batch {
                let mut g = Graph::new();
                let vars: Vec<Var> = params.iter().map(|p| g.param_ref(p)).collect();
                let n_enc = vars.len() - 2;
                let pv = crate::model::ParamVars::from_vars(&model_cfg, vars[..n_enc].to_vec());
                let x = g.constant(tokens[i].clone());
                let out = encode(&mut g, &model_cfg, &pv, x)?;
                let loss = head_loss(
                    &mut g,
                    task,
                    cfg.class_weight,
                    out.pooled,
                    vars[n_enc],
                    vars[n_enc + 1],
                    &targets[i..=i],
                )?;
                if !g.value(loss).item().is_finite() {
                    return Err(Error::NonFinite(format!(
                        "fine-tuning loss on training sample {i}"
                    )));
                }
                g.backward(loss)?;
                for (acc, &v) in grads.iter_mut().zip(&vars) {
                    if let Some(t) = g.grad(v) {
                        acc.iter_mut()
                            .zip(t.data())
                            .for_each(|(a, b)| *a += b / batch.len() as f64);
                    }
                }
            }
            opt.step(&mut params, &grads, &decay, cfg.lr)?;
        }
    }
    let bias = params.pop().expect("head bias");
    let weight = params.pop().expect("head weight");
    encoder.tensors_mut().clone_from_slice(&params);
    Ok((encoder, Head { weight, bias }))
}

impl FinetunedModel {
    /// Task outputs for one segment: the positive-class probability, or the
    /// de-standardized targets.
    pub fn predict(&self, segment: &Segment) -> Result<Vec<f64>> {
        let (_, pooled, _) = self
            .encoder
            .infer(&segment.channel_f64(0), &segment.channel_f64(1))?;
        Ok(self.predict_from_features(pooled.data()))
    }

    pub fn predict_from_features(&self, pooled: &[f64]) -> Vec<f64> {
        let z = self.head.apply(pooled);
        if self.task.is_classification() {
            let m = z[0].max(z[1]);
            let (a, b) = ((z[0] - m).exp(), (z[1] - m).exp());
            vec![b / (a + b)]
        } else {
            z.iter()
                .zip(&self.target_mean)
                .zip(&self.target_std)
                .map(|((z, m), s)| z * s + m)
                .collect()
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub index: usize,
    pub subject_id: String,
    pub target: Vec<f64>,
    pub output: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub task: Task,
    pub n: usize,
    pub subjects: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub classification: Option<ClassificationReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub regression: Option<RegressionReport>,
}

/// Scores `model` on the labelled segments whose subjects it was not trained
/// on (all labelled segments when `include_train_subjects`).
pub fn evaluate(
    model: &FinetunedModel,
    segments: &[Segment],
    labels: &[LabelRecord],
    include_train_subjects: bool,
    threads: usize,
) -> Result<(EvalReport, Vec<Prediction>)> {
    check_labels(model.task, labels, segments.len())?;
    let seen: BTreeSet<&str> = model.train_subjects.iter().map(String::as_str).collect();
    let mut chosen: Vec<&LabelRecord> = labels
        .iter()
        .filter(|l| include_train_subjects || !seen.contains(segments[l.index].subject_id()))
        .collect();
    chosen.sort_by_key(|l| l.index);
    if chosen.is_empty() {
        return Err(Error::Validation(
            "no labelled segments from held-out subjects".into(),
        ));
    }
    let segs: Vec<&Segment> = chosen.iter().map(|l| &segments[l.index]).collect();
    let features = pooled_features(&model.encoder, &segs, threads)?;
    let predictions: Vec<Prediction> = chosen
        .iter()
        .zip(&features)
        .map(|(l, f)| Prediction {
            index: l.index,
            subject_id: segments[l.index].subject_id().to_string(),
            target: l.target.clone(),
            output: model.predict_from_features(f),
        })
        .collect();
    let subjects = predictions
        .iter()
        .map(|p| p.subject_id.as_str())
        .collect::<BTreeSet<_>>()
        .len();
    let mut report = EvalReport {
        task: model.task,
        n: predictions.len(),
        subjects,
        classification: None,
        regression: None,
    };
    if model.task.is_classification() {
        let y: Vec<bool> = predictions.iter().map(|p| p.target[0] == 1.0).collect();
        let s: Vec<f64> = predictions.iter().map(|p| p.output[0]).collect();
        report.classification = Some(classify_metrics(&y, &s, 0.5)?);
    } else {
        let mut targets = Vec::new();
        for (k, name) in model.task.target_names().iter().enumerate() {
            let t: Vec<f64> = predictions.iter().map(|p| p.target[k]).collect();
            let o: Vec<f64> = predictions.iter().map(|p| p.output[k]).collect();
            let naive = vec![model.target_mean[k]; t.len()];
            targets.push(regress_metrics(name, &t, &o, &naive)?);
        }
        report.regression = Some(RegressionReport { targets });
    }
    Ok((report, predictions))
}

const MODEL_MAGIC: &[u8; 8] = b"QFMTUNE\0";
const MODEL_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct ModelHeader {
    task: Task,
    head: Head,
    target_mean: Vec<f64>,
    target_std: Vec<f64>,
    train_subjects: Vec<String>,
}

pub fn encode_model(m: &FinetunedModel) -> Result<Vec<u8>> {
    let header = ModelHeader {
        task: m.task,
        head: m.head.clone(),
        target_mean: m.target_mean.clone(),
        target_std: m.target_std.clone(),
        train_subjects: m.train_subjects.clone(),
    };
    let json = serde_json::to_string(&header)
        .map_err(|e| Error::Validation(format!("serializing model header: {e}")))?;
    let ckpt = encode_checkpoint(&m.encoder)?;
    let mut w = Writer::new();
    w.bytes(MODEL_MAGIC);
    w.u32(MODEL_VERSION);
    w.long_string(&json)?;
    w.u64(ckpt.len() as u64);
    w.bytes(&ckpt);
    Ok(w.into_inner())
}

pub fn decode_model(bytes: &[u8]) -> Result<FinetunedModel> {
    let mut r = Reader::new(bytes);
    r.magic(MODEL_MAGIC, MODEL_VERSION)?;
    let at = r.offset();
    let json = r.long_string("model header")?;
    let h: ModelHeader = serde_json::from_str(&json)
        .map_err(|e| Error::format(at, format!("model header JSON: {e}")))?;
    let at = r.offset();
    let len = usize::try_from(r.u64("checkpoint length")?)
        .map_err(|_| Error::format(at, "checkpoint length overflows"))?;
    let start = r.offset();
    let ckpt = r.take(len, "encoder checkpoint")?;
    r.finish()?;
    let encoder = decode_checkpoint(ckpt).map_err(|e| match e {
        Error::Format { offset, message } => Error::format(start + offset, message),
        other => other,
    })?;
    let hidden = encoder.config().hidden;
    if h.head.weight.shape() != [hidden, h.task.head_width()]
        || h.head.bias.shape() != [h.task.head_width()]
    {
        return Err(Error::format(at, "head shape does not match the encoder"));
    }
    Ok(FinetunedModel {
        task: h.task,
        encoder,
        head: h.head,
        target_mean: h.target_mean,
        target_std: h.target_std,
        train_subjects: h.train_subjects,
    })
}

pub fn write_model(path: &Path, m: &FinetunedModel) -> Result<()> {
    write_file(path, &encode_model(m)?)
}

pub fn read_model(path: &Path) -> Result<FinetunedModel> {
    decode_model(&read_file(path)?)
}
