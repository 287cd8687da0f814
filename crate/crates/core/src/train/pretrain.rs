//! The pretraining loop.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{
    cosine_lr, ema_momentum, ema_update, pair_loss, Adam, LossParts, PretrainConfig, ReconTarget,
};
use crate::autodiff::Graph;
use crate::error::{Error, Result};
use crate::model::{tokenize, Encoder, ModelConfig};
use crate::preprocess::Segment;
use crate::sqi::QualityPair;

/// Segments and the pairs that index into them.
#[derive(Clone, Copy)]
pub struct PairSource<'a> {
    pub segments: &'a [Segment],
    pub pairs: &'a [QualityPair],
}

impl PairSource<'_> {
    fn validate(&self) -> Result<()> {
        if self.pairs.is_empty() {
            return Err(Error::Validation("no pairs to train on".into()));
        }
        let n = self.segments.len();
        if let Some(p) = self.pairs.iter().find(|p| p.high >= n || p.low >= n) {
            return Err(Error::Validation(format!(
                "pair ({}, {}) indexes past {} segments",
                p.high, p.low, n
            )));
        }
        Ok(())
    }
}

/// One line of the training log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepLog {
    pub step: usize,
    #[serde(rename = "L_dis")]
    pub l_dis: f64,
    #[serde(rename = "L_amp")]
    pub l_amp: f64,
    #[serde(rename = "L_pha")]
    pub l_pha: f64,
    #[serde(rename = "L_pre")]
    pub l_pre: f64,
    /// EMA momentum used for the teacher update after this step.
    pub lambda: f64,
    pub lr: f64,
}

pub fn read_log(path: impl AsRef<std::path::Path>) -> Result<Vec<StepLog>> {
    crate::sqi::read_jsonl(path)
}

#[derive(Clone, Debug)]
pub struct TrainState {
    pub student: Encoder,
    pub teacher: Encoder,
    pub step: usize,
    pub total_steps: usize,
    pub optimizer: Adam,
    /// Running mean of teacher logits, when centering is on.
    pub center: Option<Vec<f64>>,
    pub seed: u64,
}

impl TrainState {
    /// Fresh student and a teacher that starts as its exact copy.
    pub fn new(model: ModelConfig, cfg: &PretrainConfig, total_steps: usize) -> Result<Self> {
        let student = Encoder::new(model, cfg.seed)?;
        let teacher = student.clone();
        let optimizer = Adam::new(cfg.adam(), student.tensors());
        let center = cfg
            .teacher_centering
            .then(|| vec![0.0; student.config().out_dim]);
        Ok(TrainState {
            student,
            teacher,
            step: 0,
            total_steps,
            optimizer,
            center,
            seed: cfg.seed,
        })
    }
}

struct PairResult {
    grads: Vec<Vec<f64>>,
    parts: LossParts,
    teacher_logits: Vec<f64>,
}

fn check_parts(parts: &LossParts, at: impl FnOnce() -> String) -> Result<()> {
    for (name, v) in [
        ("L_dis", parts.dis),
        ("L_amp", parts.amp),
        ("L_pha", parts.pha),
    ] {
        if !v.is_finite() {
            return Err(Error::NonFinite(format!("{name} = {v} at {}", at())));
        }
    }
    Ok(())
}

fn pair_pass(
    state: &TrainState,
    cfg: &PretrainConfig,
    src: PairSource<'_>,
    pair: usize,
    step: usize,
) -> Result<PairResult> {
    let model = state.student.config();
    let p = &src.pairs[pair];
    let (high, low) = (&src.segments[p.high], &src.segments[p.low]);
    let (hp, he) = (high.channel_f64(0), high.channel_f64(1));
    let target = ReconTarget::from_channels(&hp, &he)?;
    let high_tokens = tokenize(model, &hp, &he)?;
    let low_tokens = tokenize(model, &low.channel_f64(0), &low.channel_f64(1))?;

    let mut g = Graph::new();
    let s = state.student.register(&mut g, true);
    let t = state.teacher.register(&mut g, false);
    let h = g.constant(high_tokens);
    let l = g.constant(low_tokens);
    let loss = pair_loss(
        &mut g,
        model,
        cfg,
        &s,
        &t,
        h,
        l,
        &target,
        state.center.as_deref(),
    )?;
    let parts = LossParts {
        dis: g.value(loss.dis).item(),
        amp: g.value(loss.amp).item(),
        pha: g.value(loss.pha).item(),
        total: g.value(loss.total).item(),
    };
    check_parts(&parts, || {
        format!("step {step}, pair {pair} (segments {} / {})", p.high, p.low)
    })?;
    g.backward(loss.total)?;
    let grads = s
        .vars()
        .iter()
        .zip(state.student.tensors())
        .map(|(&v, t)| {
            g.take_grad(v)
                .map(|g| g.into_data())
                .unwrap_or_else(|| vec![0.0; t.numel()])
        })
        .collect();
    Ok(PairResult {
        grads,
        parts,
        teacher_logits: g.value(loss.teacher_logits).data().to_vec(),
    })
}

impl PairResult {
    fn add(&mut self, r: &PairResult) {
        for (x, y) in self.grads.iter_mut().zip(&r.grads) {
            x.iter_mut().zip(y).for_each(|(x, y)| *x += y);
        }
        self.parts.dis += r.parts.dis;
        self.parts.amp += r.parts.amp;
        self.parts.pha += r.parts.pha;
        self.parts.total += r.parts.total;
        self.teacher_logits
            .iter_mut()
            .zip(&r.teacher_logits)
            .for_each(|(x, y)| *x += y);
    }
}

/// Sums per-pair results of one worker's chunk in pair order.
fn run_chunk(
    state: &TrainState,
    cfg: &PretrainConfig,
    src: PairSource<'_>,
    pairs: &[usize],
    step: usize,
) -> Result<PairResult> {
    let mut acc: Option<PairResult> = None;
    for &p in pairs {
        let r = pair_pass(state, cfg, src, p, step)?;
        match &mut acc {
            None => acc = Some(r),
            Some(a) => a.add(&r),
        }
    }
    acc.ok_or_else(|| Error::Contract("empty batch chunk".into()))
}

/// Forward/backward over a batch. The batch is cut into one contiguous
/// chunk per worker and chunk sums are added in chunk order, so results
/// depend only on the batch and the thread count.
fn batch_pass(
    state: &TrainState,
    cfg: &PretrainConfig,
    src: PairSource<'_>,
    batch: &[usize],
    step: usize,
) -> Result<PairResult> {
    let workers = cfg.threads.min(batch.len()).max(1);
    let chunk = batch.len().div_ceil(workers);
    let results: Vec<Result<PairResult>> = if workers == 1 {
        vec![run_chunk(state, cfg, src, batch, step)]
    } else {
        std::thread::scope(|scope| {
            let handles: Vec<_> = batch
                .chunks(chunk)
                .map(|c| scope.spawn(move || run_chunk(state, cfg, src, c, step)))
                .collect();
            handles
                .into_iter()
                .map(|h| {
                    h.join()
                        .unwrap_or_else(|_| Err(Error::Contract("training worker panicked".into())))
                })
                .collect()
        })
    };
    let mut total: Option<PairResult> = None;
    for r in results {
        let r = r?;
        match &mut total {
            None => total = Some(r),
            Some(a) => a.add(&r),
        }
    }
    let mut out = total.ok_or_else(|| Error::Contract("empty batch".into()))?;
    let inv = 1.0 / batch.len() as f64;
    out.grads.iter_mut().flatten().for_each(|g| *g *= inv);
    out.parts.dis *= inv;
    out.parts.amp *= inv;
    out.parts.pha *= inv;
    out.parts.total *= inv;
    out.teacher_logits.iter_mut().for_each(|x| *x *= inv);
    Ok(out)
}

/// Total optimizer steps of a run.
pub fn total_steps(n_pairs: usize, cfg: &PretrainConfig) -> usize {
    cfg.max_steps
        .unwrap_or_else(|| cfg.epochs * n_pairs.div_ceil(cfg.batch_size))
}

/// Pretrains a fresh encoder. Each step runs both branches on a batch of
/// pairs, takes one Adam step on the student, then moves the teacher toward
/// the student with the scheduled EMA momentum. `on_step` sees every log
/// line as it is produced.
pub fn pretrain(
    model: &ModelConfig,
    cfg: &PretrainConfig,
    src: PairSource<'_>,
    mut on_step: impl FnMut(&StepLog) -> Result<()>,
) -> Result<TrainState> {
    cfg.validate()?;
    model.validate()?;
    src.validate()?;
    let total = total_steps(src.pairs.len(), cfg);
    let mut state = TrainState::new(model.clone(), cfg, total)?;
    let decay: Vec<bool> = state
        .student
        .tensors()
        .iter()
        .map(|t| t.shape().len() >= 2)
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = Vec::new();
    let mut cursor = 0;
    while state.step < total {
        if cursor >= order.len() {
            order = (0..src.pairs.len()).collect();
            order.shuffle(&mut rng);
            cursor = 0;
        }
        let end = (cursor + cfg.batch_size).min(order.len());
        let batch = order[cursor..end].to_vec();
        cursor = end;

        let step = state.step;
        let lr = cosine_lr(cfg.lr, step, total);
        let r = batch_pass(&state, cfg, src, &batch, step)?;
        state
            .optimizer
            .step(state.student.tensors_mut(), &r.grads, &decay, lr)?;
        if let Some(t) = state.student.tensors().iter().find(|t| !t.is_finite()) {
            return Err(Error::NonFinite(format!(
                "student parameters after step {step} (tensor of shape {:?})",
                t.shape()
            )));
        }
        let lambda = ema_momentum(step, total.saturating_sub(1), cfg.ema_start, cfg.ema_end)?;
        ema_update(state.teacher.tensors_mut(), state.student.tensors(), lambda)?;
        if let Some(c) = &mut state.center {
            let m = cfg.center_momentum;
            c.iter_mut()
                .zip(&r.teacher_logits)
                .for_each(|(c, t)| *c = m * *c + (1.0 - m) * t);
        }
        state.step += 1;
        on_step(&StepLog {
            step,
            l_dis: r.parts.dis,
            l_amp: r.parts.amp,
            l_pha: r.parts.pha,
            l_pre: r.parts.total,
            lambda,
            lr,
        })?;
    }
    Ok(state)
}
