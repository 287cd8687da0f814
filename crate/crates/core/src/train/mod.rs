//! Teacher/student self-distillation pretraining on quality-divergent pairs.
//!
//! For each pair the teacher encodes the high-quality segment and the student
//! the low-quality one. The student is trained to match the teacher's
//! sharpened output distribution and to reconstruct the high-quality
//! segment's amplitude and phase spectra; the teacher follows the student by
//! an exponential moving average.

mod optim;
mod pretrain;

pub use optim::{cosine_lr, Adam, AdamConfig};
pub use pretrain::{pretrain, read_log, total_steps, PairSource, StepLog, TrainState};

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Tensor, Var};
use crate::error::{Error, Result};
use crate::model::{encode, reconstruct_spectra, ModelConfig, ParamVars};
use crate::spectral::spectral_target;
use crate::SEGMENT_CHANNELS;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PretrainConfig {
    /// Student temperature.
    pub tau_s: f64,
    /// Teacher temperature.
    pub tau_t: f64,
    pub lambda_amp: f64,
    pub lambda_pha: f64,
    pub lr: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub epochs: usize,
    /// Caps the run length; the schedules then span this many steps.
    pub max_steps: Option<usize>,
    pub ema_start: f64,
    pub ema_end: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    /// Subtract a running mean of teacher logits before the teacher softmax.
    pub teacher_centering: bool,
    pub center_momentum: f64,
    /// Taken from the run configuration, not the section.
    #[serde(skip)]
    pub seed: u64,
    /// Worker threads for the per-pair passes within a step.
    #[serde(skip)]
    pub threads: usize,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        PretrainConfig {
            tau_s: 0.1,
            tau_t: 0.04,
            lambda_amp: 0.5,
            lambda_pha: 0.5,
            lr: 1e-4,
            weight_decay: 0.04,
            batch_size: 512,
            epochs: 10,
            max_steps: None,
            ema_start: 0.996,
            ema_end: 1.0,
            beta1: 0.7,
            beta2: 0.999,
            adam_eps: 1e-8,
            teacher_centering: false,
            center_momentum: 0.9,
            seed: 0,
            threads: 1,
        }
    }
}

impl PretrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(self.tau_s > 0.0 && self.tau_t > 0.0) {
            return bad(format!(
                "temperatures must be positive, got tau_s {} tau_t {}",
                self.tau_s, self.tau_t
            ));
        }
        if !(self.ema_start <= self.ema_end && self.ema_end <= 1.0 && self.ema_start >= 0.0) {
            return bad(format!(
                "need 0 <= ema_start <= ema_end <= 1, got {} and {}",
                self.ema_start, self.ema_end
            ));
        }
        if !(self.lambda_amp >= 0.0 && self.lambda_pha >= 0.0) {
            return bad("loss weights must be non-negative".into());
        }
        if !(self.lr >= 0.0 && self.weight_decay >= 0.0) {
            return bad("lr and weight_decay must be non-negative".into());
        }
        if self.batch_size == 0
            || self.epochs == 0
            || self.threads == 0
            || self.max_steps == Some(0)
        {
            return bad("batch_size, epochs, threads and max_steps must be positive".into());
        }
        if !((0.0..1.0).contains(&self.beta1) && (0.0..1.0).contains(&self.beta2)) {
            return bad("Adam betas must lie in [0, 1)".into());
        }
        if !(0.0..=1.0).contains(&self.center_momentum) {
            return bad("center_momentum must lie in [0, 1]".into());
        }
        Ok(())
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.adam_eps,
            weight_decay: self.weight_decay,
        }
    }
}

/// `softmax(logits / tau)`.
pub fn soft_distribution(logits: &[f64], tau: f64) -> Result<Vec<f64>> {
    if !(tau > 0.0) {
        return Err(Error::Config(format!(
            "temperature must be positive, got {tau}"
        )));
    }
    let m = logits
        .iter()
        .fold(f64::NEG_INFINITY, |a, &b| a.max(b / tau));
    let e: Vec<f64> = logits.iter().map(|&z| (z / tau - m).exp()).collect();
    let s: f64 = e.iter().sum();
    Ok(e.into_iter().map(|v| v / s).collect())
}

/// `-sum_m P_t(m) log P_s(m)` for one pair, with the student log-probabilities
/// computed in log-sum-exp form.
pub fn distillation_loss(
    teacher_logits: &[f64],
    student_logits: &[f64],
    tau_t: f64,
    tau_s: f64,
) -> Result<f64> {
    if teacher_logits.len() != student_logits.len() {
        return Err(Error::Contract(format!(
            "teacher has {} logits, student {}",
            teacher_logits.len(),
            student_logits.len()
        )));
    }
    let pt = soft_distribution(teacher_logits, tau_t)?;
    if !(tau_s > 0.0) {
        return Err(Error::Config(format!(
            "temperature must be positive, got {tau_s}"
        )));
    }
    let m = student_logits
        .iter()
        .fold(f64::NEG_INFINITY, |a, &b| a.max(b / tau_s));
    let lse = m + student_logits
        .iter()
        .map(|&z| (z / tau_s - m).exp())
        .sum::<f64>()
        .ln();
    Ok(pt
        .iter()
        .zip(student_logits)
        .map(|(p, &z)| {
            if *p == 0.0 {
                0.0
            } else {
                -p * (z / tau_s - lse)
            }
        })
        .sum())
}

/// EMA momentum at `step`: cosine ramp from `start` (step 0) to `end`
/// (step `total`).
pub fn ema_momentum(step: usize, total: usize, start: f64, end: f64) -> Result<f64> {
    if step > total {
        return Err(Error::Contract(format!(
            "step {step} beyond schedule length {total}"
        )));
    }
    if total == 0 {
        return Ok(start);
    }
    let c = (PI * step as f64 / total as f64).cos();
    Ok(end - (end - start) * (1.0 + c) / 2.0)
}

/// `teacher <- lambda teacher + (1 - lambda) student`, in place.
pub fn ema_update(teacher: &mut [Tensor], student: &[Tensor], lambda: f64) -> Result<()> {
    if teacher.len() != student.len() {
        return Err(Error::Contract(format!(
            "teacher has {} tensors, student {}",
            teacher.len(),
            student.len()
        )));
    }
    for (t, s) in teacher.iter_mut().zip(student) {
        if t.shape() != s.shape() {
            return Err(Error::Shape {
                op: "ema_update",
                left: t.shape().to_vec(),
                right: s.shape().to_vec(),
            });
        }
        for (a, &b) in t.data_mut().iter_mut().zip(s.data()) {
            *a = lambda * *a + (1.0 - lambda) * b;
        }
    }
    Ok(())
}

/// Reconstruction targets of one high-quality segment: per-channel amplitude
/// (scaled by 2/N, so a unit sinusoid on a bin has amplitude 1) and phase,
/// plus the bins whose phase is defined.
#[derive(Clone, Debug, PartialEq)]
pub struct ReconTarget {
    pub amplitude: Tensor,
    pub phase: Tensor,
    pub phase_mask: Vec<bool>,
}

impl ReconTarget {
    pub fn from_channels(ppg: &[f64], ecg: &[f64]) -> Result<Self> {
        let target = spectral_target(&[ppg, ecg])?;
        let n = target.n;
        let bins = target.channels[0].amplitude.len();
        let scale = 2.0 / n as f64;
        let mut amp = Vec::with_capacity(SEGMENT_CHANNELS * bins);
        let mut phase = Vec::with_capacity(SEGMENT_CHANNELS * bins);
        let mut mask = Vec::with_capacity(SEGMENT_CHANNELS * bins);
        for c in &target.channels {
            amp.extend(c.amplitude.iter().map(|a| a * scale));
            phase.extend_from_slice(&c.phase);
            mask.extend(c.phase_mask());
        }
        Ok(ReconTarget {
            amplitude: Tensor::new(vec![SEGMENT_CHANNELS, bins], amp)?,
            phase: Tensor::new(vec![SEGMENT_CHANNELS, bins], phase)?,
            phase_mask: mask,
        })
    }
}

/// Scalar loss nodes of one pair.
#[derive(Clone, Copy, Debug)]
pub struct PairLoss {
    pub total: Var,
    pub dis: Var,
    pub amp: Var,
    pub pha: Var,
    /// Teacher logits before centering (a detached copy).
    pub teacher_logits: Var,
}

/// Loss values, batch means.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossParts {
    pub dis: f64,
    pub amp: f64,
    pub pha: f64,
    pub total: f64,
}

/// Builds `L_dis + lambda_amp L_amp + lambda_pha L_pha` for one pair.
///
/// The teacher branch runs on `high_tokens` and is detached before the
/// softmax, so no gradient reaches teacher parameters even when they are
/// registered as trainable.
#[allow(clippy::too_many_arguments)]
pub fn pair_loss(
    g: &mut Graph<'_>,
    model: &ModelConfig,
    cfg: &PretrainConfig,
    student: &ParamVars,
    teacher: &ParamVars,
    high_tokens: Var,
    low_tokens: Var,
    target: &ReconTarget,
    center: Option<&[f64]>,
) -> Result<PairLoss> {
    let t_out = encode(g, model, teacher, high_tokens)?;
    let teacher_logits = g.detach(t_out.logits);
    let centred = match center {
        Some(c) => {
            let c = g.constant(Tensor::vector(c.to_vec()));
            g.sub(teacher_logits, c)?
        }
        None => teacher_logits,
    };
    let p_t = g.softmax(centred, cfg.tau_t);

    let s_out = encode(g, model, student, low_tokens)?;
    let logp_s = g.log_softmax(s_out.logits, cfg.tau_s);
    let dis = g.cross_entropy(p_t, logp_s)?;

    let (amp_hat, pha_hat) = reconstruct_spectra(g, model, student, s_out.pooled)?;
    let amp_t = g.constant(target.amplitude.clone());
    let pha_t = g.constant(target.phase.clone());
    let amp = g.mse(amp_hat, amp_t)?;
    let pha = g.masked_mse(pha_hat, pha_t, &target.phase_mask)?;

    let wa = g.scale(amp, cfg.lambda_amp);
    let wp = g.scale(pha, cfg.lambda_pha);
    let total = g.add(dis, wa)?;
    let total = g.add(total, wp)?;
    Ok(PairLoss {
        total,
        dis,
        amp,
        pha,
        teacher_logits,
    })
}

/// Finite-difference check of the composite pretraining loss of one pair with
/// respect to every student parameter, on the gradient-check encoder config
/// at a random point.
pub fn pretrain_grad_check(seed: u64) -> Result<f64> {
    use crate::model::{gradcheck_config, random_point, tokenize};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    let model = gradcheck_config();
    // mild temperatures keep the softmax away from saturation at a random
    // point, where its gradients would fall below finite-difference noise
    let cfg = PretrainConfig {
        tau_s: 1.0,
        tau_t: 0.5,
        teacher_centering: true,
        ..PretrainConfig::default()
    };
    let student = random_point(&model, seed, 0.3)?;
    let teacher = random_point(&model, seed + 1, 0.3)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed + 2);
    let mut sig = || -> Vec<f64> { (0..model.input_len).map(|_| rng.random::<f64>()).collect() };
    let (hp, he, lp, le) = (sig(), sig(), sig(), sig());
    let high = tokenize(&model, &hp, &he)?;
    let low = tokenize(&model, &lp, &le)?;
    let target = ReconTarget::from_channels(&hp, &he)?;
    let center: Vec<f64> = (0..model.out_dim).map(|i| 0.01 * i as f64).collect();
    crate::autodiff::grad_check(student.tensors(), 1e-5, |g, vars| {
        let s = ParamVars::from_vars(&model, vars.to_vec());
        let t = teacher
            .tensors()
            .iter()
            .map(|x| g.constant(x.clone()))
            .collect();
        let t = ParamVars::from_vars(&model, t);
        let (h, l) = (g.constant(high.clone()), g.constant(low.clone()));
        Ok(pair_loss(g, &model, &cfg, &s, &t, h, l, &target, Some(&center))?.total)
    })
}
