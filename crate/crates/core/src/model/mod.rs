//! The windowed-sparse-attention encoder, its projection head and the
//! spectral reconstruction head.

mod attention;
mod checkpoint;

pub use attention::{
    equivalence_check, masked_logit_count, pwsa_attention, window_mask, AttentionMask,
};
pub use checkpoint::{decode_checkpoint, encode_checkpoint, read_checkpoint, write_checkpoint};

use std::f64::consts::PI;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Tensor, Var};
use crate::error::{Error, Result};
use crate::spectral::one_sided_len;
use crate::{SEGMENT_CHANNELS, SEGMENT_LEN};

/// Encoder hyperparameters.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub layers: usize,
    pub hidden: usize,
    pub mlp: usize,
    pub heads: usize,
    /// Attention span: token `i` attends to `j` iff `|i - j| <= window / 2`.
    pub window: usize,
    /// Samples per channel in one token.
    pub patch_len: usize,
    /// Width of the distillation head output.
    pub out_dim: usize,
    /// Samples per channel in one input window.
    pub input_len: usize,
    /// Hidden width of the reconstruction head.
    pub recon_hidden: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig::preset(Preset::Base)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Preset {
    Base,
    Large,
    Huge,
    /// Desk-scale encoder for experiments on one CPU.
    Tiny,
}

const LN_EPS: f64 = 1e-5;
const INIT_STD: f64 = 0.02;
/// Initial pre-softplus amplitude bias; softplus(-5) is about 0.007, close to
/// the scale of typical normalized spectral amplitudes.
const AMPLITUDE_BIAS_INIT: f64 = -5.0;

impl ModelConfig {
    pub fn preset(p: Preset) -> Self {
        let (layers, hidden, mlp, heads, out_dim, recon_hidden) = match p {
            Preset::Base => (2, 512, 256, 4, 512, 512),
            Preset::Large => (21, 512, 512, 4, 512, 512),
            Preset::Huge => (50, 512, 2048, 8, 512, 512),
            Preset::Tiny => (2, 64, 128, 4, 64, 64),
        };
        ModelConfig {
            layers,
            hidden,
            mlp,
            heads,
            window: 8,
            patch_len: 60,
            out_dim,
            input_len: SEGMENT_LEN,
            recon_hidden,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("hidden", self.hidden),
            ("mlp", self.mlp),
            ("heads", self.heads),
            ("patch_len", self.patch_len),
            ("out_dim", self.out_dim),
            ("input_len", self.input_len),
            ("recon_hidden", self.recon_hidden),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::Config(format!("model.{name} must be positive")));
            }
        }
        if !self.hidden.is_multiple_of(self.heads) {
            return Err(Error::Config(format!(
                "model.hidden {} is not divisible by model.heads {}",
                self.hidden, self.heads
            )));
        }
        if !self.window.is_multiple_of(2) {
            return Err(Error::Config(format!(
                "model.window must be even, got {}",
                self.window
            )));
        }
        if !self.input_len.is_multiple_of(self.patch_len) {
            return Err(Error::Config(format!(
                "model.patch_len {} does not divide input length {}",
                self.patch_len, self.input_len
            )));
        }
        Ok(())
    }

    pub fn n_tokens(&self) -> usize {
        self.input_len / self.patch_len
    }

    pub fn d_head(&self) -> usize {
        self.hidden / self.heads
    }

    /// One-sided spectral bins per channel.
    pub fn spectral_bins(&self) -> usize {
        one_sided_len(self.input_len)
    }
}

const BLOCK_PARAMS: usize = 16;
const HEAD_PARAMS: usize = 3;

/// Offsets of the per-block tensors.
mod blk {
    pub const LN1_G: usize = 0;
    pub const LN1_B: usize = 1;
    pub const WQ: usize = 2;
    pub const BQ: usize = 3;
    pub const WK: usize = 4;
    pub const BK: usize = 5;
    pub const WV: usize = 6;
    pub const BV: usize = 7;
    pub const WO: usize = 8;
    pub const BO: usize = 9;
    pub const LN2_G: usize = 10;
    pub const LN2_B: usize = 11;
    pub const W1: usize = 12;
    pub const B1: usize = 13;
    pub const W2: usize = 14;
    pub const B2: usize = 15;
}

/// Offsets after the last block.
mod tail {
    pub const LNF_G: usize = 0;
    pub const LNF_B: usize = 1;
    pub const PROJ_W1: usize = 2;
    pub const PROJ_B1: usize = 3;
    pub const PROJ_W2: usize = 4;
    pub const PROJ_B2: usize = 5;
    pub const REC_W1: usize = 6;
    pub const REC_B1: usize = 7;
    pub const REC_W2: usize = 8;
    pub const REC_B2: usize = 9;
}

#[derive(Clone, Copy)]
enum Init {
    Zero,
    One,
    Normal,
    Const(f64),
}

/// Names, shapes and initializers of every parameter, in storage order.
fn param_specs(cfg: &ModelConfig) -> Vec<(String, Vec<usize>, Init)> {
    let (h, m, n) = (cfg.hidden, cfg.mlp, cfg.n_tokens());
    let patch = SEGMENT_CHANNELS * cfg.patch_len;
    let bins = cfg.spectral_bins();
    let mut v = vec![
        ("embed.weight".to_string(), vec![patch, h], Init::Normal),
        ("embed.bias".to_string(), vec![h], Init::Zero),
        ("embed.position".to_string(), vec![n, h], Init::Normal),
    ];
    for l in 0..cfg.layers {
        let p = |s: &str| format!("block{l}.{s}");
        v.extend([
            (p("ln1.gamma"), vec![h], Init::One),
            (p("ln1.beta"), vec![h], Init::Zero),
            (p("attn.wq"), vec![h, h], Init::Normal),
            (p("attn.bq"), vec![h], Init::Zero),
            (p("attn.wk"), vec![h, h], Init::Normal),
            (p("attn.bk"), vec![h], Init::Zero),
            (p("attn.wv"), vec![h, h], Init::Normal),
            (p("attn.bv"), vec![h], Init::Zero),
            (p("attn.wo"), vec![h, h], Init::Normal),
            (p("attn.bo"), vec![h], Init::Zero),
            (p("ln2.gamma"), vec![h], Init::One),
            (p("ln2.beta"), vec![h], Init::Zero),
            (p("ffn.w1"), vec![h, m], Init::Normal),
            (p("ffn.b1"), vec![m], Init::Zero),
            (p("ffn.w2"), vec![m, h], Init::Normal),
            (p("ffn.b2"), vec![h], Init::Zero),
        ]);
    }
    v.extend([
        ("final_ln.gamma".to_string(), vec![h], Init::One),
        ("final_ln.beta".to_string(), vec![h], Init::Zero),
        ("proj.w1".to_string(), vec![h, h], Init::Normal),
        ("proj.b1".to_string(), vec![h], Init::Zero),
        ("proj.w2".to_string(), vec![h, cfg.out_dim], Init::Normal),
        ("proj.b2".to_string(), vec![cfg.out_dim], Init::Zero),
        (
            "recon.w1".to_string(),
            vec![h, cfg.recon_hidden],
            Init::Normal,
        ),
        ("recon.b1".to_string(), vec![cfg.recon_hidden], Init::Zero),
        (
            "recon.w2".to_string(),
            vec![cfg.recon_hidden, 2 * SEGMENT_CHANNELS * bins],
            Init::Normal,
        ),
        (
            "recon.b2".to_string(),
            vec![2 * SEGMENT_CHANNELS * bins],
            Init::Const(AMPLITUDE_BIAS_INIT),
        ),
    ]);
    v
}

/// Exact number of scalar parameters of an encoder with this config.
pub fn param_count(cfg: &ModelConfig) -> usize {
    param_specs(cfg)
        .iter()
        .map(|(_, s, _)| s.iter().product::<usize>())
        .sum()
}

/// Encoder weights in a fixed order, addressable by name.
#[derive(Clone, Debug, PartialEq)]
pub struct Encoder {
    config: ModelConfig,
    names: Vec<String>,
    tensors: Vec<Tensor>,
}

/// Graph handles of an encoder's parameters.
pub struct ParamVars {
    vars: Vec<Var>,
    layers: usize,
}

impl ParamVars {
    /// Wraps leaves created in encoder storage order.
    pub fn from_vars(cfg: &ModelConfig, vars: Vec<Var>) -> Self {
        ParamVars {
            vars,
            layers: cfg.layers,
        }
    }

    fn block(&self, layer: usize, offset: usize) -> Var {
        self.vars[HEAD_PARAMS + layer * BLOCK_PARAMS + offset]
    }

    fn tail(&self, offset: usize) -> Var {
        self.vars[HEAD_PARAMS + self.layers * BLOCK_PARAMS + offset]
    }

    pub fn vars(&self) -> &[Var] {
        &self.vars
    }
}

/// Outputs of one encoder pass.
#[derive(Clone, Copy, Debug)]
pub struct Encoded {
    /// Token features after the final layer norm, `[n_tokens, hidden]`.
    pub features: Var,
    /// Mean-pooled features, `[1, hidden]`.
    pub pooled: Var,
    /// Distillation head output, `[out_dim]`.
    pub logits: Var,
}

impl Encoder {
    /// Randomly initialized encoder (normal(0, 0.02) weights, zero biases,
    /// unit layer-norm gains).
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0, INIT_STD).expect("valid std");
        let mut names = Vec::new();
        let mut tensors = Vec::new();
        for (name, shape, init) in param_specs(&config) {
            let n: usize = shape.iter().product();
            let data = match init {
                Init::Zero => vec![0.0; n],
                Init::One => vec![1.0; n],
                Init::Const(c) => vec![c; n],
                Init::Normal => (0..n).map(|_| normal.sample(&mut rng)).collect(),
            };
            names.push(name);
            tensors.push(Tensor::new(shape, data)?);
        }
        let mut enc = Encoder {
            config,
            names,
            tensors,
        };
        // phase half of the reconstruction bias starts at zero
        let bins = enc.config.spectral_bins();
        let idx = enc.tail_index(tail::REC_B2);
        enc.tensors[idx].data_mut()[SEGMENT_CHANNELS * bins..].fill(0.0);
        Ok(enc)
    }

    /// Assembles an encoder from named tensors, checking names and shapes
    /// against the config.
    pub fn from_parts(config: ModelConfig, named: Vec<(String, Tensor)>) -> Result<Self> {
        config.validate()?;
        let specs = param_specs(&config);
        if specs.len() != named.len() {
            return Err(Error::Validation(format!(
                "config expects {} tensors, got {}",
                specs.len(),
                named.len()
            )));
        }
        let mut names = Vec::new();
        let mut tensors = Vec::new();
        for ((want_name, want_shape, _), (name, t)) in specs.into_iter().zip(named) {
            if want_name != name || want_shape != t.shape() {
                return Err(Error::Validation(format!(
                    "expected tensor {want_name} {want_shape:?}, got {name} {:?}",
                    t.shape()
                )));
            }
            if !t.is_finite() {
                return Err(Error::NonFinite(format!("parameter {name}")));
            }
            names.push(name);
            tensors.push(t);
        }
        Ok(Encoder {
            config,
            names,
            tensors,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor] {
        &mut self.tensors
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.names
            .iter()
            .position(|n| n == name)
            .map(|i| &self.tensors[i])
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        let i = self.names.iter().position(|n| n == name)?;
        Some(&mut self.tensors[i])
    }

    pub fn param_count(&self) -> usize {
        self.tensors.iter().map(Tensor::numel).sum()
    }

    fn tail_index(&self, offset: usize) -> usize {
        HEAD_PARAMS + self.config.layers * BLOCK_PARAMS + offset
    }

    /// Puts every parameter on `g`, trainable or constant.
    pub fn register<'a>(&'a self, g: &mut Graph<'a>, trainable: bool) -> ParamVars {
        let vars = self
            .tensors
            .iter()
            .map(|t| {
                if trainable {
                    g.param_ref(t)
                } else {
                    g.constant_ref(t)
                }
            })
            .collect();
        ParamVars {
            vars,
            layers: self.config.layers,
        }
    }

    /// Token features and distillation logits of one segment, without
    /// gradients.
    pub fn infer(&self, ppg: &[f64], ecg: &[f64]) -> Result<(Tensor, Tensor, Tensor)> {
        let mut g = Graph::new();
        let p = self.register(&mut g, false);
        let x = g.constant(tokenize(&self.config, ppg, ecg)?);
        let out = encode(&mut g, &self.config, &p, x)?;
        Ok((
            g.value(out.features).clone(),
            g.value(out.pooled).clone(),
            g.value(out.logits).clone(),
        ))
    }
}

/// Cuts both channels into `patch_len` patches and lays each token out as
/// `[ppg patch, ecg patch]`, giving `[n_tokens, 2 patch_len]`.
pub fn tokenize(cfg: &ModelConfig, ppg: &[f64], ecg: &[f64]) -> Result<Tensor> {
    if cfg.patch_len == 0 || !cfg.input_len.is_multiple_of(cfg.patch_len) {
        return Err(Error::Config(format!(
            "patch_len {} does not divide input length {}",
            cfg.patch_len, cfg.input_len
        )));
    }
    if ppg.len() != cfg.input_len || ecg.len() != cfg.input_len {
        return Err(Error::Contract(format!(
            "expected {} samples per channel, got {} and {}",
            cfg.input_len,
            ppg.len(),
            ecg.len()
        )));
    }
    let p = cfg.patch_len;
    let n = cfg.n_tokens();
    let mut data = Vec::with_capacity(n * 2 * p);
    for t in 0..n {
        data.extend_from_slice(&ppg[t * p..(t + 1) * p]);
        data.extend_from_slice(&ecg[t * p..(t + 1) * p]);
    }
    Tensor::new(vec![n, 2 * p], data)
}

fn linear(g: &mut Graph<'_>, x: Var, w: Var, b: Var) -> Result<Var> {
    let y = g.matmul(x, w)?;
    g.add(y, b)
}

fn check_finite(g: &Graph<'_>, v: Var, what: impl FnOnce() -> String) -> Result<()> {
    if g.value(v).is_finite() {
        Ok(())
    } else {
        Err(Error::NonFinite(format!("activation of {}", what())))
    }
}

/// Runs the encoder on tokenized input `[n_tokens, 2 patch_len]`.
///
/// Each block is pre-LN: `x + Attn(LN(x))` then `x + FFN(LN(x))`, where the
/// attention layer-normalizes queries and keys per head and restricts every
/// token to the window around it.
pub fn encode(g: &mut Graph<'_>, cfg: &ModelConfig, p: &ParamVars, tokens: Var) -> Result<Encoded> {
    let x = linear(g, tokens, p.vars[0], p.vars[1])?;
    let mut x = g.add(x, p.vars[2])?;
    check_finite(g, x, || "token embedding".into())?;
    let dh = cfg.d_head();
    let half = cfg.window / 2;
    let scale = 1.0 / (dh as f64).sqrt();
    for l in 0..cfg.layers {
        let a = g.layer_norm(
            x,
            Some(p.block(l, blk::LN1_G)),
            Some(p.block(l, blk::LN1_B)),
            LN_EPS,
        )?;
        let q = linear(g, a, p.block(l, blk::WQ), p.block(l, blk::BQ))?;
        let k = linear(g, a, p.block(l, blk::WK), p.block(l, blk::BK))?;
        let v = linear(g, a, p.block(l, blk::WV), p.block(l, blk::BV))?;
        let mut heads = Vec::with_capacity(cfg.heads);
        for h in 0..cfg.heads {
            let qh = g.slice(q, 1, h * dh, (h + 1) * dh)?;
            let kh = g.slice(k, 1, h * dh, (h + 1) * dh)?;
            let vh = g.slice(v, 1, h * dh, (h + 1) * dh)?;
            let qn = g.layer_norm(qh, None, None, LN_EPS)?;
            let kn = g.layer_norm(kh, None, None, LN_EPS)?;
            heads.push(g.windowed_attention(qn, kn, vh, half, scale)?);
        }
        let ctx = if heads.len() == 1 {
            heads[0]
        } else {
            g.concat(&heads, 1)?
        };
        let o = linear(g, ctx, p.block(l, blk::WO), p.block(l, blk::BO))?;
        x = g.add(x, o)?;
        let b = g.layer_norm(
            x,
            Some(p.block(l, blk::LN2_G)),
            Some(p.block(l, blk::LN2_B)),
            LN_EPS,
        )?;
        let f = linear(g, b, p.block(l, blk::W1), p.block(l, blk::B1))?;
        let f = g.gelu(f);
        let f = linear(g, f, p.block(l, blk::W2), p.block(l, blk::B2))?;
        x = g.add(x, f)?;
        check_finite(g, x, || format!("layer {l}"))?;
    }
    let features = g.layer_norm(
        x,
        Some(p.tail(tail::LNF_G)),
        Some(p.tail(tail::LNF_B)),
        LN_EPS,
    )?;
    let pooled = g.mean_rows(features)?;
    let pooled = g.reshape(pooled, &[1, cfg.hidden])?;
    let h = linear(g, pooled, p.tail(tail::PROJ_W1), p.tail(tail::PROJ_B1))?;
    let h = g.gelu(h);
    let logits = linear(g, h, p.tail(tail::PROJ_W2), p.tail(tail::PROJ_B2))?;
    let logits = g.reshape(logits, &[cfg.out_dim])?;
    check_finite(g, logits, || "projection head".into())?;
    Ok(Encoded {
        features,
        pooled,
        logits,
    })
}

/// Reconstruction head: pooled features -> FFN -> amplitude (softplus, >= 0)
/// and phase (pi tanh, in (-pi, pi)) spectra, each `[2, bins]`.
pub fn reconstruct_spectra(
    g: &mut Graph<'_>,
    cfg: &ModelConfig,
    p: &ParamVars,
    pooled: Var,
) -> Result<(Var, Var)> {
    let bins = cfg.spectral_bins();
    let h = linear(g, pooled, p.tail(tail::REC_W1), p.tail(tail::REC_B1))?;
    let h = g.gelu(h);
    let out = linear(g, h, p.tail(tail::REC_W2), p.tail(tail::REC_B2))?;
    let half = SEGMENT_CHANNELS * bins;
    let amp = g.slice(out, 1, 0, half)?;
    let amp = g.softplus(amp);
    let amp = g.reshape(amp, &[SEGMENT_CHANNELS, bins])?;
    let phase = g.slice(out, 1, half, 2 * half)?;
    let phase = g.tanh(phase);
    let phase = g.scale(phase, PI);
    let phase = g.reshape(phase, &[SEGMENT_CHANNELS, bins])?;
    check_finite(g, amp, || "reconstruction head".into())?;
    Ok((amp, phase))
}

/// Config used by the encoder gradient checks: 2 layers, hidden 16, 2 heads,
/// 10 tokens of 4 samples per channel.
pub fn gradcheck_config() -> ModelConfig {
    ModelConfig {
        layers: 2,
        hidden: 16,
        mlp: 32,
        heads: 2,
        window: 4,
        patch_len: 4,
        out_dim: 8,
        input_len: 40,
        recon_hidden: 16,
    }
}

/// Encoder at a random point: every tensor drawn from normal(0, `spread`),
/// layer-norm gains centred on 1. Spread wide enough exercises every
/// nonlinearity away from its linear regime.
pub fn random_point(cfg: &ModelConfig, seed: u64, spread: f64) -> Result<Encoder> {
    let mut enc = Encoder::new(cfg.clone(), seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15);
    let normal = Normal::new(0.0, spread).expect("valid std");
    for (name, t) in enc.names.iter().zip(enc.tensors.iter_mut()) {
        let centre = if name.ends_with(".gamma") { 1.0 } else { 0.0 };
        for x in t.data_mut() {
            *x = centre + normal.sample(&mut rng);
        }
    }
    Ok(enc)
}

/// Finite-difference check of a full encoder pass (features, projection head
/// and reconstruction head) with respect to every parameter at a random
/// point. Returns the maximum relative error.
pub fn encoder_grad_check(cfg: &ModelConfig, seed: u64) -> Result<f64> {
    let enc = random_point(cfg, seed, 0.3)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(1));
    let unit = Normal::new(0.0, 1.0).expect("valid std");
    let ppg: Vec<f64> = (0..cfg.input_len).map(|_| unit.sample(&mut rng)).collect();
    let ecg: Vec<f64> = (0..cfg.input_len).map(|_| unit.sample(&mut rng)).collect();
    let tokens = tokenize(cfg, &ppg, &ecg)?;
    let n_feat = cfg.n_tokens() * cfg.hidden;
    let bins = cfg.spectral_bins();
    let mut weights = |n: usize, shape: &[usize]| {
        Tensor::new(
            shape.to_vec(),
            (0..n).map(|_| unit.sample(&mut rng)).collect(),
        )
    };
    let w_feat = weights(n_feat, &[cfg.n_tokens(), cfg.hidden])?;
    let w_logit = weights(cfg.out_dim, &[cfg.out_dim])?;
    let w_amp = weights(2 * bins, &[SEGMENT_CHANNELS, bins])?;
    let w_pha = weights(2 * bins, &[SEGMENT_CHANNELS, bins])?;
    crate::autodiff::grad_check(enc.tensors(), 1e-5, |g, vars| {
        let p = ParamVars::from_vars(cfg, vars.to_vec());
        let x = g.constant(tokens.clone());
        let out = encode(g, cfg, &p, x)?;
        let (amp, phase) = reconstruct_spectra(g, cfg, &p, out.pooled)?;
        let mut total = None;
        for (v, w) in [
            (out.features, &w_feat),
            (out.logits, &w_logit),
            (amp, &w_amp),
            (phase, &w_pha),
        ] {
            let c = g.constant(w.clone());
            let m = g.mul(v, c)?;
            let s = g.sum(m);
            total = Some(match total {
                None => s,
                Some(t) => g.add(t, s)?,
            });
        }
        Ok(total.expect("four terms"))
    })
}
