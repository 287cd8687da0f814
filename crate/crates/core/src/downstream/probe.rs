//! Multinomial logistic-regression probe on frozen features.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProbeConfig {
    /// Full-batch Adam iterations.
    pub iterations: usize,
    pub lr: f64,
    /// L2 penalty on the weights (not the biases).
    pub l2: f64,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        ProbeConfig {
            iterations: 300,
            lr: 0.05,
            l2: 1e-3,
        }
    }
}

/// Standardizes features with training statistics, then applies an affine
/// map to class logits.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinearProbe {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    /// Row-major `[dim, classes]`.
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
    pub classes: usize,
}

fn log_softmax_row(z: &mut [f64]) {
    let m = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = m + z.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
    z.iter_mut().for_each(|v| *v -= lse);
}

impl LinearProbe {
    /// Fits the probe by minimizing mean cross-entropy plus the L2 penalty,
    /// starting from zero weights (deterministic).
    pub fn fit(
        features: &[Vec<f64>],
        labels: &[usize],
        classes: usize,
        cfg: &ProbeConfig,
    ) -> Result<Self> {
        if features.is_empty() || features.len() != labels.len() {
            return Err(Error::Contract(format!(
                "{} feature rows but {} labels",
                features.len(),
                labels.len()
            )));
        }
        let d = features[0].len();
        if features.iter().any(|f| f.len() != d) {
            return Err(Error::Contract("feature rows differ in width".into()));
        }
        if let Some(&l) = labels.iter().find(|&&l| l >= classes) {
            return Err(Error::Contract(format!(
                "label {l} outside {classes} classes"
            )));
        }
        let n = features.len() as f64;
        let mut mean = vec![0.0; d];
        for f in features {
            mean.iter_mut().zip(f).for_each(|(m, v)| *m += v / n);
        }
        let mut std = vec![0.0; d];
        for f in features {
            std.iter_mut()
                .zip(f)
                .zip(&mean)
                .for_each(|((s, v), m)| *s += (v - m).powi(2) / n);
        }
        std.iter_mut()
            .for_each(|s| *s = if *s > 1e-24 { s.sqrt() } else { 1.0 });
        let x: Vec<Vec<f64>> = features
            .iter()
            .map(|f| {
                f.iter()
                    .zip(&mean)
                    .zip(&std)
                    .map(|((v, m), s)| (v - m) / s)
                    .collect()
            })
            .collect();

        let mut probe = LinearProbe {
            mean,
            std,
            weights: vec![0.0; d * classes],
            bias: vec![0.0; classes],
            classes,
        };
        let np = d * classes + classes;
        let (mut m1, mut m2) = (vec![0.0; np], vec![0.0; np]);
        let (b1, b2, eps) = (0.9, 0.999, 1e-8);
        let mut grad = vec![0.0; np];
        let mut z = vec![0.0; classes];
        for it in 1..=cfg.iterations {
            grad.iter_mut().for_each(|g| *g = 0.0);
            for (row, &y) in x.iter().zip(labels) {
                probe.logits_std(row, &mut z);
                log_softmax_row(&mut z);
                for c in 0..classes {
                    let delta = (z[c].exp() - f64::from(u8::from(c == y))) / n;
                    for (j, v) in row.iter().enumerate() {
                        grad[j * classes + c] += delta * v;
                    }
                    grad[d * classes + c] += delta;
                }
            }
            for (g, w) in grad.iter_mut().zip(&probe.weights) {
                *g += cfg.l2 * w;
            }
            let c1 = 1.0 - f64::powi(b1, it as i32);
            let c2 = 1.0 - f64::powi(b2, it as i32);
            for k in 0..np {
                m1[k] = b1 * m1[k] + (1.0 - b1) * grad[k];
                m2[k] = b2 * m2[k] + (1.0 - b2) * grad[k] * grad[k];
                let step = cfg.lr * (m1[k] / c1) / ((m2[k] / c2).sqrt() + eps);
                if k < d * classes {
                    probe.weights[k] -= step;
                } else {
                    probe.bias[k - d * classes] -= step;
                }
            }
        }
        Ok(probe)
    }

    fn logits_std(&self, x: &[f64], z: &mut [f64]) {
        z.copy_from_slice(&self.bias);
        for (j, v) in x.iter().enumerate() {
            let w = &self.weights[j * self.classes..(j + 1) * self.classes];
            z.iter_mut().zip(w).for_each(|(z, w)| *z += v * w);
        }
    }

    pub fn predict(&self, features: &[f64]) -> usize {
        let x: Vec<f64> = features
            .iter()
            .zip(&self.mean)
            .zip(&self.std)
            .map(|((v, m), s)| (v - m) / s)
            .collect();
        let mut z = vec![0.0; self.classes];
        self.logits_std(&x, &mut z);
        z.iter()
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |best, (i, &v)| {
                if v > best.1 {
                    (i, v)
                } else {
                    best
                }
            })
            .0
    }

    pub fn accuracy(&self, features: &[Vec<f64>], labels: &[usize]) -> f64 {
        if labels.is_empty() {
            return 0.0;
        }
        let hits = features
            .iter()
            .zip(labels)
            .filter(|(f, &y)| self.predict(f) == y)
            .count();
        hits as f64 / labels.len() as f64
    }
}
