//! Stand-alone windowed attention kernel, used for equivalence checks and
//! cost measurements outside the autodiff graph.

use crate::autodiff::Tensor;
use crate::error::{Error, Result};

/// Which key positions each query may attend to.
#[derive(Clone, Debug, PartialEq)]
pub enum AttentionMask {
    /// Symmetric band: position `i` sees `j` iff `|i - j| <= w / 2`.
    Window(usize),
    /// Explicit row-major `n x n` mask, evaluated densely.
    Dense(Vec<bool>),
}

/// Row-major `n x n` mask allowing `|i - j| <= w / 2`. `w = 0` gives the
/// identity; `w >= 2 (n - 1)` allows everything.
pub fn window_mask(n: usize, w: usize) -> Vec<bool> {
    let half = w / 2;
    (0..n * n)
        .map(|x| (x / n).abs_diff(x % n) <= half)
        .collect()
}

/// Number of query/key logits a window of width `w` evaluates over `n`
/// tokens: `n (w + 1)` minus the positions cut off at both edges.
pub fn masked_logit_count(n: usize, w: usize) -> usize {
    let half = w / 2;
    (0..n)
        .map(|i| (i + half).min(n.saturating_sub(1)) + 1 - i.saturating_sub(half))
        .sum()
}

fn layer_norm_rows(x: &[f64], d: usize, eps: f64) -> Vec<f64> {
    let mut out = x.to_vec();
    for row in out.chunks_mut(d) {
        let mean = row.iter().sum::<f64>() / d as f64;
        let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / d as f64;
        let is = 1.0 / (var + eps).sqrt();
        row.iter_mut().for_each(|v| *v = (*v - mean) * is);
    }
    out
}

/// Multi-head attention `softmax(LN(Q) LN(K)^T / sqrt(d_head)) V` over
/// `[n, hidden]` inputs split into `heads` contiguous column blocks; the
/// per-head contexts are concatenated back into `[n, hidden]`. LN has no
/// affine part here.
pub fn pwsa_attention(
    q: &Tensor,
    k: &Tensor,
    v: &Tensor,
    heads: usize,
    mask: &AttentionMask,
) -> Result<Tensor> {
    let shape = q.shape();
    if shape.len() != 2 || k.shape() != shape || v.shape() != shape {
        return Err(Error::Shape {
            op: "pwsa_attention",
            left: shape.to_vec(),
            right: k.shape().to_vec(),
        });
    }
    let (n, hidden) = (shape[0], shape[1]);
    if heads == 0 || hidden % heads != 0 {
        return Err(Error::Config(format!(
            "hidden {hidden} not divisible by {heads} heads"
        )));
    }
    if let AttentionMask::Dense(m) = mask {
        if m.len() != n * n {
            return Err(Error::Contract(format!(
                "dense mask has {} entries for {n} tokens",
                m.len()
            )));
        }
    }
    let dh = hidden / heads;
    let scale = 1.0 / (dh as f64).sqrt();
    let mut out = vec![0.0; n * hidden];
    let mut logits = vec![0.0; n];
    for h in 0..heads {
        let cols = |t: &Tensor| -> Vec<f64> {
            t.data()
                .chunks(hidden)
                .flat_map(|row| row[h * dh..(h + 1) * dh].iter().copied())
                .collect()
        };
        let qh = layer_norm_rows(&cols(q), dh, 1e-5);
        let kh = layer_norm_rows(&cols(k), dh, 1e-5);
        let vh = cols(v);
        for i in 0..n {
            let (lo, hi) = match mask {
                AttentionMask::Window(w) => (i.saturating_sub(w / 2), (i + w / 2).min(n - 1)),
                AttentionMask::Dense(_) => (0, n - 1),
            };
            let qi = &qh[i * dh..(i + 1) * dh];
            let mut m = f64::NEG_INFINITY;
            for j in lo..=hi {
                let allowed = match mask {
                    AttentionMask::Window(_) => true,
                    AttentionMask::Dense(mk) => mk[i * n + j],
                };
                logits[j] = if allowed {
                    scale
                        * qi.iter()
                            .zip(&kh[j * dh..(j + 1) * dh])
                            .map(|(a, b)| a * b)
                            .sum::<f64>()
                } else {
                    f64::NEG_INFINITY
                };
                m = m.max(logits[j]);
            }
            let mut z = 0.0;
            for l in &mut logits[lo..=hi] {
                *l = (*l - m).exp();
                z += *l;
            }
            let oi = &mut out[i * hidden + h * dh..i * hidden + (h + 1) * dh];
            for j in lo..=hi {
                let p = logits[j] / z;
                if p != 0.0 {
                    oi.iter_mut()
                        .zip(&vh[j * dh..(j + 1) * dh])
                        .for_each(|(o, x)| *o += p * x);
                }
            }
        }
    }
    Tensor::new(vec![n, hidden], out)
}

/// Largest deviations found over `trials` random inputs (random `n` in
/// 2..=40, hidden 8, 2 heads): a window of `2 (n - 1)` against dense full
/// attention, and window 0 against the value rows themselves.
pub fn equivalence_check(trials: usize, seed: u64) -> Result<(f64, f64)> {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let (mut wide, mut self_only) = (0.0f64, 0.0f64);
    for _ in 0..trials {
        let n = rng.random_range(2..=40);
        let mut rand_t = || {
            Tensor::matrix(
                n,
                8,
                (0..n * 8).map(|_| rng.random_range(-3.0..3.0)).collect(),
            )
        };
        let (q, k, v) = (rand_t(), rand_t(), rand_t());
        let a = pwsa_attention(&q, &k, &v, 2, &AttentionMask::Window(2 * (n - 1)))?;
        let b = pwsa_attention(&q, &k, &v, 2, &AttentionMask::Dense(vec![true; n * n]))?;
        wide = wide.max(a.max_abs_diff(&b));
        let c = pwsa_attention(&q, &k, &v, 2, &AttentionMask::Window(0))?;
        self_only = self_only.max(c.max_abs_diff(&v));
    }
    Ok((wide, self_only))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rand(rng: &mut ChaCha8Rng, n: usize, d: usize, s: f64) -> Tensor {
        Tensor::matrix(
            n,
            d,
            (0..n * d)
                .map(|_| s * rng.random_range(-1.0..1.0))
                .collect(),
        )
    }

    #[test]
    fn mask_examples() {
        let m = window_mask(5, 2);
        let row2: Vec<usize> = (0..5).filter(|&j| m[2 * 5 + j]).collect();
        assert_eq!(row2, vec![1, 2, 3]);
        let id = window_mask(4, 0);
        for i in 0..4 {
            for j in 0..4 {
                assert_eq!(id[i * 4 + j], i == j);
            }
        }
        assert!(window_mask(6, 10).iter().all(|&b| b));
        assert_eq!(masked_logit_count(5, 2), 13);
        assert_eq!(masked_logit_count(150, 8), 150 * 9 - 2 * (4 + 3 + 2 + 1));
        let dense: usize = window_mask(37, 6).iter().filter(|&&b| b).count();
        assert_eq!(masked_logit_count(37, 6), dense);
    }

    #[test]
    fn window_equals_dense_kernel() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let n = 12;
        let (q, k, v) = (
            rand(&mut rng, n, 8, 1.0),
            rand(&mut rng, n, 8, 1.0),
            rand(&mut rng, n, 8, 1.0),
        );
        for w in [0, 2, 4, 6] {
            let a = pwsa_attention(&q, &k, &v, 2, &AttentionMask::Window(w)).unwrap();
            let b =
                pwsa_attention(&q, &k, &v, 2, &AttentionMask::Dense(window_mask(n, w))).unwrap();
            assert!(a.max_abs_diff(&b) < 1e-12);
        }
        let wide = pwsa_attention(&q, &k, &v, 2, &AttentionMask::Window(2 * (n - 1))).unwrap();
        let full = pwsa_attention(&q, &k, &v, 2, &AttentionMask::Dense(vec![true; n * n])).unwrap();
        assert!(wide.max_abs_diff(&full) < 1e-10);
    }

    #[test]
    fn wide_window_is_full_attention_and_zero_window_is_identity() {
        let (wide, self_only) = equivalence_check(50, 3).unwrap();
        assert!(wide <= 1e-10, "{wide:e}");
        assert_eq!(self_only, 0.0);
    }

    #[test]
    fn single_token_and_uniform_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let (q, k, v) = (
            rand(&mut rng, 1, 4, 1.0),
            rand(&mut rng, 1, 4, 1.0),
            rand(&mut rng, 1, 4, 1.0),
        );
        let out = pwsa_attention(&q, &k, &v, 1, &AttentionMask::Window(8)).unwrap();
        assert!(out.max_abs_diff(&v) < 1e-15);

        // identical query/key rows: uniform weights, output = mean of V rows
        let n = 5;
        let row: Vec<f64> = vec![0.3, -1.0, 2.0, 0.1];
        let qk = Tensor::matrix(n, 4, row.iter().cycle().take(n * 4).copied().collect());
        let v = rand(&mut rng, n, 4, 1.0);
        let out =
            pwsa_attention(&qk, &qk, &v, 1, &AttentionMask::Dense(vec![true; n * n])).unwrap();
        for c in 0..4 {
            let mean = (0..n).map(|j| v.data()[j * 4 + c]).sum::<f64>() / n as f64;
            for i in 0..n {
                assert!((out.data()[i * 4 + c] - mean).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn layer_norm_bounds_logits_for_huge_inputs() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let (n, d) = (16, 128);
        let q = rand(&mut rng, n, d, 1e6);
        let k = rand(&mut rng, n, d, 1e6);
        let scale = 1.0 / (d as f64).sqrt();
        let (qn, kn) = (
            layer_norm_rows(q.data(), d, 1e-5),
            layer_norm_rows(k.data(), d, 1e-5),
        );
        let mut max_ln = 0.0f64;
        let mut max_raw = 0.0f32;
        for i in 0..n {
            for j in 0..n {
                let ln: f64 = (0..d).map(|c| qn[i * d + c] * kn[j * d + c]).sum::<f64>() * scale;
                max_ln = max_ln.max(ln.abs());
                let raw: f32 = (0..d)
                    .map(|c| q.data()[i * d + c] as f32 * k.data()[j * d + c] as f32)
                    .sum::<f32>()
                    * scale as f32;
                max_raw = max_raw.max(raw.abs());
            }
        }
        // |LN(q) . LN(k)| <= |LN(q)| |LN(k)| = d, so logits stay within sqrt(d)
        assert!(max_ln <= (d as f64).sqrt() + 1e-9, "{max_ln}");
        assert!((max_ln as f32).exp().is_finite());
        assert!(max_raw.exp().is_infinite());
        let out = pwsa_attention(
            &q,
            &k,
            &rand(&mut rng, n, d, 1.0),
            1,
            &AttentionMask::Dense(vec![true; n * n]),
        )
        .unwrap();
        assert!(out.is_finite());
    }
}
