//! Windowed-sinc resampling.
//!
//! Each output sample is a Blackman-windowed sinc interpolation of the input
//! around its fractional source position. The cutoff follows the lower of the
//! two Nyquist frequencies, so downsampling is anti-aliased. When the rate
//! ratio is a small rational `L/M` the kernel taps are tabulated once per
//! phase (polyphase form); otherwise they are evaluated directly.
//!
//! Edges are extended by odd reflection (`x[-i] = 2 x[0] - x[i]`), which keeps
//! constants and linear trends intact, and the taps of every output sample are
//! normalized to unit sum so a constant input maps to the same constant.

use std::f64::consts::PI;

use crate::error::{Error, Result};

/// Zero crossings of the sinc kept on each side of the centre.
const ZERO_CROSSINGS: f64 = 16.0;
/// Largest phase table built for the polyphase path.
const MAX_PHASES: u64 = 4096;

/// Resamples to `round(len * rate_out / rate_in)` samples.
pub fn resample(samples: &[f64], rate_in: f64, rate_out: f64) -> Result<Vec<f64>> {
    let out_len = (samples.len() as f64 * rate_out / rate_in).round() as usize;
    resample_to_len(samples, rate_in, rate_out, out_len)
}

/// Resamples to an explicit output length (output sample `m` sits at time
/// `m / rate_out` relative to the first input sample).
pub fn resample_to_len(
    samples: &[f64],
    rate_in: f64,
    rate_out: f64,
    out_len: usize,
) -> Result<Vec<f64>> {
    if samples.is_empty() {
        return Err(Error::Contract("cannot resample an empty signal".into()));
    }
    if !(rate_in.is_finite() && rate_in > 0.0 && rate_out.is_finite() && rate_out > 0.0) {
        return Err(Error::Contract(format!(
            "sampling rates must be positive, got {rate_in} -> {rate_out}"
        )));
    }
    let cutoff = (rate_out / rate_in).min(1.0);
    let half_width = ZERO_CROSSINGS / cutoff;
    let reach = half_width.ceil() as i64;
    let step = rate_in / rate_out;
    let ext = Extended::new(samples);

    let out = match rational_ratio(rate_in, rate_out) {
        Some((num, den)) => {
            // source position of output m is m * num / den input samples
            let taps: Vec<Vec<f64>> = (0..den)
                .map(|phase| {
                    let frac = phase as f64 / den as f64;
                    kernel_taps(frac, reach, cutoff, half_width)
                })
                .collect();
            (0..out_len as u64)
                .map(|m| {
                    let whole = (m * num / den) as i64;
                    let phase = (m * num % den) as usize;
                    apply(&ext, whole, reach, &taps[phase])
                })
                .collect()
        }
        None => (0..out_len)
            .map(|m| {
                let pos = m as f64 * step;
                let whole = pos.floor();
                let taps = kernel_taps(pos - whole, reach, cutoff, half_width);
                apply(&ext, whole as i64, reach, &taps)
            })
            .collect(),
    };
    Ok(out)
}

/// `rate_in / rate_out` as a reduced fraction when both rates are integers
/// (to 1e-9) and the denominator is small enough to tabulate.
fn rational_ratio(rate_in: f64, rate_out: f64) -> Option<(u64, u64)> {
    let as_int = |r: f64| {
        let k = r.round();
        ((r - k).abs() < 1e-9 && (1.0..1e9).contains(&k)).then_some(k as u64)
    };
    let (a, b) = (as_int(rate_in)?, as_int(rate_out)?);
    let g = gcd(a, b);
    let (num, den) = (a / g, b / g);
    (den <= MAX_PHASES).then_some((num, den))
}

fn gcd(mut a: u64, mut b: u64) -> u64 {
    while b != 0 {
        let t = a % b;
        a = b;
        b = t;
    }
    a
}

/// Taps for input offsets `-reach..=reach` around a source position whose
/// fractional part is `frac`, normalized to unit sum.
fn kernel_taps(frac: f64, reach: i64, cutoff: f64, half_width: f64) -> Vec<f64> {
    let mut taps: Vec<f64> = (-reach..=reach)
        .map(|j| {
            let tau = j as f64 - frac;
            if tau.abs() >= half_width {
                return 0.0;
            }
            let x = cutoff * tau;
            let sinc = if x.abs() < 1e-12 {
                1.0
            } else {
                (PI * x).sin() / (PI * x)
            };
            let r = tau / half_width; // in (-1, 1)
            let blackman = 0.42 + 0.5 * (PI * r).cos() + 0.08 * (2.0 * PI * r).cos();
            cutoff * sinc * blackman
        })
        .collect();
    let sum: f64 = taps.iter().sum();
    for t in &mut taps {
        *t /= sum;
    }
    taps
}

fn apply(ext: &Extended<'_>, whole: i64, reach: i64, taps: &[f64]) -> f64 {
    let mut acc = 0.0;
    for (k, &t) in taps.iter().enumerate() {
        if t != 0.0 {
            acc += t * ext.get(whole - reach + k as i64);
        }
    }
    acc
}

/// Read access with odd-reflection extension past both ends.
struct Extended<'a> {
    x: &'a [f64],
}

impl<'a> Extended<'a> {
    fn new(x: &'a [f64]) -> Self {
        Extended { x }
    }

    fn get(&self, i: i64) -> f64 {
        let n = self.x.len() as i64;
        let last = n - 1;
        if (0..n).contains(&i) {
            self.x[i as usize]
        } else if i < 0 {
            let mirror = (-i).min(last);
            2.0 * self.x[0] - self.x[mirror as usize]
        } else {
            let mirror = (last - (i - last)).max(0);
            2.0 * self.x[last as usize] - self.x[mirror as usize]
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sine(freq: f64, rate: f64, seconds: f64, amp: f64, phase: f64) -> Vec<f64> {
        let n = (seconds * rate).round() as usize;
        (0..n)
            .map(|i| amp * (2.0 * PI * freq * i as f64 / rate + phase).sin())
            .collect()
    }

    #[test]
    fn constant_is_preserved() {
        let x = vec![3.25; 3750];
        let y = resample(&x, 125.0, 300.0).unwrap();
        assert_eq!(y.len(), 9000);
        assert!(y.iter().all(|v| (v - 3.25).abs() < 1e-12));
    }

    #[test]
    fn output_lengths() {
        assert_eq!(
            resample(&vec![0.0; 15000], 500.0, 300.0).unwrap().len(),
            9000
        );
        assert_eq!(resample(&[0.0; 10], 3.0, 7.0).unwrap().len(), 23);
        // irrational ratio takes the direct path
        assert_eq!(
            resample(&vec![1.0; 100], 100.0, 123.456).unwrap().len(),
            123
        );
    }

    #[test]
    fn sinusoid_125_to_300_within_one_percent() {
        let x = sine(1.0, 125.0, 30.0, 1.0, 0.3);
        let y = resample(&x, 125.0, 300.0).unwrap();
        let truth = sine(1.0, 300.0, 30.0, 1.0, 0.3);
        let peak = y.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        assert!((peak - 1.0).abs() < 0.01, "{peak}");
        let max_err = y
            .iter()
            .zip(&truth)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        assert!(max_err < 0.01, "{max_err}");
    }

    #[test]
    fn downsample_sinusoid_500_to_300() {
        let x = sine(7.0, 500.0, 30.0, 2.0, 0.0);
        let y = resample(&x, 500.0, 300.0).unwrap();
        let truth = sine(7.0, 300.0, 30.0, 2.0, 0.0);
        let max_err = y
            .iter()
            .zip(&truth)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        assert!(max_err < 0.02, "{max_err}");
    }

    #[test]
    fn band_limited_round_trip_within_two_percent_rms() {
        let n = 9000;
        let x: Vec<f64> = (0..n)
            .map(|i| {
                let t = i as f64 / 300.0;
                (2.0 * PI * 1.2 * t).sin()
                    + 0.5 * (2.0 * PI * 4.7 * t + 1.0).sin()
                    + 0.3 * (2.0 * PI * 9.5 * t).cos()
            })
            .collect();
        let down = resample(&x, 300.0, 125.0).unwrap();
        let back = resample_to_len(&down, 125.0, 300.0, n).unwrap();
        let rms = |v: &[f64]| (v.iter().map(|a| a * a).sum::<f64>() / v.len() as f64).sqrt();
        let diff: Vec<f64> = x.iter().zip(&back).map(|(a, b)| a - b).collect();
        assert!(rms(&diff) / rms(&x) < 0.02, "{}", rms(&diff) / rms(&x));
    }

    #[test]
    fn empty_input_is_a_contract_error() {
        assert!(matches!(
            resample(&[], 125.0, 300.0),
            Err(Error::Contract(_))
        ));
        assert!(matches!(
            resample(&[1.0], 0.0, 300.0),
            Err(Error::Contract(_))
        ));
    }

    #[test]
    fn identity_rate_is_near_identity() {
        let x = sine(3.0, 300.0, 2.0, 1.0, 0.1);
        let y = resample(&x, 300.0, 300.0).unwrap();
        let max_err = x
            .iter()
            .zip(&y)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        assert!(max_err < 1e-12);
    }
}
