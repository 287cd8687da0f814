//! Discrete Fourier transform, amplitude/phase spectra and their inverse.
//!
//! `dft` evaluates `X[k] = sum_n x(n) exp(-j 2 pi k n / N)` (no scaling, no
//! window) with an FFT and returns the one-sided half `k = 0..=N/2`.

use std::cell::RefCell;
use std::f64::consts::PI;

use num_complex::Complex64;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Bins whose amplitude is below this have an undefined phase; their phase is
/// reported as 0 and they are excluded from the phase loss.
pub const PHASE_EPSILON: f64 = 1e-8;

thread_local! {
    static PLANNER: RefCell<FftPlanner<f64>> = RefCell::new(FftPlanner::new());
}

fn check_finite(samples: &[f64]) -> Result<()> {
    if let Some(i) = samples.iter().position(|v| !v.is_finite()) {
        return Err(Error::Contract(format!(
            "non-finite input to dft at index {i}"
        )));
    }
    Ok(())
}

/// Full `N`-point forward transform of a real signal.
pub fn dft_full(samples: &[f64]) -> Result<Vec<Complex64>> {
    check_finite(samples)?;
    let mut buf: Vec<Complex64> = samples.iter().map(|&x| Complex64::new(x, 0.0)).collect();
    if buf.is_empty() {
        return Ok(buf);
    }
    PLANNER.with(|p| p.borrow_mut().plan_fft_forward(buf.len()).process(&mut buf));
    Ok(buf)
}

/// One-sided spectrum `X[0..=N/2]` of a real signal.
pub fn dft(samples: &[f64]) -> Result<Vec<Complex64>> {
    let mut full = dft_full(samples)?;
    full.truncate(one_sided_len(samples.len()));
    Ok(full)
}

/// Number of one-sided bins for an `n`-point transform.
pub fn one_sided_len(n: usize) -> usize {
    if n == 0 {
        0
    } else {
        n / 2 + 1
    }
}

/// Inverse of [`dft_full`], returning the real part (scaled by `1/N`).
pub fn idft_real(spectrum: &[Complex64]) -> Vec<f64> {
    let n = spectrum.len();
    if n == 0 {
        return Vec::new();
    }
    let mut buf = spectrum.to_vec();
    PLANNER.with(|p| p.borrow_mut().plan_fft_inverse(n).process(&mut buf));
    let scale = 1.0 / n as f64;
    buf.into_iter().map(|c| c.re * scale).collect()
}

/// Rebuilds the full spectrum of a real `n`-point signal from its one-sided
/// half using conjugate symmetry.
pub fn expand_one_sided(half: &[Complex64], n: usize) -> Result<Vec<Complex64>> {
    if half.len() != one_sided_len(n) {
        return Err(Error::Contract(format!(
            "{} one-sided bins cannot describe a {n}-point signal",
            half.len()
        )));
    }
    let mut full = Vec::with_capacity(n);
    full.extend_from_slice(half);
    for k in half.len()..n {
        full.push(half[n - k].conj());
    }
    Ok(full)
}

/// Amplitude and phase of one channel's one-sided spectrum.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChannelSpectrum {
    pub amplitude: Vec<f64>,
    pub phase: Vec<f64>,
}

impl ChannelSpectrum {
    /// Bins whose phase is meaningful (amplitude at or above [`PHASE_EPSILON`]).
    pub fn phase_mask(&self) -> Vec<bool> {
        self.amplitude.iter().map(|&a| a >= PHASE_EPSILON).collect()
    }
}

/// Per-channel amplitude/phase spectra of an `n`-sample window.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpectralTarget {
    pub n: usize,
    pub channels: Vec<ChannelSpectrum>,
}

/// Amplitude `sqrt(re^2 + im^2)` and quadrant-aware phase `atan2(im, re)` per
/// bin; the phase of near-zero bins is set to 0.
pub fn amp_phase(spectrum: &[Complex64]) -> ChannelSpectrum {
    let mut amplitude = Vec::with_capacity(spectrum.len());
    let mut phase = Vec::with_capacity(spectrum.len());
    for c in spectrum {
        let a = c.re.hypot(c.im);
        amplitude.push(a);
        phase.push(if a < PHASE_EPSILON {
            0.0
        } else {
            // atan2 returns -pi for (-0.0, negative re); keep the range (-pi, pi]
            let p = c.im.atan2(c.re);
            if p == -PI {
                PI
            } else {
                p
            }
        });
    }
    ChannelSpectrum { amplitude, phase }
}

/// Spectral target of a multi-channel window (each channel length `n`).
pub fn spectral_target<S: AsRef<[f64]>>(channels: &[S]) -> Result<SpectralTarget> {
    let n = channels.first().map(|c| c.as_ref().len()).unwrap_or(0);
    let mut out = Vec::with_capacity(channels.len());
    for c in channels {
        let c = c.as_ref();
        if c.len() != n {
            return Err(Error::Contract("channels differ in length".into()));
        }
        out.push(amp_phase(&dft(c)?));
    }
    Ok(SpectralTarget { n, channels: out })
}

/// Reconstructs one channel from its one-sided amplitude/phase spectrum.
pub fn inverse_channel(spec: &ChannelSpectrum, n: usize) -> Result<Vec<f64>> {
    if spec.amplitude.len() != spec.phase.len() {
        return Err(Error::Contract("amplitude and phase lengths differ".into()));
    }
    let half: Vec<Complex64> = spec
        .amplitude
        .iter()
        .zip(&spec.phase)
        .map(|(&a, &p)| Complex64::from_polar(a, p))
        .collect();
    Ok(idft_real(&expand_one_sided(&half, n)?))
}

/// Reconstructs every channel of a [`SpectralTarget`].
pub fn inverse_check(target: &SpectralTarget) -> Result<Vec<Vec<f64>>> {
    target
        .channels
        .iter()
        .map(|c| inverse_channel(c, target.n))
        .collect()
}

/// Periodogram `|X[k]|^2` over the one-sided bins.
pub fn power_spectrum(samples: &[f64]) -> Result<Vec<f64>> {
    Ok(dft(samples)?.iter().map(|c| c.norm_sqr()).collect())
}

/// Index range of one-sided bins whose centre frequency lies in `[lo, hi]` Hz.
///
/// Bin edges are compared with a small tolerance so that frequencies landing
/// exactly on a bin are included regardless of rounding.
pub fn band_bins(n: usize, fs: f64, lo: f64, hi: f64) -> std::ops::Range<usize> {
    let bins = one_sided_len(n);
    let df = fs / n as f64;
    let first = ((lo / df) - 1e-9).ceil().max(0.0) as usize;
    let last = ((hi / df) + 1e-9).floor();
    if last < 0.0 {
        return 0..0;
    }
    let end = (last as usize + 1).min(bins);
    first.min(end)..end
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Direct O(N^2) evaluation of the transform definition.
    fn naive_dft(x: &[f64]) -> Vec<Complex64> {
        let n = x.len();
        (0..n)
            .map(|k| {
                x.iter()
                    .enumerate()
                    .map(|(i, &v)| {
                        let ang = -2.0 * PI * ((k * i) % n) as f64 / n as f64;
                        Complex64::new(v * ang.cos(), v * ang.sin())
                    })
                    .sum()
            })
            .collect()
    }

    #[test]
    fn constant_is_dc_only() {
        let x = vec![1.5; 8];
        let x_k = dft(&x).unwrap();
        assert_eq!(x_k.len(), 5);
        assert!((x_k[0].re - 12.0).abs() < 1e-12);
        for c in &x_k[1..] {
            assert!(c.norm() < 1e-12);
        }
    }

    #[test]
    fn cosine_on_exact_bin() {
        let n = 16;
        let x: Vec<f64> = (0..n)
            .map(|i| (2.0 * PI * 3.0 * i as f64 / n as f64).cos())
            .collect();
        let x_k = dft(&x).unwrap();
        for (k, c) in x_k.iter().enumerate() {
            let expected = if k == 3 { 8.0 } else { 0.0 };
            assert!((c.norm() - expected).abs() < 1e-12, "bin {k}: {}", c.norm());
        }
    }

    #[test]
    fn linearity() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x: Vec<f64> = (0..50).map(|_| rng.random_range(-1.0..1.0)).collect();
        let y: Vec<f64> = (0..50).map(|_| rng.random_range(-1.0..1.0)).collect();
        let (a, b) = (2.5, -0.75);
        let combo: Vec<f64> = x.iter().zip(&y).map(|(p, q)| a * p + b * q).collect();
        let (fx, fy, fc) = (dft(&x).unwrap(), dft(&y).unwrap(), dft(&combo).unwrap());
        for k in 0..fc.len() {
            assert!((fc[k] - (fx[k] * a + fy[k] * b)).norm() < 1e-12);
        }
    }

    #[test]
    fn fft_matches_naive_for_small_n() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for n in 1..=64 {
            let x: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
            let fast = dft_full(&x).unwrap();
            let slow = naive_dft(&x);
            for k in 0..n {
                assert!((fast[k] - slow[k]).norm() < 1e-10, "n={n} k={k}");
            }
        }
    }

    #[test]
    fn amp_phase_examples() {
        let s = amp_phase(&[
            Complex64::new(3.0, 4.0),
            Complex64::new(-1.0, 0.0),
            Complex64::new(0.0, 0.0),
        ]);
        assert!((s.amplitude[0] - 5.0).abs() < 1e-15);
        assert!((s.phase[0] - 4f64.atan2(3.0)).abs() < 1e-15);
        assert!((s.phase[0] - 0.927_295_218).abs() < 1e-9);
        assert_eq!(s.amplitude[1], 1.0);
        assert_eq!(s.phase[1], PI);
        assert_eq!(s.amplitude[2], 0.0);
        assert_eq!(s.phase[2], 0.0);
        assert_eq!(s.phase_mask(), vec![true, true, false]);
        // negative zero imaginary part still maps to +pi
        assert_eq!(amp_phase(&[Complex64::new(-2.0, -0.0)]).phase[0], PI);
    }

    #[test]
    fn round_trip_random_9000() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x: Vec<f64> = (0..9000).map(|_| rng.random_range(-1.0..1.0)).collect();
        let target = spectral_target(std::slice::from_ref(&x)).unwrap();
        assert_eq!(target.channels[0].amplitude.len(), 4501);
        let back = inverse_check(&target).unwrap();
        let err = x
            .iter()
            .zip(&back[0])
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        assert!(err < 1e-9, "{err}");
    }

    #[test]
    fn inverse_of_trivial_spectra() {
        let zero = SpectralTarget {
            n: 10,
            channels: vec![ChannelSpectrum {
                amplitude: vec![0.0; 6],
                phase: vec![0.0; 6],
            }],
        };
        assert!(inverse_check(&zero).unwrap()[0].iter().all(|&v| v == 0.0));
        let mut amp = vec![0.0; 6];
        amp[0] = 10.0 * 0.7;
        let dc = SpectralTarget {
            n: 10,
            channels: vec![ChannelSpectrum {
                amplitude: amp,
                phase: vec![0.0; 6],
            }],
        };
        assert!(inverse_check(&dc).unwrap()[0]
            .iter()
            .all(|&v| (v - 0.7).abs() < 1e-15));
    }

    #[test]
    fn conjugate_symmetry_and_parseval() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for n in [7usize, 64, 9000] {
            let x: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
            let full = dft_full(&x).unwrap();
            for k in 1..n {
                assert!((full[n - k] - full[k].conj()).norm() < 1e-9);
            }
            let rebuilt = expand_one_sided(&dft(&x).unwrap(), n).unwrap();
            let time: f64 = x.iter().map(|v| v * v).sum();
            let freq: f64 = rebuilt.iter().map(|c| c.norm_sqr()).sum::<f64>() / n as f64;
            assert!(((time - freq) / time).abs() < 1e-9);
        }
    }

    #[test]
    fn non_finite_input_rejected() {
        assert!(matches!(dft(&[1.0, f64::NAN]), Err(Error::Contract(_))));
    }

    #[test]
    fn band_bins_include_exact_edges() {
        // 9000 samples at 300 Hz: bin spacing 1/30 Hz
        let r = band_bins(9000, 300.0, 1.0, 2.25);
        assert_eq!(r, 30..68);
        let r = band_bins(9000, 300.0, 0.0, 8.0);
        assert_eq!(r, 0..241);
    }
}
