//! PPG quality components. All functions take one channel of a 300 Hz
//! segment; only the perfusion index needs pre-normalization amplitudes.

use crate::spectral::{band_bins, dft, expand_one_sided, idft_real, power_spectrum};

use super::SqiConfig;

fn band_power(psd: &[f64], n: usize, fs: f64, lo: f64, hi: f64) -> f64 {
    psd[band_bins(n, fs, lo, hi)].iter().sum()
}

fn ratio(num: f64, den: f64) -> f64 {
    if den > 0.0 && num.is_finite() && den.is_finite() {
        (num / den).clamp(0.0, 1.0)
    } else {
        0.0
    }
}

/// Share of the (0, 15] Hz power that falls in the heart-rate band.
pub fn ppg_power_sqi(x: &[f64], fs: f64, cfg: &SqiConfig) -> f64 {
    let Ok(psd) = power_spectrum(x) else {
        return 0.0;
    };
    let n = x.len();
    let (lo, hi) = cfg.power_band_hz;
    let num = band_power(&psd, n, fs, lo, hi);
    let total_bins = band_bins(n, fs, 0.0, cfg.power_total_hz);
    let den: f64 = psd[total_bins.start.max(1)..total_bins.end].iter().sum();
    ratio(num, den)
}

/// Perfusion index (peak-to-peak of the 0.5-4 Hz component over |mean|),
/// scored as `min(PI / PI_ref, 1)`.
pub fn ppg_perfusion_sqi(raw: &[f64], fs: f64, cfg: &SqiConfig) -> f64 {
    perfusion_index(raw, fs, cfg).map_or(0.0, |pi| (pi / cfg.perfusion_ref).min(1.0))
}

/// Perfusion index, or `None` when the mean is zero.
pub fn perfusion_index(raw: &[f64], fs: f64, cfg: &SqiConfig) -> Option<f64> {
    if raw.is_empty() {
        return None;
    }
    let mean = raw.iter().sum::<f64>() / raw.len() as f64;
    let scale = raw.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if mean.abs() <= 1e-12 * scale || mean == 0.0 {
        return None;
    }
    let ac = bandpass(raw, fs, cfg.power_band_hz.0, cfg.power_band_hz.1);
    let (lo, hi) = ac
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| {
            (a.min(v), b.max(v))
        });
    // anything below rounding noise of the transform is no pulsation at all
    let pi = (hi - lo) / mean.abs();
    let pi = if pi < 1e-9 { 0.0 } else { pi };
    pi.is_finite().then_some(pi)
}

/// Zero-phase band-pass by zeroing DFT bins outside `[lo, hi]` Hz.
pub(crate) fn bandpass(x: &[f64], fs: f64, lo: f64, hi: f64) -> Vec<f64> {
    let Ok(mut spec) = dft(x) else {
        return vec![0.0; x.len()];
    };
    let keep = band_bins(x.len(), fs, lo, hi);
    for (k, c) in spec.iter_mut().enumerate() {
        if !keep.contains(&k) {
            *c = num_complex::Complex64::new(0.0, 0.0);
        }
    }
    let Ok(full) = expand_one_sided(&spec, x.len()) else {
        return vec![0.0; x.len()];
    };
    idft_real(&full)
}

/// Sample skewness of `x` (population moments); `None` for zero variance.
pub fn skewness(x: &[f64]) -> Option<f64> {
    if x.is_empty() {
        return None;
    }
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let m2 = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    let m3 = x.iter().map(|v| (v - mean).powi(3)).sum::<f64>() / n;
    if m2 <= 1e-20 * (1.0 + mean * mean) {
        return None;
    }
    let g = m3 / m2.powf(1.5);
    g.is_finite().then_some(g)
}

/// `exp(-(g - g_ref)^2 / 2)` of the sample skewness; 0 for a flat signal.
pub fn ppg_skewness_sqi(x: &[f64], cfg: &SqiConfig) -> f64 {
    skewness(x).map_or(0.0, |g| (-(g - cfg.skewness_ref).powi(2) / 2.0).exp())
}

/// Share of the [0, 8] Hz power (DC excluded) inside [1, 2.25] Hz.
pub fn ppg_relative_power_sqi(x: &[f64], fs: f64, cfg: &SqiConfig) -> f64 {
    let Ok(psd) = power_spectrum(x) else {
        return 0.0;
    };
    let n = x.len();
    let num_bins = band_bins(n, fs, cfg.relative_band_hz.0, cfg.relative_band_hz.1);
    let den_bins = band_bins(n, fs, 0.0, cfg.relative_total_hz);
    let num: f64 = psd[num_bins.start.max(1)..num_bins.end.max(1)].iter().sum();
    let den: f64 = psd[den_bins.start.max(1)..den_bins.end.max(1)].iter().sum();
    ratio(num, den)
}

/// Normalized Shannon entropy of a 16-bin amplitude histogram spanning the
/// signal's range.
pub fn histogram_entropy(x: &[f64], bins: usize) -> f64 {
    if x.is_empty() || bins < 2 {
        return 0.0;
    }
    let (lo, hi) = x
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| {
            (a.min(v), b.max(v))
        });
    if hi <= lo {
        return 0.0;
    }
    let mut counts = vec![0usize; bins];
    let width = (hi - lo) / bins as f64;
    for &v in x {
        let b = (((v - lo) / width) as usize).min(bins - 1);
        counts[b] += 1;
    }
    let n = x.len() as f64;
    let h: f64 = counts
        .iter()
        .filter(|&&c| c > 0)
        .map(|&c| {
            let p = c as f64 / n;
            -p * p.ln()
        })
        .sum();
    (h / (bins as f64).ln()).clamp(0.0, 1.0)
}

/// `1 - H_norm` of the amplitude histogram.
pub fn ppg_entropy_sqi(x: &[f64], cfg: &SqiConfig) -> f64 {
    1.0 - histogram_entropy(x, cfg.entropy_bins)
}
