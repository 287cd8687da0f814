//! ECG quality components: sub-window noise flagging and rhythm plausibility
//! of detected beats.

use super::ppg::bandpass;
use super::SqiConfig;

/// Sample entropy with template length `m` and tolerance `r` (Chebyshev
/// distance, self-matches excluded, `N - m` templates at both lengths).
///
/// Returns 0 for `r <= 0` (a flat window is perfectly regular) and infinity
/// when no template of length `m + 1` matches.
pub fn sample_entropy(x: &[f64], m: usize, r: f64) -> f64 {
    let n = x.len();
    if r <= 0.0 || !r.is_finite() {
        return 0.0;
    }
    if n <= m + 1 {
        return f64::INFINITY;
    }
    let templates = n - m;
    let (mut b, mut a) = (0u64, 0u64);
    for i in 0..templates {
        for j in i + 1..templates {
            if (0..m).all(|k| (x[i + k] - x[j + k]).abs() <= r) {
                b += 1;
                if (x[i + m] - x[j + m]).abs() <= r {
                    a += 1;
                }
            }
        }
    }
    if a == 0 || b == 0 {
        f64::INFINITY
    } else {
        -(a as f64 / b as f64).ln()
    }
}

fn std_dev(x: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    (x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt()
}

fn median(v: &[f64]) -> f64 {
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len();
    if n % 2 == 1 {
        s[n / 2]
    } else {
        0.5 * (s[n / 2 - 1] + s[n / 2])
    }
}

/// Per sub-window flags: `true` when the window's energy is abnormally high
/// or its sample entropy exceeds the threshold.
///
/// Energy is the sum of squared deviations from the window mean. Its z-score
/// is taken against the median window energy with a robust spread
/// (1.4826 x MAD, floored at a quarter of the median so that near-identical
/// clean windows do not turn tiny differences into large scores).
pub fn ecg_noise_flags(x: &[f64], fs: f64, cfg: &SqiConfig) -> Vec<bool> {
    let w = (cfg.ecg_window_s * fs).round() as usize;
    if w == 0 || x.len() < w {
        return Vec::new();
    }
    let windows: Vec<&[f64]> = x.chunks_exact(w).collect();
    let energy: Vec<f64> = windows
        .iter()
        .map(|s| {
            let mean = s.iter().sum::<f64>() / s.len() as f64;
            s.iter().map(|v| (v - mean).powi(2)).sum()
        })
        .collect();
    let med = median(&energy);
    let dev: Vec<f64> = energy.iter().map(|e| (e - med).abs()).collect();
    let spread = (1.4826 * median(&dev)).max(0.25 * med);
    windows
        .iter()
        .zip(&energy)
        .map(|(s, &e)| {
            let z = if spread > 0.0 {
                (e - med) / spread
            } else if e > med {
                f64::INFINITY
            } else {
                0.0
            };
            let r = cfg.sampen_r * std_dev(s);
            let se = sample_entropy(s, cfg.sampen_m, r);
            z > cfg.energy_z_threshold || se > cfg.sampen_threshold
        })
        .collect()
}

/// Fraction of 3 s sub-windows that are not flagged as noisy.
pub fn ecg_noise_sqi(x: &[f64], fs: f64, cfg: &SqiConfig) -> f64 {
    let flags = ecg_noise_flags(x, fs, cfg);
    if flags.is_empty() {
        return 0.0;
    }
    flags.iter().filter(|&&f| !f).count() as f64 / flags.len() as f64
}

/// QRS detector in the Pan-Tompkins style: 5-15 Hz band-pass, five-point
/// derivative, squaring, 150 ms moving integration and an adaptive
/// signal/noise threshold with a 200 ms refractory period and search-back.
/// Returns beat times in seconds, placed at the largest band-passed
/// deflection preceding each integration peak.
pub fn detect_beats(x: &[f64], fs: f64) -> Vec<f64> {
    let n = x.len();
    if n < (2.0 * fs) as usize {
        return Vec::new();
    }
    let filtered = bandpass(x, fs, 5.0, 15.0);
    let scale = x.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let qrs = filtered.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if !(qrs > 1e-9 * scale) {
        return Vec::new();
    }
    let mut energy = vec![0.0; n];
    for i in 4..n {
        let d =
            (2.0 * filtered[i] + filtered[i - 1] - filtered[i - 3] - 2.0 * filtered[i - 4]) / 8.0;
        energy[i] = d * d;
    }
    let win = ((0.15 * fs).round() as usize).max(1);
    let mut integrated = vec![0.0; n];
    let mut acc = 0.0;
    for i in 0..n {
        acc += energy[i];
        if i >= win {
            acc -= energy[i - win];
        }
        integrated[i] = acc.max(0.0) / win as f64;
    }

    let peaks: Vec<usize> = (1..n - 1)
        .filter(|&i| integrated[i] > integrated[i - 1] && integrated[i] >= integrated[i + 1])
        .collect();
    let head = &integrated[..(2.0 * fs) as usize];
    let head_max = head.iter().cloned().fold(0.0, f64::max);
    if head_max <= 0.0 && integrated.iter().all(|&v| v <= 0.0) {
        return Vec::new();
    }
    let mut spk = head_max / 3.0;
    let mut npk = head.iter().sum::<f64>() / head.len() as f64 / 2.0;
    let refractory = (0.2 * fs).round() as usize;

    let mut beats: Vec<usize> = Vec::new();
    let mut rr_mean: Option<f64> = None;
    let mut last_peak_idx = 0usize;
    for (pi, &p) in peaks.iter().enumerate() {
        let v = integrated[p];
        let threshold = npk + 0.25 * (spk - npk);
        if let (Some(&last), Some(rr)) = (beats.last(), rr_mean) {
            // search back for a missed beat above half the threshold
            if (p - last) as f64 > 1.66 * rr {
                let cand = peaks[last_peak_idx..pi]
                    .iter()
                    .filter(|&&q| q > last + refractory && integrated[q] > 0.5 * threshold)
                    .max_by(|&&a, &&b| integrated[a].total_cmp(&integrated[b]));
                if let Some(&q) = cand {
                    spk = 0.25 * integrated[q] + 0.75 * spk;
                    beats.push(q);
                }
            }
        }
        let clear = beats.last().is_none_or(|&last| p > last + refractory);
        if v > threshold && v > 0.0 && clear {
            spk = 0.125 * v + 0.875 * spk;
            beats.push(p);
            last_peak_idx = pi + 1;
            if beats.len() >= 2 {
                let recent: Vec<f64> = beats
                    .windows(2)
                    .rev()
                    .take(8)
                    .map(|w| (w[1] - w[0]) as f64)
                    .collect();
                rr_mean = Some(recent.iter().sum::<f64>() / recent.len() as f64);
            }
        } else {
            npk = 0.125 * v + 0.875 * npk;
        }
    }

    beats
        .into_iter()
        .map(|p| {
            let lo = p.saturating_sub(win);
            let best = (lo..=p)
                .max_by(|&a, &b| filtered[a].abs().total_cmp(&filtered[b].abs()))
                .unwrap_or(p);
            best as f64 / fs
        })
        .collect()
}

/// Plausibility of each RR interval between consecutive beats: the implied
/// heart rate lies in the allowed range and, past the first interval, the
/// ratio to the previous interval stays within the allowed jump.
pub fn rr_plausibility(beat_times_s: &[f64], cfg: &SqiConfig) -> Vec<bool> {
    let rr: Vec<f64> = beat_times_s.windows(2).map(|w| w[1] - w[0]).collect();
    let (hr_lo, hr_hi) = cfg.hr_range_bpm;
    let (ratio_lo, ratio_hi) = cfg.rr_ratio_range;
    rr.iter()
        .enumerate()
        .map(|(i, &r)| {
            let hr = 60.0 / r;
            let hr_ok = r > 0.0 && hr >= hr_lo && hr <= hr_hi;
            let jump_ok = i == 0 || {
                let q = r / rr[i - 1];
                q >= ratio_lo && q <= ratio_hi
            };
            hr_ok && jump_ok
        })
        .collect()
}

/// Fraction of plausible beats (one per RR interval); 0 with fewer than two
/// detected beats.
pub fn beat_sqi_from_times(beat_times_s: &[f64], cfg: &SqiConfig) -> f64 {
    if beat_times_s.len() < 2 {
        return 0.0;
    }
    let ok = rr_plausibility(beat_times_s, cfg);
    ok.iter().filter(|&&b| b).count() as f64 / ok.len() as f64
}

pub fn ecg_beat_sqi(x: &[f64], fs: f64, cfg: &SqiConfig) -> f64 {
    beat_sqi_from_times(&detect_beats(x, fs), cfg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    const FS: f64 = 300.0;

    /// Sum of Gaussian PQRST waves placed at the given R-peak times.
    fn ecg_at(beats: &[f64], seconds: f64) -> Vec<f64> {
        let waves = [
            (0.12, -0.18, 0.025),
            (-0.12, -0.035, 0.010),
            (1.0, 0.0, 0.011),
            (-0.25, 0.035, 0.010),
            (0.35, 0.28, 0.07),
        ];
        let n = (seconds * FS) as usize;
        (0..n)
            .map(|i| {
                let t = i as f64 / FS;
                beats
                    .iter()
                    .flat_map(|&b| waves.iter().map(move |&(a, o, w)| (a, b + o, w)))
                    .map(|(a, c, w): (f64, f64, f64)| a * (-(t - c).powi(2) / (2.0 * w * w)).exp())
                    .sum()
            })
            .collect()
    }

    fn regular(bpm: f64, seconds: f64) -> Vec<f64> {
        let rr = 60.0 / bpm;
        (0..)
            .map(|k| 0.4 + k as f64 * rr)
            .take_while(|&t| t < seconds)
            .collect()
    }

    /// Sample entropy from explicit template vectors.
    fn sampen_oracle(x: &[f64], m: usize, r: f64) -> f64 {
        let n = x.len();
        let count = |len: usize| {
            let t: Vec<&[f64]> = (0..n - m).map(|i| &x[i..i + len]).collect();
            let mut c = 0usize;
            for i in 0..t.len() {
                for j in 0..t.len() {
                    if i != j {
                        let d = t[i]
                            .iter()
                            .zip(t[j])
                            .map(|(a, b)| (a - b).abs())
                            .fold(0.0, f64::max);
                        if d <= r {
                            c += 1;
                        }
                    }
                }
            }
            c as f64
        };
        -(count(m + 1) / count(m)).ln()
    }

    #[test]
    fn sample_entropy_matches_oracles() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x: Vec<f64> = (0..300).map(|_| StandardNormal.sample(&mut rng)).collect();
        let sd = std_dev(&x);
        let got = sample_entropy(&x, 2, 0.2 * sd);
        assert!((got - sampen_oracle(&x, 2, 0.2 * sd)).abs() < 1e-12);

        // For white Gaussian noise, matches are independent events with
        // probability P(|Z| <= 0.2 / sqrt 2), so SampEn -> -ln of that.
        let x: Vec<f64> = (0..3000).map(|_| StandardNormal.sample(&mut rng)).collect();
        let got = sample_entropy(&x, 2, 0.2 * std_dev(&x));
        assert!((got - 2.185).abs() < 0.15, "{got}");
        assert_eq!(sample_entropy(&[1.0; 50], 2, 0.0), 0.0);
    }

    #[test]
    fn noise_sqi_examples() {
        let cfg = SqiConfig::default();
        let clean = ecg_at(&regular(72.0, 30.0), 30.0);
        assert_eq!(ecg_noise_sqi(&clean, FS, &cfg), 1.0);

        let mut burst = clean.clone();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for v in &mut burst[1800..2700] {
            let z: f64 = StandardNormal.sample(&mut rng);
            *v = 10.0 * (*v + 0.3 * z);
        }
        let flags = ecg_noise_flags(&burst, FS, &cfg);
        assert_eq!(flags.iter().filter(|&&f| f).count(), 1);
        assert!(flags[2]);
        assert!((ecg_noise_sqi(&burst, FS, &cfg) - 0.9).abs() < 1e-12);

        let noise: Vec<f64> = (0..9000).map(|_| StandardNormal.sample(&mut rng)).collect();
        assert!(ecg_noise_sqi(&noise, FS, &cfg) <= 0.1);
    }

    #[test]
    fn detector_finds_regular_beats() {
        for bpm in [45.0, 60.0, 90.0, 150.0] {
            let truth = regular(bpm, 30.0);
            let x = ecg_at(&truth, 30.0);
            let got = detect_beats(&x, FS);
            assert_eq!(got.len(), truth.len(), "{bpm} bpm");
            for (a, b) in got.iter().zip(&truth) {
                assert!((a - b).abs() < 0.02, "{bpm} bpm: {a} vs {b}");
            }
        }
        let cfg = SqiConfig::default();
        assert_eq!(
            ecg_beat_sqi(&ecg_at(&regular(60.0, 30.0), 30.0), FS, &cfg),
            1.0
        );
        assert_eq!(ecg_beat_sqi(&vec![0.3; 9000], FS, &cfg), 0.0);
    }

    #[test]
    fn doubled_interval_flags_adjacent_jumps() {
        let cfg = SqiConfig::default();
        // 60 bpm with the beat at 10.4 s missing: interval 9.4 -> 11.4 is doubled
        let beats: Vec<f64> = regular(60.0, 30.0)
            .into_iter()
            .filter(|&t| (t - 10.4).abs() > 1e-9)
            .collect();
        let rr: Vec<f64> = beats.windows(2).map(|w| w[1] - w[0]).collect();
        let doubled = rr.iter().position(|&r| r > 1.5).unwrap();
        let expected: Vec<bool> = (0..rr.len())
            .map(|i| i != doubled && i != doubled + 1)
            .collect();
        assert_eq!(rr_plausibility(&beats, &cfg), expected);

        let detected = detect_beats(&ecg_at(&beats, 30.0), FS);
        assert_eq!(detected.len(), beats.len());
        assert_eq!(rr_plausibility(&detected, &cfg), expected);
        let score = beat_sqi_from_times(&detected, &cfg);
        assert!((score - (rr.len() - 2) as f64 / rr.len() as f64).abs() < 1e-12);
    }

    #[test]
    fn heart_rate_bounds() {
        let cfg = SqiConfig::default();
        assert_eq!(rr_plausibility(&[0.0, 2.0, 4.0], &cfg), vec![true, true]);
        assert_eq!(rr_plausibility(&[0.0, 2.1, 4.2], &cfg), vec![false, false]);
        assert_eq!(rr_plausibility(&[0.0, 0.25], &cfg), vec![false]);
        assert_eq!(beat_sqi_from_times(&[1.0], &cfg), 0.0);
    }
}
