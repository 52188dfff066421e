//! Envelope extraction, normalization, length fitting and narrow-band power.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::trace::{Trace, TraceError};

#[derive(Debug, Error)]
pub enum DspError {
    #[error("window must be at least 1")]
    ZeroWindow,
    #[error("target length must be at least 1")]
    ZeroTargetLen,
    #[error("center frequency {center_hz} Hz outside (0, {nyquist_hz}) Hz")]
    AboveNyquist { center_hz: f64, nyquist_hz: f64 },
    #[error("bandwidth must be positive, got {0}")]
    BadBandwidth(f64),
    #[error(transparent)]
    Trace(#[from] TraceError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Normalization {
    None,
    Zscore,
    Maxabs,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PadPolicy {
    /// Fit to the longest trace; shorter traces get trailing zeros.
    ZeroPadRight,
    /// Fit to the shortest trace; longer traces lose trailing samples.
    TruncateRight,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PreprocessConfig {
    pub window: usize,
    pub normalize: Normalization,
    /// Fixed output length. `None` derives it from the dataset via `pad_policy`.
    pub target_len: Option<usize>,
    pub pad_policy: PadPolicy,
    /// Lower bound applied to a dataset-derived target length.
    pub min_len: usize,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        Self {
            window: 1000,
            normalize: Normalization::Zscore,
            target_len: None,
            pad_policy: PadPolicy::ZeroPadRight,
            min_len: 1,
        }
    }
}

impl PreprocessConfig {
    pub fn validate(&self) -> Result<(), DspError> {
        if self.window == 0 {
            return Err(DspError::ZeroWindow);
        }
        if self.target_len == Some(0) {
            return Err(DspError::ZeroTargetLen);
        }
        Ok(())
    }

    /// Envelope extraction followed by normalization; length fitting is
    /// applied separately once the target length is known.
    pub fn envelope(&self, trace: &Trace) -> Result<Trace, DspError> {
        let env = abs_window_average(trace, self.window)?;
        Ok(normalize(&env, self.normalize))
    }

    /// Target length for a set of envelope lengths under this policy.
    pub fn derive_target_len(&self, lengths: impl IntoIterator<Item = usize>) -> Option<usize> {
        if let Some(t) = self.target_len {
            return Some(t);
        }
        let mut it = lengths.into_iter();
        let first = it.next()?;
        let derived = match self.pad_policy {
            PadPolicy::ZeroPadRight => it.fold(first, usize::max),
            PadPolicy::TruncateRight => it.fold(first, usize::min),
        };
        Some(derived.max(self.min_len))
    }
}

fn derived_trace(src: &Trace, samples: Vec<f32>, rate: f64, tag: Option<String>) -> Trace {
    let mut meta = src.meta.clone();
    if let Some(tag) = tag {
        meta.entry("preproc".to_string())
            .and_modify(|v| {
                v.push(',');
                v.push_str(&tag)
            })
            .or_insert(tag);
    }
    Trace::with_meta(samples, rate, meta).expect("derived trace keeps invariants")
}

/// Mean of `|x|` over consecutive non-overlapping windows; the last window
/// may be shorter and is averaged over its own length.
pub fn abs_window_average(trace: &Trace, window: usize) -> Result<Trace, DspError> {
    if window == 0 {
        return Err(DspError::ZeroWindow);
    }
    let out: Vec<f32> = trace
        .samples()
        .chunks(window)
        .map(|c| {
            let sum: f64 = c.iter().map(|&s| (s as f64).abs()).sum();
            (sum / c.len() as f64) as f32
        })
        .collect();
    Ok(derived_trace(
        trace,
        out,
        trace.sample_rate_hz() / window as f64,
        Some(format!("absavg:{window}")),
    ))
}

pub fn normalize(trace: &Trace, scheme: Normalization) -> Trace {
    let s = trace.samples();
    let out: Vec<f32> = match scheme {
        Normalization::None => s.to_vec(),
        Normalization::Zscore => {
            let n = s.len() as f64;
            let mean = s.iter().map(|&x| x as f64).sum::<f64>() / n;
            let var = s.iter().map(|&x| (x as f64 - mean).powi(2)).sum::<f64>() / n;
            let sd = var.sqrt();
            if sd == 0.0 || !sd.is_finite() {
                vec![0.0; s.len()]
            } else {
                s.iter().map(|&x| ((x as f64 - mean) / sd) as f32).collect()
            }
        }
        Normalization::Maxabs => {
            let m = s.iter().fold(0.0f32, |m, &x| m.max(x.abs()));
            if m == 0.0 {
                s.to_vec()
            } else {
                s.iter().map(|&x| ((x as f64) / m as f64) as f32).collect()
            }
        }
    };
    let tag = match scheme {
        Normalization::None => None,
        Normalization::Zscore => Some("zscore".to_string()),
        Normalization::Maxabs => Some("maxabs".to_string()),
    };
    derived_trace(trace, out, trace.sample_rate_hz(), tag)
}

/// Pads with trailing zeros or drops trailing samples so the output has
/// exactly `target_len` samples. The policy only matters when deriving the
/// target from a dataset (see [`PreprocessConfig::derive_target_len`]).
pub fn fit_length(trace: &Trace, target_len: usize, _policy: PadPolicy) -> Result<Trace, DspError> {
    if target_len == 0 {
        return Err(DspError::ZeroTargetLen);
    }
    let mut s = trace.samples().to_vec();
    s.resize(target_len, 0.0);
    Ok(derived_trace(trace, s, trace.sample_rate_hz(), None))
}

pub fn total_duration_s(trace: &Trace) -> f64 {
    trace.len() as f64 / trace.sample_rate_hz()
}

/// `|X_k|^2` of the length-N DFT at bin `k` via the Goertzel recursion.
pub fn goertzel_power(samples: &[f32], bin: usize) -> f64 {
    let n = samples.len();
    if n == 0 {
        return 0.0;
    }
    let omega = 2.0 * std::f64::consts::PI * bin as f64 / n as f64;
    let coeff = 2.0 * omega.cos();
    let (mut s1, mut s2) = (0.0f64, 0.0f64);
    for &x in samples {
        let s = x as f64 + coeff * s1 - s2;
        s2 = s1;
        s1 = s;
    }
    (s1 * s1 + s2 * s2 - coeff * s1 * s2).max(0.0)
}

/// DFT bins whose center frequencies fall inside `[center - bw/2, center + bw/2]`.
/// Falls back to the single bin nearest `center` when the band is narrower
/// than the bin spacing.
pub fn band_bins(n: usize, sample_rate_hz: f64, center_hz: f64, bandwidth_hz: f64) -> Vec<usize> {
    let df = sample_rate_hz / n as f64;
    let lo = ((center_hz - bandwidth_hz / 2.0) / df).ceil().max(0.0) as usize;
    let hi = ((center_hz + bandwidth_hz / 2.0) / df).floor() as usize;
    let hi = hi.min(n / 2);
    if lo <= hi {
        (lo..=hi).collect()
    } else {
        vec![((center_hz / df).round() as usize).min(n / 2)]
    }
}

/// Sum of squared DFT magnitudes over the bins inside the band.
pub fn band_power(trace: &Trace, center_hz: f64, bandwidth_hz: f64) -> Result<f64, DspError> {
    let nyquist_hz = trace.sample_rate_hz() / 2.0;
    if !(center_hz > 0.0 && center_hz < nyquist_hz) {
        return Err(DspError::AboveNyquist {
            center_hz,
            nyquist_hz,
        });
    }
    if bandwidth_hz.is_nan() || bandwidth_hz <= 0.0 {
        return Err(DspError::BadBandwidth(bandwidth_hz));
    }
    let s = trace.samples();
    Ok(
        band_bins(s.len(), trace.sample_rate_hz(), center_hz, bandwidth_hz)
            .into_iter()
            .map(|k| goertzel_power(s, k))
            .sum(),
    )
}

/// Band power of every cell of a probe-position grid.
pub fn band_heatmap(
    grid: &[Vec<Trace>],
    center_hz: f64,
    bandwidth_hz: f64,
) -> Result<Vec<Vec<f64>>, DspError> {
    grid.par_iter()
        .map(|row| {
            row.iter()
                .map(|t| band_power(t, center_hz, bandwidth_hz))
                .collect()
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn tr(s: Vec<f32>) -> Trace {
        Trace::new(s, 1e9).unwrap()
    }

    fn naive_abs_avg(s: &[f32], w: usize) -> Vec<f64> {
        let mut out = Vec::new();
        let mut i = 0;
        while i < s.len() {
            let end = (i + w).min(s.len());
            let mut acc = 0.0f64;
            for &x in &s[i..end] {
                acc += (x as f64).abs();
            }
            out.push(acc / (end - i) as f64);
            i += w;
        }
        out
    }

    #[test]
    fn abs_avg_examples() {
        let t = abs_window_average(&tr(vec![-2.0; 3000]), 1000).unwrap();
        assert_eq!(t.samples(), &[2.0, 2.0, 2.0]);
        assert_eq!(t.sample_rate_hz(), 1e6);
        assert_eq!(t.meta_value("preproc"), Some("absavg:1000"));

        let t = abs_window_average(&tr(vec![1.0, -1.0, 1.0, -1.0]), 2).unwrap();
        assert_eq!(t.samples(), &[1.0, 1.0]);

        assert!(matches!(
            abs_window_average(&tr(vec![1.0]), 0),
            Err(DspError::ZeroWindow)
        ));
    }

    #[test]
    fn abs_avg_ragged_tail_matches_naive() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let s: Vec<f32> = (0..10_007).map(|_| rng.sample(StandardNormal)).collect();
        let out = abs_window_average(&tr(s.clone()), 1000).unwrap();
        assert_eq!(out.len(), 11);
        for (a, b) in out.samples().iter().zip(naive_abs_avg(&s, 1000)) {
            assert_relative_eq!(*a as f64, b, max_relative = 1e-6);
        }
    }

    #[test]
    fn abs_avg_scale_and_sign() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let s: Vec<f32> = (0..5000).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let base = abs_window_average(&tr(s.clone()), 100).unwrap();
        let c = -3.5f32;
        let scaled = abs_window_average(&tr(s.iter().map(|x| c * x).collect()), 100).unwrap();
        let flipped = abs_window_average(&tr(s.iter().map(|x| -x).collect()), 100).unwrap();
        for i in 0..base.len() {
            let b = base.samples()[i] as f64;
            assert_relative_eq!(
                scaled.samples()[i] as f64,
                c.abs() as f64 * b,
                max_relative = 1e-6
            );
            assert_eq!(flipped.samples()[i], base.samples()[i]);
        }
    }

    #[test]
    fn normalize_examples() {
        let z = normalize(&tr(vec![1.0, 2.0, 3.0]), Normalization::Zscore);
        // (x - 2) / sqrt(2/3)
        let e = 1.0 / (2.0f64 / 3.0).sqrt();
        for (a, b) in z.samples().iter().zip([-e, 0.0, e]) {
            assert!((*a as f64 - b).abs() < 1e-4, "{a} vs {b}");
        }
        let z = normalize(&tr(vec![0.0, 0.0, 0.0]), Normalization::Zscore);
        assert_eq!(z.samples(), &[0.0, 0.0, 0.0]);
        let m = normalize(&tr(vec![-4.0, 2.0]), Normalization::Maxabs);
        assert_eq!(m.samples(), &[-1.0, 0.5]);
        let n = normalize(&tr(vec![-4.0, 2.0]), Normalization::None);
        assert_eq!(n.samples(), &[-4.0, 2.0]);
    }

    #[test]
    fn fit_length_examples() {
        let t = tr(vec![1.0, 2.0, 3.0]);
        let p = fit_length(&t, 5, PadPolicy::ZeroPadRight).unwrap();
        assert_eq!(p.samples(), &[1.0, 2.0, 3.0, 0.0, 0.0]);
        let t5 = tr(vec![1.0, 2.0, 3.0, 4.0, 5.0]);
        let c = fit_length(&t5, 3, PadPolicy::TruncateRight).unwrap();
        assert_eq!(c.samples(), &[1.0, 2.0, 3.0]);
        assert!(fit_length(&t, 3, PadPolicy::ZeroPadRight)
            .unwrap()
            .bit_eq(&t));
        assert!(fit_length(&t, 0, PadPolicy::ZeroPadRight).is_err());
    }

    #[test]
    fn derive_target() {
        let mut cfg = PreprocessConfig::default();
        assert_eq!(cfg.derive_target_len([3, 9, 4]), Some(9));
        cfg.pad_policy = PadPolicy::TruncateRight;
        assert_eq!(cfg.derive_target_len([3, 9, 4]), Some(3));
        cfg.min_len = 5;
        assert_eq!(cfg.derive_target_len([3, 9, 4]), Some(5));
        cfg.target_len = Some(2);
        assert_eq!(cfg.derive_target_len([3, 9, 4]), Some(2));
        assert_eq!(PreprocessConfig::default().derive_target_len([]), None);
    }

    fn tone(freq: f64, n: usize, rate: f64, amp: f64) -> Vec<f32> {
        (0..n)
            .map(|i| (amp * (2.0 * std::f64::consts::PI * freq * i as f64 / rate).sin()) as f32)
            .collect()
    }

    #[test]
    fn band_power_tone_vs_off_band() {
        let t = tr(tone(78e6, 10_000, 1e9, 1.0));
        let on = band_power(&t, 78e6, 1e6).unwrap();
        let off = band_power(&t, 40e6, 1e6).unwrap();
        assert!(on > 100.0 * off, "on={on} off={off}");
    }

    #[test]
    fn band_power_zero_and_errors() {
        let t = tr(vec![0.0; 1000]);
        assert_eq!(band_power(&t, 78e6, 1e6).unwrap(), 0.0);
        assert!(matches!(
            band_power(&t, 6e8, 1e6),
            Err(DspError::AboveNyquist { .. })
        ));
        assert!(band_power(&t, 0.0, 1e6).is_err());
        assert!(band_power(&t, 1e6, 0.0).is_err());
    }

    #[test]
    fn band_power_grows_with_repetition() {
        let s = tone(78e6, 2000, 1e9, 1.0);
        let once = band_power(&tr(s.clone()), 78e6, 1e6).unwrap();
        let twice = band_power(&tr([s.clone(), s].concat()), 78e6, 1e6).unwrap();
        assert!(twice >= once);
    }

    #[test]
    fn band_power_white_noise_is_flat() {
        let (mut a, mut b) = (0.0, 0.0);
        for seed in 0..100 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let s: Vec<f32> = (0..4096).map(|_| rng.sample(StandardNormal)).collect();
            let t = tr(s);
            a += band_power(&t, 78e6, 1e6).unwrap();
            b += band_power(&t, 40e6, 1e6).unwrap();
        }
        let ratio = a / b;
        assert!((0.5..2.0).contains(&ratio), "ratio {ratio}");
    }

    #[test]
    fn heatmap_argmax_and_shapes() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut grid = Vec::new();
        for r in 0..3 {
            let mut row = Vec::new();
            for c in 0..3 {
                let mut s: Vec<f32> = (0..4000)
                    .map(|_| 0.1 * rng.sample::<f32, _>(StandardNormal))
                    .collect();
                if (r, c) == (1, 2) {
                    for (x, t) in s.iter_mut().zip(tone(78e6, 4000, 1e9, 0.5)) {
                        *x += t;
                    }
                }
                row.push(tr(s));
            }
            grid.push(row);
        }
        let hm = band_heatmap(&grid, 78e6, 1e6).unwrap();
        assert_eq!(hm.len(), 3);
        let mut best = (0, 0);
        for r in 0..3 {
            assert_eq!(hm[r].len(), 3);
            for c in 0..3 {
                if hm[r][c] > hm[best.0][best.1] {
                    best = (r, c);
                }
            }
        }
        assert_eq!(best, (1, 2));

        let zero = vec![vec![tr(vec![0.0; 100]); 2]; 2];
        let hz = band_heatmap(&zero, 78e6, 1e6).unwrap();
        assert!(hz.iter().flatten().all(|&v| v == 0.0));

        let one = vec![vec![grid[1][2].clone()]];
        assert_eq!(
            band_heatmap(&one, 78e6, 1e6).unwrap()[0][0],
            band_power(&grid[1][2], 78e6, 1e6).unwrap()
        );
    }

    #[test]
    fn duration() {
        assert_eq!(total_duration_s(&tr(vec![0.0; 1000])), 1e-6);
    }
}
