//! Layer boundary localisation: quiet-gap detection on a single envelope, and
//! divergence between envelopes of successive prefix networks.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dsp::{DspError, PreprocessConfig};
use crate::simulator::{
    prefix_descriptor, simulate_trace, ArchitectureDescriptor, EmModel, SimConfig, SimError,
};
use crate::trace::Trace;

pub const DEFAULT_GAP_THRESHOLD_REL: f64 = 0.2;
pub const DEFAULT_DIVERGENCE_WINDOW: usize = 5;
pub const DEFAULT_DIVERGENCE_THRESHOLD_REL: f64 = 0.2;

#[derive(Debug, thiserror::Error)]
pub enum SegmentError {
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Dsp(#[from] DspError),
    #[error("descriptor needs at least two layers to profile, has {0}")]
    TooFewLayers(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundaryKind {
    GapDetected,
    Divergence,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Boundary {
    /// Sample index in the preprocessed trace.
    pub index: usize,
    pub kind: BoundaryKind,
    pub confidence: f64,
}

pub fn boundaries_to_json(b: &[Boundary]) -> String {
    serde_json::to_string_pretty(b).expect("boundaries serialize") + "\n"
}

pub fn boundaries_from_json(s: &str) -> Result<Vec<Boundary>, serde_json::Error> {
    serde_json::from_str(s)
}

fn median_abs(samples: &[f32]) -> f64 {
    if samples.is_empty() {
        return 0.0;
    }
    let mut v: Vec<f32> = samples.iter().map(|x| x.abs()).collect();
    let mid = v.len() / 2;
    let (_, m, _) = v.select_nth_unstable_by(mid, f32::total_cmp);
    f64::from(*m)
}

/// Half the configured inter-kernel gap, in preprocessed samples (at least 1).
pub fn default_min_gap_samples(em: &EmModel, sim: &SimConfig, window: usize) -> usize {
    let gap = em.kernel_gap_s * sim.sample_rate_hz / window.max(1) as f64;
    ((gap / 2.0).floor() as usize).max(1)
}

/// Boundaries at the midpoints of interior runs of at least `min_gap_samples`
/// samples below `gap_threshold_rel * median|x|`. Runs touching either end of
/// the trace are idle time, not boundaries.
pub fn detect_boundaries(
    trace: &Trace,
    gap_threshold_rel: f64,
    min_gap_samples: usize,
) -> Vec<Boundary> {
    let s = trace.samples();
    let thr = gap_threshold_rel * median_abs(s);
    let min_gap = min_gap_samples.max(1);
    let mut runs = Vec::new();
    let mut start = None;
    for (i, &v) in s.iter().enumerate() {
        let quiet = f64::from(v.abs()) < thr;
        match (quiet, start) {
            (true, None) => start = Some(i),
            (false, Some(a)) => {
                if a > 0 && i - a >= min_gap {
                    runs.push((a, i - a));
                }
                start = None;
            }
            _ => {}
        }
    }
    let longest = runs.iter().map(|r| r.1).max().unwrap_or(1) as f64;
    runs.into_iter()
        .map(|(a, len)| Boundary {
            index: a + len / 2,
            kind: BoundaryKind::GapDetected,
            confidence: len as f64 / longest,
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Divergence {
    pub index: usize,
    /// False when no window exceeded the threshold; `index` is then the
    /// shorter trace's length.
    pub diverged: bool,
    /// Fraction of windows from `index` onward that also exceed the threshold.
    pub confidence: f64,
}

/// First index where the windowed mean absolute difference between two
/// envelopes exceeds `threshold_rel * median|longer|`. The shorter trace is
/// treated as zero past its end, so the point can fall after it.
pub fn divergence_point(
    shorter: &Trace,
    longer: &Trace,
    window: usize,
    threshold_rel: f64,
) -> Divergence {
    let (a, b) = (shorter.samples(), longer.samples());
    let n = a.len().max(b.len());
    let diff: Vec<f64> = (0..n)
        .map(|i| {
            let x = a.get(i).copied().unwrap_or(0.0);
            let y = b.get(i).copied().unwrap_or(0.0);
            f64::from((x - y).abs())
        })
        .collect();
    let thr = threshold_rel * median_abs(b);
    let w = window.clamp(1, n.max(1));
    let means: Vec<f64> = if n == 0 {
        Vec::new()
    } else {
        let mut acc: f64 = diff[..w].iter().sum();
        let mut out = vec![acc / w as f64];
        for i in w..n {
            acc += diff[i] - diff[i - w];
            out.push(acc / w as f64);
        }
        out
    };
    match means.iter().position(|&m| m > thr) {
        Some(i) => {
            let rest = &means[i..];
            let hits = rest.iter().filter(|&&m| m > thr).count();
            Divergence {
                index: i,
                diverged: true,
                confidence: hits as f64 / rest.len() as f64,
            }
        }
        None => Divergence {
            index: a.len(),
            diverged: false,
            confidence: 0.0,
        },
    }
}

/// Envelope of one simulated inference of `descriptor`.
pub fn simulated_envelope(
    descriptor: &ArchitectureDescriptor,
    em: &EmModel,
    sim: &SimConfig,
    preprocess: &PreprocessConfig,
    model_seed: u64,
    trace_seed: u64,
) -> Result<Trace, SegmentError> {
    let raw = simulate_trace(descriptor, em, sim, model_seed, trace_seed)?;
    Ok(preprocess.envelope(&raw)?)
}

/// Simulates prefixes 1..=L of `descriptor` and returns the L-1 divergence
/// points between consecutive prefixes. Use an unnormalized envelope so the
/// shared prefix of two traces is sample-identical.
pub fn profile_by_prefixes(
    descriptor: &ArchitectureDescriptor,
    em: &EmModel,
    sim: &SimConfig,
    preprocess: &PreprocessConfig,
    model_seed: u64,
    trace_seed: u64,
) -> Result<Vec<Boundary>, SegmentError> {
    let l = descriptor.layers.len();
    if l < 2 {
        return Err(SegmentError::TooFewLayers(l));
    }
    let envs = (1..=l)
        .into_par_iter()
        .map(|k| {
            let p = prefix_descriptor(descriptor, k)?;
            simulated_envelope(&p, em, sim, preprocess, model_seed, trace_seed)
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(envs
        .windows(2)
        .map(|w| {
            let d = divergence_point(
                &w[0],
                &w[1],
                DEFAULT_DIVERGENCE_WINDOW,
                DEFAULT_DIVERGENCE_THRESHOLD_REL,
            );
            Boundary {
                index: d.index,
                kind: BoundaryKind::Divergence,
                confidence: d.confidence,
            }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dsp::Normalization;
    use crate::simulator::{timeline, zoo};

    fn env_cfg() -> PreprocessConfig {
        PreprocessConfig {
            window: 1000,
            normalize: Normalization::None,
            ..PreprocessConfig::default()
        }
    }

    fn t(v: Vec<f32>) -> Trace {
        Trace::new(v, 1e6).unwrap()
    }

    /// Gap midpoints of the noiseless timeline, in envelope samples.
    fn true_gaps(
        d: &ArchitectureDescriptor,
        em: &EmModel,
        sim: &SimConfig,
        window: usize,
    ) -> Vec<f64> {
        let spans = timeline(d, em, sim, 0, 0).unwrap();
        let scale = sim.sample_rate_hz / window as f64;
        spans
            .windows(2)
            .map(|w| (w[0].end_s + w[1].start_s) / 2.0 * scale)
            .collect()
    }

    #[test]
    fn constructed_gap() {
        let mut v = vec![1.0f32; 100];
        v.extend([0.0; 20]);
        v.extend([1.0; 100]);
        let b = detect_boundaries(&t(v), 0.5, 10);
        assert_eq!(b.len(), 1);
        assert_eq!(b[0].index, 110);
        assert_eq!(b[0].kind, BoundaryKind::GapDetected);
        assert_eq!(b[0].confidence, 1.0);
        assert!(detect_boundaries(&t(vec![0.7; 300]), 0.5, 10).is_empty());
    }

    #[test]
    fn short_and_edge_runs_ignored() {
        let mut v = vec![0.0f32; 30];
        v.extend([1.0; 50]);
        v.extend([0.0; 5]);
        v.extend([1.0; 50]);
        v.extend([0.0; 30]);
        assert!(detect_boundaries(&t(v.clone()), 0.5, 10).is_empty());
        assert_eq!(detect_boundaries(&t(v), 0.5, 5).len(), 1);
    }

    #[test]
    fn mlp_noiseless_boundaries() {
        let d = zoo::mlp3();
        let (em, sim) = (EmModel::noiseless(), SimConfig::default());
        let env = simulated_envelope(&d, &em, &sim, &env_cfg(), 0, 0).unwrap();
        let min_gap = default_min_gap_samples(&em, &sim, 1000);
        let b = detect_boundaries(&env, DEFAULT_GAP_THRESHOLD_REL, min_gap);
        assert_eq!(b.len(), 5, "{b:?}");
        for (got, want) in b.iter().zip(true_gaps(&d, &em, &sim, 1000)) {
            assert!(
                (got.index as f64 - want).abs() <= 2.0,
                "{} vs {want}",
                got.index
            );
        }
        assert!(b.windows(2).all(|w| w[0].index < w[1].index));
    }

    #[test]
    fn divergence_basics() {
        let a = t(vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let d = divergence_point(&a, &a, 2, 0.2);
        assert_eq!((d.index, d.diverged), (6, false));
        let b = t(vec![9.0, 9.0, 9.0, 9.0, 9.0, 9.0]);
        assert_eq!(divergence_point(&a, &b, 2, 0.2).index, 0);
    }

    #[test]
    fn mlp_prefix_divergence_near_kernel_end() {
        let d = zoo::mlp3();
        let (em, sim) = (EmModel::noiseless(), SimConfig::default());
        let p1 = simulated_envelope(
            &prefix_descriptor(&d, 1).unwrap(),
            &em,
            &sim,
            &env_cfg(),
            0,
            0,
        )
        .unwrap();
        let p2 = simulated_envelope(
            &prefix_descriptor(&d, 2).unwrap(),
            &em,
            &sim,
            &env_cfg(),
            0,
            0,
        )
        .unwrap();
        let end1 = timeline(&d, &em, &sim, 0, 0).unwrap()[0].end_s * sim.sample_rate_hz / 1000.0;
        let dv = divergence_point(
            &p1,
            &p2,
            DEFAULT_DIVERGENCE_WINDOW,
            DEFAULT_DIVERGENCE_THRESHOLD_REL,
        );
        assert!(dv.diverged);
        assert!((dv.index as f64 - end1).abs() <= 2.0 * DEFAULT_DIVERGENCE_WINDOW as f64);
    }

    #[test]
    fn prefixes_agree_with_gaps() {
        let d = zoo::mlp3();
        let (em, sim) = (EmModel::noiseless(), SimConfig::default());
        let full = simulated_envelope(&d, &em, &sim, &env_cfg(), 0, 0).unwrap();
        let gaps = detect_boundaries(
            &full,
            DEFAULT_GAP_THRESHOLD_REL,
            default_min_gap_samples(&em, &sim, 1000),
        );
        let div = profile_by_prefixes(&d, &em, &sim, &env_cfg(), 0, 0).unwrap();
        assert_eq!(div.len(), 5);
        for (g, p) in gaps.iter().zip(&div) {
            assert_eq!(p.kind, BoundaryKind::Divergence);
            assert!(
                g.index.abs_diff(p.index) <= 2 * DEFAULT_DIVERGENCE_WINDOW,
                "{g:?} {p:?}"
            );
        }
    }

    #[test]
    fn prefix_stability() {
        let short = zoo::mlp("M", 100, &[32, 32], &[true, true]);
        let long = zoo::mlp("M", 100, &[32, 32, 32], &[true, true, true]);
        let (em, sim) = (EmModel::default(), SimConfig::default());
        let a = profile_by_prefixes(&short, &em, &sim, &env_cfg(), 3, 4).unwrap();
        let b = profile_by_prefixes(&long, &em, &sim, &env_cfg(), 3, 4).unwrap();
        assert_eq!(a[..], b[..a.len()]);
    }

    #[test]
    fn json_roundtrip() {
        let b = vec![Boundary {
            index: 3,
            kind: BoundaryKind::Divergence,
            confidence: 0.5,
        }];
        let s = boundaries_to_json(&b);
        assert!(s.contains("\"divergence\""));
        assert_eq!(boundaries_from_json(&s).unwrap(), b);
    }
}
