//! Kernel-timeline EM emission model.
//!
//! Every layer becomes one GPU kernel whose duration follows its MAC count
//! and whose EM amplitude grows with `log10(1 + MACs)`. Kernels are separated
//! by near-silent launch gaps. The amplitude envelope modulates a carrier at
//! the GPU clock, on top of a constant clock tone and white Gaussian noise.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::arch::{ArchitectureDescriptor, LayerKind};
use super::SimError;
use crate::trace::{Dataset, LabeledTrace, Split, Trace};

fn default_base_amplitude() -> BTreeMap<LayerKind, f64> {
    use LayerKind::*;
    BTreeMap::from([
        (Conv2d, 0.50),
        (Dwconv2d, 0.30),
        (Pwconv2d, 0.40),
        (Dense, 0.35),
        (Maxpool, 0.22),
        (Avgpool, 0.20),
        (GlobalPool, 0.15),
        (Relu, 0.12),
        (Swish, 0.18),
        (Softmax, 0.10),
        (Batchnorm, 0.14),
        (SeBlock, 0.26),
        (Add, 0.10),
        (Concat, 0.16),
    ])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EmModel {
    /// Volts per layer kind; kinds missing from the map use 0.2 V.
    pub base_amplitude: BTreeMap<LayerKind, f64>,
    pub amplitude_per_log_mac: f64,
    pub kernel_gap_s: f64,
    pub throughput_macs_per_s: f64,
    pub min_kernel_s: f64,
    pub noise_sigma: f64,
    pub timing_jitter_rel: f64,
    pub weight_effect_rel: f64,
}

impl Default for EmModel {
    fn default() -> Self {
        Self {
            base_amplitude: default_base_amplitude(),
            amplitude_per_log_mac: 0.05,
            kernel_gap_s: 5e-6,
            throughput_macs_per_s: 6.3e9,
            min_kernel_s: 20e-6,
            noise_sigma: 0.02,
            timing_jitter_rel: 0.02,
            weight_effect_rel: 0.01,
        }
    }
}

impl EmModel {
    /// Default model with noise, jitter and weight effects switched off.
    pub fn noiseless() -> Self {
        Self {
            noise_sigma: 0.0,
            timing_jitter_rel: 0.0,
            weight_effect_rel: 0.0,
            ..Self::default()
        }
    }

    pub fn base(&self, kind: LayerKind) -> f64 {
        self.base_amplitude.get(&kind).copied().unwrap_or(0.2)
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let nonneg = [
            ("kernel_gap_s", self.kernel_gap_s),
            ("min_kernel_s", self.min_kernel_s),
            ("noise_sigma", self.noise_sigma),
            ("timing_jitter_rel", self.timing_jitter_rel),
            ("weight_effect_rel", self.weight_effect_rel),
            ("amplitude_per_log_mac", self.amplitude_per_log_mac),
        ];
        for (name, v) in nonneg {
            if !(v.is_finite() && v >= 0.0) {
                return Err(SimError::Config(format!("{name} must be >= 0, got {v}")));
            }
        }
        if !(self.throughput_macs_per_s.is_finite() && self.throughput_macs_per_s > 0.0) {
            return Err(SimError::Config("throughput_macs_per_s must be > 0".into()));
        }
        if self.base_amplitude.values().any(|v| !v.is_finite()) {
            return Err(SimError::Config("base_amplitude must be finite".into()));
        }
        Ok(())
    }

    /// Noiseless kernel duration of a layer with `macs` multiply-accumulates.
    pub fn nominal_duration_s(&self, macs: u64) -> f64 {
        self.min_kernel_s
            .max(macs as f64 / self.throughput_macs_per_s)
    }

    pub fn nominal_amplitude(&self, kind: LayerKind, macs: u64) -> f64 {
        self.base(kind) + self.amplitude_per_log_mac * (1.0 + macs as f64).log10()
    }

    /// Noiseless, jitter-free inference duration of `descriptor`.
    pub fn nominal_total_s(&self, descriptor: &ArchitectureDescriptor) -> Result<f64, SimError> {
        let macs = descriptor.layer_macs()?;
        let busy: f64 = macs.iter().map(|&m| self.nominal_duration_s(m)).sum();
        Ok(busy + macs.len().saturating_sub(1) as f64 * self.kernel_gap_s)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimConfig {
    pub sample_rate_hz: f64,
    pub gpu_clock_hz: f64,
    pub clock_tone_amplitude: f64,
    pub rng_seed: u64,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            sample_rate_hz: 1e9,
            gpu_clock_hz: 76e6,
            clock_tone_amplitude: 0.02,
            rng_seed: 0,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<(), SimError> {
        if !(self.sample_rate_hz.is_finite() && self.sample_rate_hz > 0.0) {
            return Err(SimError::Config("sample_rate_hz must be > 0".into()));
        }
        if !(self.gpu_clock_hz.is_finite() && self.gpu_clock_hz >= 0.0) {
            return Err(SimError::Config("gpu_clock_hz must be >= 0".into()));
        }
        if !(self.clock_tone_amplitude.is_finite() && self.clock_tone_amplitude >= 0.0) {
            return Err(SimError::Config("clock_tone_amplitude must be >= 0".into()));
        }
        Ok(())
    }
}

/// One kernel on the simulated timeline.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelSpan {
    pub layer: usize,
    pub start_s: f64,
    pub end_s: f64,
    pub amplitude: f64,
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn mix(parts: &[u64]) -> u64 {
    parts
        .iter()
        .fold(0x243F_6A88_85A3_08D3, |acc, &p| splitmix(acc ^ splitmix(p)))
}

/// FNV-1a of the architecture name without any `#prefix<k>` suffix, so a
/// prefix network shares weights with its parent.
fn arch_key(name: &str) -> u64 {
    let base = name.split('#').next().unwrap_or(name);
    base.bytes().fold(0xcbf2_9ce4_8422_2325u64, |h, b| {
        (h ^ b as u64).wrapping_mul(0x0000_0100_0000_01b3)
    })
}

const STREAM_WEIGHTS: u64 = 1;
const STREAM_TIMING: u64 = 2;
const STREAM_NOISE: u64 = 3;

fn rng_for(
    sim: &SimConfig,
    arch: &str,
    stream: u64,
    model_seed: u64,
    trace_seed: Option<u64>,
) -> ChaCha8Rng {
    let seed = match trace_seed {
        Some(t) => mix(&[sim.rng_seed, arch_key(arch), stream, model_seed, t]),
        None => mix(&[sim.rng_seed, arch_key(arch), stream, model_seed]),
    };
    ChaCha8Rng::seed_from_u64(seed)
}

/// Kernel start/end times and amplitudes for one inference. Per-layer random
/// draws happen in layer order, so a prefix network reproduces its parent's
/// first kernels exactly.
pub fn timeline(
    descriptor: &ArchitectureDescriptor,
    em: &EmModel,
    sim: &SimConfig,
    model_seed: u64,
    trace_seed: u64,
) -> Result<Vec<KernelSpan>, SimError> {
    if descriptor.layers.is_empty() {
        return Err(SimError::NoLayers(descriptor.name.clone()));
    }
    em.validate()?;
    sim.validate()?;
    let mut weights = rng_for(sim, &descriptor.name, STREAM_WEIGHTS, model_seed, None);
    let mut timing = rng_for(
        sim,
        &descriptor.name,
        STREAM_TIMING,
        model_seed,
        Some(trace_seed),
    );

    let mut spans = Vec::with_capacity(descriptor.layers.len());
    let mut t = 0.0f64;
    for (i, layer) in descriptor.layers.iter().enumerate() {
        let macs = layer.macs()?;
        let z_t: f64 = timing.sample(StandardNormal);
        let z_w: f64 = weights.sample(StandardNormal);
        let dur = em.nominal_duration_s(macs) * (1.0 + em.timing_jitter_rel * z_t).max(0.0);
        let amp = em.nominal_amplitude(layer.kind, macs) * (1.0 + em.weight_effect_rel * z_w);
        if i > 0 {
            t += em.kernel_gap_s;
        }
        spans.push(KernelSpan {
            layer: i,
            start_s: t,
            end_s: t + dur,
            amplitude: amp,
        });
        t += dur;
    }
    Ok(spans)
}

/// Renders one simulated EM trace. Pure function of its arguments.
pub fn simulate_trace(
    descriptor: &ArchitectureDescriptor,
    em: &EmModel,
    sim: &SimConfig,
    model_seed: u64,
    trace_seed: u64,
) -> Result<Trace, SimError> {
    let spans = timeline(descriptor, em, sim, model_seed, trace_seed)?;
    let fs = sim.sample_rate_hz;
    let end = spans.last().map(|s| s.end_s).unwrap_or(0.0);
    let n = ((end * fs).round() as usize).max(1);

    let mut env = vec![0.0f32; n];
    for s in &spans {
        let a = ((s.start_s * fs).round() as usize).min(n);
        let b = ((s.end_s * fs).round() as usize).min(n);
        env[a..b].fill(s.amplitude as f32);
    }

    let mut noise = rng_for(
        sim,
        &descriptor.name,
        STREAM_NOISE,
        model_seed,
        Some(trace_seed),
    );
    let phase: f64 = noise.gen_range(0.0..std::f64::consts::TAU);
    let omega = std::f64::consts::TAU * sim.gpu_clock_hz / fs;
    let (rot_c, rot_s) = (omega.cos(), omega.sin());
    let clock = sim.clock_tone_amplitude as f32;
    let sigma = em.noise_sigma as f32;

    let mut out = env;
    // Carrier by complex rotation, re-anchored every block to bound drift.
    const BLOCK: usize = 4096;
    for (bi, chunk) in out.chunks_mut(BLOCK).enumerate() {
        let theta = phase + omega * (bi * BLOCK) as f64;
        let (mut c, mut s) = (theta.cos(), theta.sin());
        for x in chunk.iter_mut() {
            let mut v = (*x + clock) * s as f32;
            if sigma > 0.0 {
                let z: f32 = noise.sample(StandardNormal);
                v += sigma * z;
            }
            *x = v;
            let c2 = c * rot_c - s * rot_s;
            s = s * rot_c + c * rot_s;
            c = c2;
        }
    }

    let mut meta = BTreeMap::new();
    meta.insert("arch".to_string(), descriptor.name.clone());
    meta.insert(
        "model_id".to_string(),
        format!("{}/{model_seed}", descriptor.name),
    );
    meta.insert("model_seed".to_string(), model_seed.to_string());
    meta.insert("trace_seed".to_string(), trace_seed.to_string());
    meta.insert("seed".to_string(), sim.rng_seed.to_string());
    meta.insert("layers".to_string(), descriptor.layers.len().to_string());
    Ok(Trace::with_meta(out, fs, meta)?)
}

/// Profiling/attack dataset protocol: per architecture, `n_train_models`
/// profiling models and `n_test_models` held-out models, each differing only
/// in weights.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Protocol {
    pub n_train_models: usize,
    pub n_test_models: usize,
    pub traces_per_train_model: usize,
    pub traces_per_test_model: usize,
}

impl Protocol {
    pub const PAPER: Protocol = Protocol {
        n_train_models: 5,
        n_test_models: 3,
        traces_per_train_model: 200,
        traces_per_test_model: 20,
    };
    pub const DESK: Protocol = Protocol {
        n_train_models: 2,
        n_test_models: 1,
        traces_per_train_model: 20,
        traces_per_test_model: 10,
    };

    pub fn total_traces(&self, classes: usize) -> usize {
        classes
            * (self.n_train_models * self.traces_per_train_model
                + self.n_test_models * self.traces_per_test_model)
    }

    pub fn test_traces(&self, classes: usize) -> usize {
        classes * self.n_test_models * self.traces_per_test_model
    }
}

/// One trace to generate.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TracePlan {
    pub arch: usize,
    pub model_index: usize,
    pub model_seed: u64,
    pub trace_seed: u64,
    pub split: Split,
}

impl TracePlan {
    pub fn id(&self) -> String {
        format!(
            "a{:02}_m{}_t{:04}",
            self.arch,
            self.model_index,
            self.trace_seed & 0xFFFF_FFFF
        )
    }
}

/// Enumerates the traces of `protocol` over `classes` architectures.
/// Train-model traces are tagged `Train` (the train/val pool), held-out
/// model traces `Test`.
pub fn plan_dataset(classes: usize, protocol: &Protocol) -> Vec<TracePlan> {
    let mut plan = Vec::with_capacity(protocol.total_traces(classes));
    let models = protocol.n_train_models + protocol.n_test_models;
    for arch in 0..classes {
        for m in 0..models {
            let (count, split) = if m < protocol.n_train_models {
                (protocol.traces_per_train_model, Split::Train)
            } else {
                (protocol.traces_per_test_model, Split::Test)
            };
            let model_seed = ((arch as u64) << 32) | m as u64;
            for t in 0..count {
                plan.push(TracePlan {
                    arch,
                    model_index: m,
                    model_seed,
                    trace_seed: ((m as u64) << 32) | t as u64,
                    split,
                });
            }
        }
    }
    plan
}

/// Generates every planned trace and hands it to `map` (for example to
/// preprocess it before the raw samples are dropped). Output order follows
/// the plan regardless of parallelism.
pub fn simulate_dataset_with<T, E, F>(
    corpus: &[ArchitectureDescriptor],
    protocol: &Protocol,
    em: &EmModel,
    sim: &SimConfig,
    map: F,
) -> Result<Vec<(TracePlan, T)>, E>
where
    T: Send,
    E: From<SimError> + Send,
    F: Fn(&TracePlan, Trace) -> Result<T, E> + Sync,
{
    em.validate()?;
    sim.validate()?;
    plan_dataset(corpus.len(), protocol)
        .into_par_iter()
        .map(|p| {
            let trace = simulate_trace(&corpus[p.arch], em, sim, p.model_seed, p.trace_seed)?;
            Ok((p, map(&p, trace)?))
        })
        .collect()
}

pub fn simulate_dataset(
    corpus: &[ArchitectureDescriptor],
    protocol: &Protocol,
    em: &EmModel,
    sim: &SimConfig,
) -> Result<Dataset, SimError> {
    let items = simulate_dataset_with(corpus, protocol, em, sim, |_, t| Ok::<_, SimError>(t))?;
    Ok(assemble_dataset(corpus, protocol, sim, items))
}

/// Class names and provenance attributes of a simulated dataset, without traces.
pub fn dataset_skeleton(
    corpus: &[ArchitectureDescriptor],
    protocol: &Protocol,
    sim: &SimConfig,
) -> Dataset {
    let attrs = BTreeMap::from([
        ("g".to_string(), corpus.len().to_string()),
        (
            "n_train_models".to_string(),
            protocol.n_train_models.to_string(),
        ),
        (
            "n_test_models".to_string(),
            protocol.n_test_models.to_string(),
        ),
        (
            "traces_per_train_model".to_string(),
            protocol.traces_per_train_model.to_string(),
        ),
        (
            "traces_per_test_model".to_string(),
            protocol.traces_per_test_model.to_string(),
        ),
        ("rng_seed".to_string(), sim.rng_seed.to_string()),
    ]);
    Dataset {
        class_names: corpus.iter().map(|d| d.name.clone()).collect(),
        entries: Vec::new(),
        attrs,
    }
}

pub(crate) fn assemble_dataset(
    corpus: &[ArchitectureDescriptor],
    protocol: &Protocol,
    sim: &SimConfig,
    items: Vec<(TracePlan, Trace)>,
) -> Dataset {
    let mut ds = dataset_skeleton(corpus, protocol, sim);
    ds.entries = items
        .into_iter()
        .map(|(p, trace)| LabeledTrace {
            id: p.id(),
            trace,
            label: p.arch,
            split: p.split,
        })
        .collect();
    ds
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simulator::zoo;

    fn quiet_sim() -> SimConfig {
        SimConfig {
            clock_tone_amplitude: 0.0,
            ..SimConfig::default()
        }
    }

    #[test]
    fn noiseless_duration_identity() {
        let d = zoo::mlp3();
        let em = EmModel::noiseless();
        let t = simulate_trace(&d, &em, &quiet_sim(), 1, 2).unwrap();
        let expected = em.nominal_total_s(&d).unwrap() * 1e9;
        assert!(
            (t.len() as f64 - expected).abs() <= 1.0,
            "{} vs {expected}",
            t.len()
        );
    }

    #[test]
    fn deterministic() {
        let d = zoo::mlp3();
        let em = EmModel::default();
        let a = simulate_trace(&d, &em, &SimConfig::default(), 3, 4).unwrap();
        let b = simulate_trace(&d, &em, &SimConfig::default(), 3, 4).unwrap();
        assert!(a.bit_eq(&b));
        let c = simulate_trace(&d, &em, &SimConfig::default(), 3, 5).unwrap();
        assert!(!a.bit_eq(&c));
        assert_eq!(a.meta_value("arch"), Some("MLP3"));
        assert_eq!(a.meta_value("model_seed"), Some("3"));
        assert_eq!(a.meta_value("trace_seed"), Some("4"));
    }

    #[test]
    fn empty_descriptor_rejected() {
        let mut d = zoo::mlp3();
        d.layers.clear();
        assert!(matches!(
            simulate_trace(&d, &EmModel::default(), &SimConfig::default(), 0, 0),
            Err(SimError::NoLayers(_))
        ));
    }

    #[test]
    fn gaps_are_quiet() {
        let d = zoo::mlp3();
        let em = EmModel::noiseless();
        let sim = quiet_sim();
        let spans = timeline(&d, &em, &sim, 0, 0).unwrap();
        let t = simulate_trace(&d, &em, &sim, 0, 0).unwrap();
        let gap_start = (spans[0].end_s * 1e9).round() as usize + 1;
        let gap_end = (spans[1].start_s * 1e9).round() as usize - 1;
        assert!(t.samples()[gap_start..gap_end].iter().all(|&x| x == 0.0));
        let busy = &t.samples()[..(spans[0].end_s * 1e9) as usize];
        assert!(busy.iter().any(|&x| x.abs() > 0.1));
    }

    #[test]
    fn prefix_reproduces_parent_start() {
        let d = zoo::mlp3();
        let em = EmModel::default();
        let sim = SimConfig::default();
        let full = simulate_trace(&d, &em, &sim, 9, 9).unwrap();
        let pre = crate::simulator::prefix_descriptor(&d, 3).unwrap();
        let part = simulate_trace(&pre, &em, &sim, 9, 9).unwrap();
        assert!(part.len() < full.len());
        assert_eq!(part.samples(), &full.samples()[..part.len()]);
    }

    #[test]
    fn longer_layers_never_shorten() {
        let em = EmModel::noiseless();
        let mut d = zoo::mlp3();
        let base = em.nominal_total_s(&d).unwrap();
        d.layers[0].out_channels = Some(1 << 22);
        d.layers[1].in_shape = [1, 1, 1 << 22];
        d.layers[2].in_shape = [1, 1, 1 << 22];
        assert!(em.nominal_total_s(&d).unwrap() >= base);
    }

    #[test]
    fn protocol_counts() {
        assert_eq!(Protocol::PAPER.total_traces(15), 15_900);
        assert_eq!(Protocol::PAPER.test_traces(15), 900);
        assert_eq!(Protocol::DESK.total_traces(15), 750);
        assert_eq!(Protocol::DESK.test_traces(15), 150);
        let plan = plan_dataset(15, &Protocol::DESK);
        assert_eq!(plan.len(), 750);
        assert_eq!(plan.iter().filter(|p| p.split == Split::Test).count(), 150);
        let train_seeds: std::collections::HashSet<_> = plan
            .iter()
            .filter(|p| p.split != Split::Test)
            .map(|p| p.model_seed)
            .collect();
        assert!(plan
            .iter()
            .filter(|p| p.split == Split::Test)
            .all(|p| !train_seeds.contains(&p.model_seed)));
        let ids: std::collections::HashSet<_> = plan.iter().map(TracePlan::id).collect();
        assert_eq!(ids.len(), plan.len());
    }

    #[test]
    fn config_validation() {
        let em = EmModel {
            throughput_macs_per_s: 0.0,
            ..EmModel::default()
        };
        assert!(em.validate().is_err());
        let em = EmModel {
            noise_sigma: -1.0,
            ..EmModel::default()
        };
        assert!(em.validate().is_err());
        let sim = SimConfig {
            sample_rate_hz: 0.0,
            ..SimConfig::default()
        };
        assert!(sim.validate().is_err());
    }
}
