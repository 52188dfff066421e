//! End-to-end attack: simulate, preprocess, split, train, evaluate, identify.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dsp::{fit_length, DspError, PreprocessConfig};
use crate::nn::{
    build_classifier, predict, train, History, LabeledSet, Model, NnError, TrainConfig,
    CLASSIFIER_MIN_INPUT_LEN,
};
use crate::simulator::{
    em::simulate_dataset_with, ArchitectureDescriptor, EmModel, Protocol, SimConfig, SimError,
};
use crate::trace::{Dataset, LabeledTrace, Split, Trace, TraceError};

/// Fraction of the profiling pool used for training; the rest validates.
pub const DEFAULT_SPLIT_RATIO: f64 = 0.70;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Dsp(#[from] DspError),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Trace(#[from] TraceError),
    #[error("class {class:?} has no traces in the {split} split")]
    MissingClass { class: String, split: Split },
    #[error("split ratio {0} outside (0, 1)")]
    BadRatio(f64),
    #[error("dataset has no traces")]
    Empty,
    #[error("model classes {model:?} differ from dataset classes {data:?}")]
    ClassMismatch {
        model: Vec<String>,
        data: Vec<String>,
    },
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitCounts {
    pub train: usize,
    pub val: usize,
    pub test: usize,
}

impl SplitCounts {
    pub fn of(ds: &Dataset) -> Self {
        Self {
            train: ds.count(Split::Train),
            val: ds.count(Split::Val),
            test: ds.count(Split::Test),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackReport {
    pub class_names: Vec<String>,
    pub accuracy: f64,
    /// Rows are true classes, columns predictions.
    pub confusion: Vec<Vec<usize>>,
    pub per_class_accuracy: Vec<f64>,
    pub trace_counts: SplitCounts,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub history: Option<History>,
}

impl AttackReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes") + "\n"
    }

    pub fn from_json(s: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(s)
    }

    /// Plain-text summary with one row per class.
    pub fn to_text(&self) -> String {
        let c = &self.trace_counts;
        let mut s = format!(
            "accuracy {:.4}\ntraces train {} val {} test {}\n",
            self.accuracy, c.train, c.val, c.test
        );
        let width = self.class_names.iter().map(String::len).max().unwrap_or(5);
        for (i, name) in self.class_names.iter().enumerate() {
            let row = &self.confusion[i];
            s.push_str(&format!(
                "{name:<width$}  {:.4}  {}/{}\n",
                self.per_class_accuracy[i],
                row[i],
                row.iter().sum::<usize>()
            ));
        }
        s
    }
}

fn argmax(p: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in p.iter().enumerate() {
        // Strict comparison keeps the lower index on ties.
        if v > p[best] {
            best = i;
        }
    }
    best
}

/// Stratified, seeded re-split of the profiling pool (every non-test entry)
/// into train/val. Each class gets `round(ratio * n)` training traces.
pub fn split_profiling_pool(ds: &mut Dataset, ratio: f64, seed: u64) -> Result<(), PipelineError> {
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(PipelineError::BadRatio(ratio));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for class in 0..ds.num_classes() {
        let mut idx: Vec<usize> = ds
            .entries
            .iter()
            .enumerate()
            .filter(|(_, e)| e.label == class && e.split != Split::Test)
            .map(|(i, _)| i)
            .collect();
        idx.shuffle(&mut rng);
        let n_train = (ratio * idx.len() as f64).round() as usize;
        for (k, &i) in idx.iter().enumerate() {
            ds.entries[i].split = if k < n_train {
                Split::Train
            } else {
                Split::Val
            };
        }
    }
    Ok(())
}

fn require_all_classes(ds: &Dataset) -> Result<(), PipelineError> {
    for split in [Split::Train, Split::Val, Split::Test] {
        let mut seen = vec![false; ds.num_classes()];
        for e in ds.split(split) {
            seen[e.label] = true;
        }
        if let Some(c) = seen.iter().position(|s| !s) {
            return Err(PipelineError::MissingClass {
                class: ds.class_names[c].clone(),
                split,
            });
        }
    }
    Ok(())
}

/// Fits already-enveloped traces to a common length and splits the pool.
/// Returns the dataset and the chosen length.
fn finish_attack_dataset(
    mut ds: Dataset,
    preprocess: &PreprocessConfig,
    split_ratio: f64,
    seed: u64,
) -> Result<(Dataset, usize), PipelineError> {
    if ds.is_empty() {
        return Err(PipelineError::Empty);
    }
    let pool_lengths = ds
        .entries
        .iter()
        .filter(|e| e.split != Split::Test)
        .map(|e| e.trace.len());
    let target = preprocess
        .derive_target_len(pool_lengths)
        .ok_or(PipelineError::MissingClass {
            class: ds.class_names.first().cloned().unwrap_or_default(),
            split: Split::Train,
        })?;
    ds.entries
        .par_iter_mut()
        .try_for_each(|e| -> Result<(), DspError> {
            e.trace = fit_length(&e.trace, target, preprocess.pad_policy)?;
            Ok(())
        })?;
    split_profiling_pool(&mut ds, split_ratio, seed)?;
    require_all_classes(&ds)?;
    ds.attrs.insert(
        "preprocess".into(),
        serde_json::to_string(preprocess).unwrap(),
    );
    ds.attrs.insert("target_len".into(), target.to_string());
    ds.attrs.insert("split_seed".into(), seed.to_string());
    Ok((ds, target))
}

/// Envelope, normalize and length-fit every trace; split the profiling pool
/// 70/30 (stratified by class, seeded); test traces keep their tag.
pub fn build_attack_dataset(
    raw: &Dataset,
    preprocess: &PreprocessConfig,
    split_ratio: f64,
    seed: u64,
) -> Result<Dataset, PipelineError> {
    preprocess.validate()?;
    raw.validate()?;
    let entries = raw
        .entries
        .par_iter()
        .map(|e| {
            Ok(LabeledTrace {
                id: e.id.clone(),
                trace: preprocess.envelope(&e.trace)?,
                label: e.label,
                split: e.split,
            })
        })
        .collect::<Result<Vec<_>, DspError>>()?;
    let ds = Dataset {
        class_names: raw.class_names.clone(),
        entries,
        attrs: raw.attrs.clone(),
    };
    Ok(finish_attack_dataset(ds, preprocess, split_ratio, seed)?.0)
}

/// Converts one split into classifier inputs.
pub fn labeled_set(ds: &Dataset, split: Split) -> Result<LabeledSet, PipelineError> {
    let len = ds.entries.first().ok_or(PipelineError::Empty)?.trace.len();
    let mut set = LabeledSet::new(len);
    for e in ds.split(split) {
        let x: Vec<f64> = e.trace.samples().iter().map(|&v| f64::from(v)).collect();
        set.push(&x, e.label)?;
    }
    Ok(set)
}

/// Argmax classification of every row of `test`.
pub fn evaluate(
    model: &Model,
    test: &LabeledSet,
    class_names: &[String],
) -> Result<AttackReport, PipelineError> {
    let c = model.num_classes();
    if class_names.len() != c {
        return Err(PipelineError::ClassMismatch {
            model: model.class_names.clone(),
            data: class_names.to_vec(),
        });
    }
    let mut confusion = vec![vec![0usize; c]; c];
    if !test.is_empty() {
        let probs = model.predict_batch(test.rows())?;
        for (p, &y) in probs.iter().zip(test.labels()) {
            confusion[y][argmax(p)] += 1;
        }
    }
    let total: usize = test.len();
    let diag: usize = (0..c).map(|i| confusion[i][i]).sum();
    let per_class_accuracy = confusion
        .iter()
        .enumerate()
        .map(|(i, row)| {
            let n: usize = row.iter().sum();
            if n == 0 {
                0.0
            } else {
                row[i] as f64 / n as f64
            }
        })
        .collect();
    Ok(AttackReport {
        class_names: class_names.to_vec(),
        accuracy: if total == 0 {
            0.0
        } else {
            diag as f64 / total as f64
        },
        confusion,
        per_class_accuracy,
        trace_counts: SplitCounts {
            test: total,
            ..SplitCounts::default()
        },
        history: None,
    })
}

/// Evaluates `model` on the test split of a preprocessed dataset.
pub fn evaluate_dataset(model: &Model, ds: &Dataset) -> Result<AttackReport, PipelineError> {
    if model.class_names != ds.class_names {
        return Err(PipelineError::ClassMismatch {
            model: model.class_names.clone(),
            data: ds.class_names.clone(),
        });
    }
    let test = labeled_set(ds, Split::Test)?;
    let mut report = evaluate(model, &test, &ds.class_names)?;
    report.trace_counts = SplitCounts::of(ds);
    Ok(report)
}

/// Trains the Table 2 classifier on the train/val splits of a preprocessed dataset.
pub fn train_classifier(
    ds: &Dataset,
    preprocess: &PreprocessConfig,
    cfg: &TrainConfig,
) -> Result<(Model, History), PipelineError> {
    let tr = labeled_set(ds, Split::Train)?;
    let va = labeled_set(ds, Split::Val)?;
    let mut model = build_classifier(tr.input_len(), ds.num_classes(), cfg.rng_seed)?;
    model.class_names = ds.class_names.clone();
    model.preprocess = Some(PreprocessConfig {
        target_len: Some(tr.input_len()),
        ..preprocess.clone()
    });
    Ok(train(model, &tr, &va, cfg)?)
}

/// Everything a finished attack run produces.
#[derive(Debug, Clone)]
pub struct AttackOutcome {
    pub report: AttackReport,
    pub model: Model,
    pub dataset: Dataset,
}

/// Simulate the protocol over `corpus`, preprocess on the fly, train and evaluate.
/// The classifier input length is the dataset-derived target, floored at the
/// classifier's minimum. Deterministic in `sim.rng_seed` and `train_cfg.rng_seed`.
pub fn run_attack(
    corpus: &[ArchitectureDescriptor],
    protocol: &Protocol,
    em: &EmModel,
    sim: &SimConfig,
    preprocess: &PreprocessConfig,
    train_cfg: &TrainConfig,
) -> Result<AttackOutcome, PipelineError> {
    preprocess.validate()?;
    train_cfg.validate()?;
    let pre = PreprocessConfig {
        min_len: preprocess.min_len.max(CLASSIFIER_MIN_INPUT_LEN),
        ..preprocess.clone()
    };
    let items = simulate_dataset_with(corpus, protocol, em, sim, |_, t: Trace| {
        pre.envelope(&t).map_err(PipelineError::from)
    })?;
    let raw = crate::simulator::em::assemble_dataset(corpus, protocol, sim, items);
    let (dataset, _) = finish_attack_dataset(raw, &pre, DEFAULT_SPLIT_RATIO, train_cfg.rng_seed)?;
    let (model, history) = train_classifier(&dataset, &pre, train_cfg)?;
    let mut report = evaluate_dataset(&model, &dataset)?;
    report.history = Some(history);
    Ok(AttackOutcome {
        report,
        model,
        dataset,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Identification {
    pub class_index: usize,
    pub class_name: String,
    pub class_names: Vec<String>,
    pub probabilities: Vec<f64>,
    /// Set when the top probability is below `2 / C`.
    pub low_confidence: bool,
}

impl Identification {
    /// `(class, probability)` pairs, most likely first (ties keep class order).
    pub fn ranked(&self) -> Vec<(String, f64)> {
        let mut idx: Vec<usize> = (0..self.probabilities.len()).collect();
        idx.sort_by(|&a, &b| self.probabilities[b].total_cmp(&self.probabilities[a]));
        idx.into_iter()
            .map(|i| (self.class_names[i].clone(), self.probabilities[i]))
            .collect()
    }
}

/// Single-trace classification of a raw trace.
pub fn identify(
    model: &Model,
    trace: &Trace,
    preprocess: &PreprocessConfig,
) -> Result<Identification, PipelineError> {
    let env = preprocess.envelope(trace)?;
    let fitted = fit_length(&env, model.input_len(), preprocess.pad_policy)?;
    let x: Vec<f64> = fitted.samples().iter().map(|&v| f64::from(v)).collect();
    let probabilities = predict(model, &x)?;
    let class_index = argmax(&probabilities);
    let c = probabilities.len() as f64;
    Ok(Identification {
        class_index,
        class_name: model.class_names[class_index].clone(),
        low_confidence: probabilities[class_index] < 2.0 / c,
        class_names: model.class_names.clone(),
        probabilities,
    })
}
