use std::fs;
use std::path::{Path, PathBuf};

use emarch_core::dsp::{band_heatmap, fit_length, Normalization, PreprocessConfig};
use emarch_core::nn::{History, Model, TrainConfig, CLASSIFIER_MIN_INPUT_LEN};
use emarch_core::pipeline::{
    build_attack_dataset, evaluate_dataset, identify, train_classifier, AttackReport,
    Identification, SplitCounts, DEFAULT_SPLIT_RATIO,
};
use emarch_core::segmenter::{
    boundaries_from_json, boundaries_to_json, default_min_gap_samples, detect_boundaries,
    profile_by_prefixes, Boundary, DEFAULT_GAP_THRESHOLD_REL,
};
use emarch_core::simulator::{
    dataset_skeleton, load_corpus, prefix_descriptor, simulate_dataset_with, simulate_trace,
    ArchitectureDescriptor, Protocol, SimConfig,
};
use emarch_core::trace::{
    dataset_load, dataset_save, load_trace, save_trace, write_manifest, write_trace, Dataset,
    LabeledTrace, ManifestRecord, Split, Trace, MANIFEST_FILE,
};

use crate::config::RunConfig;
use crate::svg::{confusion_svg, heatmap_svg, trace_svg, PlotStyle};
use crate::{usage, write_atomic, write_dir_atomic, CliResult, Tag};

fn load_descriptors(path: &Path) -> CliResult<Vec<ArchitectureDescriptor>> {
    load_corpus(path).data(format!("loading corpus {}", path.display()))
}

/// Looks up `name` in the corpus. `<name>#prefix<k>` selects the first `k`
/// layers of `<name>`.
pub fn find_arch(
    corpus: &[ArchitectureDescriptor],
    name: &str,
) -> CliResult<ArchitectureDescriptor> {
    if let Some(d) = corpus.iter().find(|d| d.name == name) {
        return Ok(d.clone());
    }
    if let Some((base, k)) = name.split_once("#prefix") {
        if let (Some(d), Ok(k)) = (corpus.iter().find(|d| d.name == base), k.parse()) {
            return prefix_descriptor(d, k).data(format!("prefix of {base}"));
        }
    }
    let known: Vec<&str> = corpus.iter().map(|d| d.name.as_str()).collect();
    Err(usage(format!(
        "unknown architecture {name:?}; corpus has {}",
        known.join(", ")
    )))
}

fn trace_bytes(trace: &Trace) -> CliResult<Vec<u8>> {
    let mut buf = Vec::new();
    write_trace(trace, &mut buf).runtime("encoding trace")?;
    Ok(buf)
}

fn read_trace(path: &Path) -> CliResult<Trace> {
    load_trace(path).data(format!("reading {}", path.display()))
}

fn read_dataset(path: &Path) -> CliResult<Dataset> {
    dataset_load(path).data(format!("loading dataset {}", path.display()))
}

fn read_model(path: &Path) -> CliResult<Model> {
    Model::load(path).data(format!("loading model {}", path.display()))
}

pub fn simulate(
    corpus: &Path,
    arch: &str,
    model_seed: u64,
    trace_seed: u64,
    out: &Path,
    cfg: &RunConfig,
) -> CliResult<Trace> {
    let d = find_arch(&load_descriptors(corpus)?, arch)?;
    let t = simulate_trace(&d, &cfg.em_model, &cfg.sim_config, model_seed, trace_seed)
        .runtime("simulating trace")?;
    write_atomic(out, &trace_bytes(&t)?)?;
    Ok(t)
}

/// Simulates `protocol` over the corpus and writes `traces/*.emt` plus a
/// manifest into `out`. Traces are written as they are generated.
pub fn dataset(
    corpus: &Path,
    protocol: &Protocol,
    out: &Path,
    seed: u64,
    cfg: &RunConfig,
) -> CliResult<SplitCounts> {
    let corpus = load_descriptors(corpus)?;
    if protocol.n_train_models == 0 || protocol.traces_per_train_model == 0 {
        return Err(usage(
            "protocol needs at least one profiling trace per class",
        ));
    }
    let sim = SimConfig {
        rng_seed: seed,
        ..cfg.sim_config.clone()
    };
    write_dir_atomic(out, |tmp| {
        fs::create_dir_all(tmp.join("traces")).runtime("creating traces directory")?;
        let items = simulate_dataset_with(&corpus, protocol, &cfg.em_model, &sim, |p, t| {
            let rec = ManifestRecord::for_trace(&p.id(), p.arch, p.split, &t);
            save_trace(&t, &tmp.join(&rec.file))?;
            Ok::<_, anyhow::Error>(rec)
        })
        .runtime("simulating dataset")?;
        let mut counts = SplitCounts::default();
        for (p, _) in &items {
            match p.split {
                Split::Train => counts.train += 1,
                Split::Val => counts.val += 1,
                Split::Test => counts.test += 1,
            }
        }
        let skel = dataset_skeleton(&corpus, protocol, &sim);
        let records = items.into_iter().map(|(_, r)| r).collect();
        write_manifest(tmp, &skel.class_names, &skel.attrs, records).runtime("writing manifest")?;
        Ok(counts)
    })
}

fn is_dataset_path(p: &Path) -> bool {
    p.is_dir() || p.file_name().is_some_and(|n| n == MANIFEST_FILE)
}

/// Preprocessing for classifier inputs: the target length never drops below
/// the classifier's minimum input length.
fn classifier_preprocess(pre: &PreprocessConfig) -> PreprocessConfig {
    PreprocessConfig {
        min_len: pre.min_len.max(CLASSIFIER_MIN_INPUT_LEN),
        ..pre.clone()
    }
}

/// Single trace: envelope (and length fit when `target_len` is set).
/// Dataset: envelope, fit and split into train/val/test for training.
pub fn preprocess(
    input: &Path,
    out: &Path,
    pre: &PreprocessConfig,
    split_seed: u64,
) -> CliResult<()> {
    pre.validate().map_err(usage)?;
    if is_dataset_path(input) {
        let raw = read_dataset(input)?;
        let ds = build_attack_dataset(
            &raw,
            &classifier_preprocess(pre),
            DEFAULT_SPLIT_RATIO,
            split_seed,
        )
        .data("preprocessing dataset")?;
        write_dir_atomic(out, |tmp| {
            dataset_save(&ds, tmp).runtime("writing dataset")?;
            Ok(())
        })
    } else {
        let t = read_trace(input)?;
        let mut env = pre.envelope(&t).data("preprocessing trace")?;
        if let Some(n) = pre.target_len {
            env = fit_length(&env, n, pre.pad_policy).data("fitting length")?;
        }
        write_atomic(out, &trace_bytes(&env)?)
    }
}

fn is_preprocessed(ds: &Dataset) -> bool {
    ds.attrs.contains_key("target_len") && ds.attrs.contains_key("preprocess")
}

/// Path of the training history written next to a checkpoint.
pub fn history_path(model_out: &Path) -> PathBuf {
    model_out.with_extension("history.tsv")
}

/// Trains the classifier on a raw or preprocessed dataset directory.
/// Raw datasets are preprocessed with `pre` and split with `cfg.rng_seed`.
pub fn train(
    dataset: &Path,
    out: &Path,
    cfg: &TrainConfig,
    pre: &PreprocessConfig,
) -> CliResult<(Model, History)> {
    cfg.validate().map_err(usage)?;
    pre.validate().map_err(usage)?;
    let ds = read_dataset(dataset)?;
    let (ds, pre) = if is_preprocessed(&ds) {
        let pre: PreprocessConfig =
            serde_json::from_str(&ds.attrs["preprocess"]).data("dataset preprocess attribute")?;
        (ds, pre)
    } else {
        let pre = classifier_preprocess(pre);
        let ds = build_attack_dataset(&ds, &pre, DEFAULT_SPLIT_RATIO, cfg.rng_seed)
            .data("preprocessing dataset")?;
        (ds, pre)
    };
    let (model, history) = train_classifier(&ds, &pre, cfg).runtime("training")?;
    write_atomic(out, &model.to_bytes())?;
    write_atomic(&history_path(out), history.to_text().as_bytes())?;
    Ok((model, history))
}

/// Brings a dataset to the model's input length. Preprocessed datasets of the
/// right length pass through; raw ones go through the model's stored preprocessing.
fn prepare_for_model(ds: Dataset, model: &Model) -> CliResult<Dataset> {
    let fitted = ds
        .entries
        .first()
        .is_some_and(|e| e.trace.len() == model.input_len());
    if is_preprocessed(&ds) && fitted {
        return Ok(ds);
    }
    let pre = model
        .preprocess
        .clone()
        .ok_or_else(|| usage("model checkpoint carries no preprocessing settings"))?;
    let entries = ds
        .entries
        .iter()
        .map(|e| {
            let env = pre.envelope(&e.trace)?;
            Ok(LabeledTrace {
                trace: fit_length(&env, model.input_len(), pre.pad_policy)?,
                ..e.clone()
            })
        })
        .collect::<Result<Vec<_>, emarch_core::dsp::DspError>>()
        .data("preprocessing dataset")?;
    Ok(Dataset { entries, ..ds })
}

/// Evaluates on the test split and writes `report.json`, `report.txt` and
/// `confusion.svg` into `report_dir`.
pub fn eval(model: &Path, dataset: &Path, report_dir: &Path) -> CliResult<AttackReport> {
    let model = read_model(model)?;
    let ds = prepare_for_model(read_dataset(dataset)?, &model)?;
    if ds.count(Split::Test) == 0 {
        return Err(usage("dataset has no test traces"));
    }
    let report = evaluate_dataset(&model, &ds).data("evaluating")?;
    write_report(&report, report_dir)?;
    Ok(report)
}

pub fn write_report(report: &AttackReport, dir: &Path) -> CliResult<()> {
    write_atomic(&dir.join("report.json"), report.to_json().as_bytes())?;
    write_atomic(&dir.join("report.txt"), report.to_text().as_bytes())?;
    write_atomic(
        &dir.join("confusion.svg"),
        confusion_svg(&report.class_names, &report.confusion).as_bytes(),
    )
}

pub fn attack(model: &Path, trace: &Path) -> CliResult<Identification> {
    let model = read_model(model)?;
    let trace = read_trace(trace)?;
    let pre = model
        .preprocess
        .clone()
        .ok_or_else(|| usage("model checkpoint carries no preprocessing settings"))?;
    identify(&model, &trace, &pre).data("classifying trace")
}

#[derive(Debug, Clone)]
pub enum SegmentMode {
    /// Boundaries at quiet gaps in the envelope.
    Gaps,
    /// Boundaries from simulated prefix networks of `arch`, using the seeds
    /// recorded in the trace metadata.
    Prefix { corpus: PathBuf, arch: String },
}

#[derive(Debug, Clone)]
pub struct SegmentOutput {
    pub envelope: Trace,
    pub boundaries: Vec<Boundary>,
}

fn meta_u64(t: &Trace, key: &str) -> CliResult<u64> {
    let v = t.meta_value(key).ok_or_else(|| {
        usage(format!(
            "trace has no {key:?} metadata; prefix mode needs a simulated trace"
        ))
    })?;
    v.parse::<u64>()
        .map_err(|e| usage(format!("metadata {key}={v:?}: {e}")))
}

pub fn segment(
    trace: &Path,
    mode: &SegmentMode,
    window: usize,
    svg_out: &Path,
    json_out: Option<&Path>,
    cfg: &RunConfig,
) -> CliResult<SegmentOutput> {
    if window == 0 {
        return Err(usage("--window must be positive"));
    }
    let t = read_trace(trace)?;
    let pre = PreprocessConfig {
        window,
        normalize: Normalization::None,
        ..PreprocessConfig::default()
    };
    let envelope = pre.envelope(&t).data("envelope")?;
    let sim = SimConfig {
        sample_rate_hz: t.sample_rate_hz(),
        ..cfg.sim_config.clone()
    };
    let boundaries = match mode {
        SegmentMode::Gaps => detect_boundaries(
            &envelope,
            DEFAULT_GAP_THRESHOLD_REL,
            default_min_gap_samples(&cfg.em_model, &sim, window),
        ),
        SegmentMode::Prefix { corpus, arch } => {
            let d = find_arch(&load_descriptors(corpus)?, arch)?;
            let sim = SimConfig {
                rng_seed: meta_u64(&t, "seed")?,
                ..sim
            };
            profile_by_prefixes(
                &d,
                &cfg.em_model,
                &sim,
                &pre,
                meta_u64(&t, "model_seed")?,
                meta_u64(&t, "trace_seed")?,
            )
            .runtime("profiling prefixes")?
        }
    };
    let style = PlotStyle {
        x_label: format!("envelope sample (window {window})"),
        boundaries: boundaries.iter().map(|b| b.index).collect(),
        ..PlotStyle::default()
    };
    let svg = trace_svg(envelope.samples(), &style);
    if let Some(p) = json_out {
        write_atomic(p, boundaries_to_json(&boundaries).as_bytes())?;
    }
    write_atomic(svg_out, svg.as_bytes())?;
    Ok(SegmentOutput {
        envelope,
        boundaries,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct HeatmapOutput {
    /// `power[row][col]`.
    pub power: Vec<Vec<f64>>,
    /// `(row, col, power)`, strongest first; ties keep row-major order.
    pub ranked: Vec<(usize, usize, f64)>,
}

fn parse_cell_name(name: &str) -> Option<(usize, usize)> {
    let (r, c) = name
        .strip_prefix("cell_")?
        .strip_suffix(".emt")?
        .split_once('_')?;
    Some((r.parse().ok()?, c.parse().ok()?))
}

/// Loads `cell_<row>_<col>.emt` files into a full rectangular grid.
pub fn load_grid(dir: &Path) -> CliResult<Vec<Vec<Trace>>> {
    let mut cells = Vec::new();
    for entry in fs::read_dir(dir).data(format!("reading {}", dir.display()))? {
        let path = entry.data("listing grid")?.path();
        if let Some(rc) = path
            .file_name()
            .and_then(|n| n.to_str())
            .and_then(parse_cell_name)
        {
            cells.push((rc, path));
        }
    }
    if cells.is_empty() {
        return Err(usage(format!(
            "no cell_<row>_<col>.emt files in {}",
            dir.display()
        )));
    }
    cells.sort();
    let rows = cells.iter().map(|((r, _), _)| r + 1).max().unwrap_or(0);
    let cols = cells.iter().map(|((_, c), _)| c + 1).max().unwrap_or(0);
    let mut grid: Vec<Vec<Option<Trace>>> = vec![vec![None; cols]; rows];
    for ((r, c), path) in cells {
        grid[r][c] = Some(read_trace(&path)?);
    }
    grid.into_iter()
        .enumerate()
        .map(|(r, row)| {
            row.into_iter()
                .enumerate()
                .map(|(c, t)| t.ok_or_else(|| usage(format!("grid is missing cell_{r}_{c}.emt"))))
                .collect()
        })
        .collect()
}

pub fn heatmap(grid: &Path, freq_hz: f64, bw_hz: f64, svg_out: &Path) -> CliResult<HeatmapOutput> {
    if !(freq_hz.is_finite() && freq_hz > 0.0 && bw_hz.is_finite() && bw_hz > 0.0) {
        return Err(usage("--freq and --bw must be positive"));
    }
    let traces = load_grid(grid)?;
    let power = band_heatmap(&traces, freq_hz, bw_hz).data("band power")?;
    let mut ranked: Vec<(usize, usize, f64)> = power
        .iter()
        .enumerate()
        .flat_map(|(r, row)| row.iter().enumerate().map(move |(c, &p)| (r, c, p)))
        .collect();
    ranked.sort_by(|a, b| b.2.total_cmp(&a.2));
    let title = format!("band power at {freq_hz:.4e} Hz, bandwidth {bw_hz:.4e} Hz");
    write_atomic(svg_out, heatmap_svg(&power, &title).as_bytes())?;
    Ok(HeatmapOutput { power, ranked })
}

/// Plots a trace, or its envelope when `window` is given. Boundary indices
/// refer to the plotted samples.
pub fn plot(
    trace: &Path,
    svg_out: &Path,
    boundaries: Option<&Path>,
    window: Option<usize>,
) -> CliResult<String> {
    if window == Some(0) {
        return Err(usage("--window must be positive"));
    }
    let t = read_trace(trace)?;
    let marks = match boundaries {
        Some(p) => {
            let text = fs::read_to_string(p).data(format!("reading {}", p.display()))?;
            boundaries_from_json(&text).data("parsing boundaries")?
        }
        None => Vec::new(),
    };
    let (samples, x_label) = match window {
        Some(w) => {
            let pre = PreprocessConfig {
                window: w,
                normalize: Normalization::None,
                ..PreprocessConfig::default()
            };
            let env = pre.envelope(&t).data("envelope")?;
            (env.into_samples(), format!("envelope sample (window {w})"))
        }
        None => (t.into_samples(), "sample".to_string()),
    };
    let style = PlotStyle {
        x_label,
        boundaries: marks.iter().map(|b| b.index).collect(),
        ..PlotStyle::default()
    };
    let svg = trace_svg(&samples, &style);
    write_atomic(svg_out, svg.as_bytes())?;
    Ok(svg)
}
