//! Trace and dataset containers, the EMT1 binary trace format and the
//! dataset manifest.
//!
//! EMT1 layout (all integers and floats little-endian):
//!
//! ```text
//! magic "EMT1" | version u16 = 1 | meta_count u16 | sample_rate_hz f64 | sample_count u64
//! | meta_count x (key_len u16, key bytes, val_len u16, val bytes)
//! | sample_count x f32
//! ```
//!
//! The fixed header is 24 bytes, so a trace without metadata occupies
//! `24 + 4 * N` bytes.

use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::io::{self, BufRead, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const EMT1_MAGIC: &[u8; 4] = b"EMT1";
pub const EMT1_VERSION: u16 = 1;
/// Size of the fixed EMT1 header preceding metadata entries.
pub const EMT1_HEADER_LEN: usize = 24;
/// Longest metadata key or value, in bytes, representable by a u16 length prefix.
pub const MAX_META_FIELD_LEN: usize = u16::MAX as usize;

#[derive(Debug, Error)]
pub enum TraceError {
    #[error("i/o error")]
    Io(#[from] io::Error),
    #[error("bad magic {0:?}, expected \"EMT1\"")]
    BadMagic([u8; 4]),
    #[error("unsupported EMT1 version {0}")]
    UnsupportedVersion(u16),
    #[error("truncated payload")]
    Truncated,
    #[error("non-finite sample at index {0}")]
    NonFiniteSample(usize),
    #[error("sample rate must be finite and positive, got {0}")]
    BadSampleRate(f64),
    #[error("trace has no samples")]
    Empty,
    #[error("metadata field of {0} bytes exceeds the 64 KiB limit")]
    MetaTooLong(usize),
    #[error("too many metadata entries ({0})")]
    TooManyMetaEntries(usize),
    #[error("metadata is not valid UTF-8")]
    MetaNotUtf8,
    #[error("parse error on line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("manifest error: {0}")]
    Manifest(String),
    #[error("missing trace file {0}")]
    MissingTraceFile(PathBuf),
    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },
    #[error("duplicate trace id {0:?}")]
    DuplicateId(String),
    #[error("duplicate class name {0:?}")]
    DuplicateClass(String),
}

/// One EM measurement.
#[derive(Debug, Clone, PartialEq)]
pub struct Trace {
    samples: Vec<f32>,
    sample_rate_hz: f64,
    pub meta: BTreeMap<String, String>,
}

impl Trace {
    pub fn new(samples: Vec<f32>, sample_rate_hz: f64) -> Result<Self, TraceError> {
        Self::with_meta(samples, sample_rate_hz, BTreeMap::new())
    }

    pub fn with_meta(
        samples: Vec<f32>,
        sample_rate_hz: f64,
        meta: BTreeMap<String, String>,
    ) -> Result<Self, TraceError> {
        if samples.is_empty() {
            return Err(TraceError::Empty);
        }
        if !(sample_rate_hz.is_finite() && sample_rate_hz > 0.0) {
            return Err(TraceError::BadSampleRate(sample_rate_hz));
        }
        if let Some(i) = samples.iter().position(|s| !s.is_finite()) {
            return Err(TraceError::NonFiniteSample(i));
        }
        Ok(Self {
            samples,
            sample_rate_hz,
            meta,
        })
    }

    pub fn samples(&self) -> &[f32] {
        &self.samples
    }

    pub fn into_samples(self) -> Vec<f32> {
        self.samples
    }

    pub fn sample_rate_hz(&self) -> f64 {
        self.sample_rate_hz
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn meta_value(&self, key: &str) -> Option<&str> {
        self.meta.get(key).map(String::as_str)
    }

    /// Bit-exact equality, comparing samples as raw 32-bit patterns.
    pub fn bit_eq(&self, other: &Trace) -> bool {
        self.sample_rate_hz.to_bits() == other.sample_rate_hz.to_bits()
            && self.meta == other.meta
            && self.samples.len() == other.samples.len()
            && self
                .samples
                .iter()
                .zip(&other.samples)
                .all(|(a, b)| a.to_bits() == b.to_bits())
    }
}

/// Size in bytes of the EMT1 encoding of `trace`.
pub fn encoded_len(trace: &Trace) -> usize {
    let meta: usize = trace.meta.iter().map(|(k, v)| 4 + k.len() + v.len()).sum();
    EMT1_HEADER_LEN + meta + 4 * trace.len()
}

/// Writes `trace` as EMT1 and returns the number of bytes written.
pub fn write_trace<W: Write>(trace: &Trace, mut sink: W) -> Result<usize, TraceError> {
    if trace.meta.len() > u16::MAX as usize {
        return Err(TraceError::TooManyMetaEntries(trace.meta.len()));
    }
    for (k, v) in &trace.meta {
        for field in [k, v] {
            if field.len() > MAX_META_FIELD_LEN {
                return Err(TraceError::MetaTooLong(field.len()));
            }
        }
    }

    let mut header = Vec::with_capacity(EMT1_HEADER_LEN);
    header.extend_from_slice(EMT1_MAGIC);
    header.extend_from_slice(&EMT1_VERSION.to_le_bytes());
    header.extend_from_slice(&(trace.meta.len() as u16).to_le_bytes());
    header.extend_from_slice(&trace.sample_rate_hz.to_le_bytes());
    header.extend_from_slice(&(trace.len() as u64).to_le_bytes());
    for (k, v) in &trace.meta {
        header.extend_from_slice(&(k.len() as u16).to_le_bytes());
        header.extend_from_slice(k.as_bytes());
        header.extend_from_slice(&(v.len() as u16).to_le_bytes());
        header.extend_from_slice(v.as_bytes());
    }
    sink.write_all(&header)?;

    let mut buf = Vec::with_capacity(4 * 8192);
    for chunk in trace.samples.chunks(8192) {
        buf.clear();
        for s in chunk {
            buf.extend_from_slice(&s.to_le_bytes());
        }
        sink.write_all(&buf)?;
    }
    sink.flush()?;
    Ok(header.len() + 4 * trace.len())
}

fn read_exact_or_truncated<R: Read>(source: &mut R, buf: &mut [u8]) -> Result<(), TraceError> {
    source.read_exact(buf).map_err(|e| match e.kind() {
        io::ErrorKind::UnexpectedEof => TraceError::Truncated,
        _ => TraceError::Io(e),
    })
}

fn read_u16<R: Read>(source: &mut R) -> Result<u16, TraceError> {
    let mut b = [0u8; 2];
    read_exact_or_truncated(source, &mut b)?;
    Ok(u16::from_le_bytes(b))
}

fn read_string<R: Read>(source: &mut R) -> Result<String, TraceError> {
    let len = read_u16(source)? as usize;
    let mut b = vec![0u8; len];
    read_exact_or_truncated(source, &mut b)?;
    String::from_utf8(b).map_err(|_| TraceError::MetaNotUtf8)
}

/// Reads one EMT1 trace.
pub fn read_trace<R: Read>(mut source: R) -> Result<Trace, TraceError> {
    let mut magic = [0u8; 4];
    read_exact_or_truncated(&mut source, &mut magic)?;
    if &magic != EMT1_MAGIC {
        return Err(TraceError::BadMagic(magic));
    }
    let version = read_u16(&mut source)?;
    if version != EMT1_VERSION {
        return Err(TraceError::UnsupportedVersion(version));
    }
    let meta_count = read_u16(&mut source)?;
    let mut b8 = [0u8; 8];
    read_exact_or_truncated(&mut source, &mut b8)?;
    let sample_rate_hz = f64::from_le_bytes(b8);
    read_exact_or_truncated(&mut source, &mut b8)?;
    let sample_count = u64::from_le_bytes(b8) as usize;

    let mut meta = BTreeMap::new();
    for _ in 0..meta_count {
        let k = read_string(&mut source)?;
        let v = read_string(&mut source)?;
        meta.insert(k, v);
    }

    // Grow incrementally so a corrupt count cannot trigger a huge allocation.
    let mut samples = Vec::with_capacity(sample_count.min(1 << 20));
    let mut buf = vec![0u8; 4 * 8192];
    let mut remaining = sample_count;
    while remaining > 0 {
        let n = remaining.min(8192);
        read_exact_or_truncated(&mut source, &mut buf[..4 * n])?;
        samples.extend(
            buf[..4 * n]
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])),
        );
        remaining -= n;
    }
    Trace::with_meta(samples, sample_rate_hz, meta)
}

pub fn save_trace(trace: &Trace, path: &Path) -> Result<usize, TraceError> {
    let f = fs::File::create(path)?;
    write_trace(trace, BufWriter::new(f))
}

pub fn load_trace(path: &Path) -> Result<Trace, TraceError> {
    let f = fs::File::open(path)?;
    read_trace(BufReader::new(f))
}

/// Parses an oscilloscope CSV export with one value per line and an
/// optional single header line.
pub fn import_csv<R: Read>(text: R, sample_rate_hz: f64) -> Result<Trace, TraceError> {
    let reader = BufReader::new(text);
    let mut samples = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        let field = line.trim();
        if field.is_empty() {
            continue;
        }
        match field.parse::<f32>() {
            Ok(v) if v.is_finite() => samples.push(v),
            Ok(_) => {
                return Err(TraceError::Parse {
                    line: i + 1,
                    msg: format!("non-finite value {field:?}"),
                })
            }
            Err(_) if i == 0 => {}
            Err(_) => {
                return Err(TraceError::Parse {
                    line: i + 1,
                    msg: format!("not a number: {field:?}"),
                })
            }
        }
    }
    if samples.is_empty() {
        return Err(TraceError::Empty);
    }
    Trace::new(samples, sample_rate_hz)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl std::fmt::Display for Split {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledTrace {
    pub id: String,
    pub trace: Trace,
    pub label: usize,
    pub split: Split,
}

/// A labeled trace collection. Every entry carries exactly one split tag.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Dataset {
    pub class_names: Vec<String>,
    pub entries: Vec<LabeledTrace>,
    /// Free-form provenance (protocol counts, seeds).
    pub attrs: BTreeMap<String, String>,
}

impl Dataset {
    pub fn num_classes(&self) -> usize {
        self.class_names.len()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn split(&self, split: Split) -> impl Iterator<Item = &LabeledTrace> {
        self.entries.iter().filter(move |e| e.split == split)
    }

    pub fn count(&self, split: Split) -> usize {
        self.split(split).count()
    }

    pub fn validate(&self) -> Result<(), TraceError> {
        let mut names = HashSet::new();
        for n in &self.class_names {
            if !names.insert(n) {
                return Err(TraceError::DuplicateClass(n.clone()));
            }
        }
        let mut ids = HashSet::new();
        for e in &self.entries {
            if e.label >= self.class_names.len() {
                return Err(TraceError::LabelOutOfRange {
                    label: e.label,
                    classes: self.class_names.len(),
                });
            }
            if !ids.insert(e.id.as_str()) {
                return Err(TraceError::DuplicateId(e.id.clone()));
            }
        }
        Ok(())
    }
}

pub const MANIFEST_FILE: &str = "manifest.toml";

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    class_names: Vec<String>,
    #[serde(default)]
    attrs: BTreeMap<String, String>,
    #[serde(default)]
    traces: Vec<ManifestRecord>,
}

/// One manifest row: where a trace lives and how it is labeled.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestRecord {
    pub id: String,
    /// Path relative to the manifest.
    pub file: String,
    pub label: usize,
    pub split: Split,
    #[serde(default)]
    pub meta: BTreeMap<String, String>,
}

impl ManifestRecord {
    pub fn for_trace(id: &str, label: usize, split: Split, trace: &Trace) -> Self {
        Self {
            id: id.to_string(),
            file: format!("traces/{id}.emt"),
            label,
            split,
            meta: trace.meta.clone(),
        }
    }
}

/// Writes `manifest.toml` under `dir` for traces already stored there.
/// Lets large datasets be written one trace at a time.
pub fn write_manifest(
    dir: &Path,
    class_names: &[String],
    attrs: &BTreeMap<String, String>,
    records: Vec<ManifestRecord>,
) -> Result<PathBuf, TraceError> {
    let manifest = Manifest {
        class_names: class_names.to_vec(),
        attrs: attrs.clone(),
        traces: records,
    };
    let text = toml::to_string(&manifest).map_err(|e| TraceError::Manifest(e.to_string()))?;
    let path = dir.join(MANIFEST_FILE);
    fs::write(&path, text)?;
    Ok(path)
}

/// Writes each trace as `traces/<id>.emt` under `dir` plus `manifest.toml`.
pub fn dataset_save(dataset: &Dataset, dir: &Path) -> Result<PathBuf, TraceError> {
    dataset.validate()?;
    fs::create_dir_all(dir.join("traces"))?;
    let mut records = Vec::with_capacity(dataset.len());
    for e in &dataset.entries {
        let rec = ManifestRecord::for_trace(&e.id, e.label, e.split, &e.trace);
        save_trace(&e.trace, &dir.join(&rec.file))?;
        records.push(rec);
    }
    write_manifest(dir, &dataset.class_names, &dataset.attrs, records)
}

/// Loads a dataset from a manifest file or from a directory containing
/// `manifest.toml`. Trace paths resolve relative to the manifest.
pub fn dataset_load(path: &Path) -> Result<Dataset, TraceError> {
    let manifest_path = if path.is_dir() {
        path.join(MANIFEST_FILE)
    } else {
        path.to_path_buf()
    };
    let base = manifest_path.parent().unwrap_or(Path::new("."));
    let text = fs::read_to_string(&manifest_path)?;
    let manifest: Manifest =
        toml::from_str(&text).map_err(|e| TraceError::Manifest(e.to_string()))?;

    let header_only = Dataset {
        class_names: manifest.class_names.clone(),
        entries: Vec::new(),
        attrs: manifest.attrs.clone(),
    };
    header_only.validate()?;

    let mut ids = HashSet::new();
    let mut entries = Vec::with_capacity(manifest.traces.len());
    for rec in manifest.traces {
        if rec.label >= manifest.class_names.len() {
            return Err(TraceError::LabelOutOfRange {
                label: rec.label,
                classes: manifest.class_names.len(),
            });
        }
        if !ids.insert(rec.id.clone()) {
            return Err(TraceError::DuplicateId(rec.id));
        }
        let file = base.join(&rec.file);
        if !file.is_file() {
            return Err(TraceError::MissingTraceFile(file));
        }
        let mut trace = load_trace(&file)?;
        // Manifest metadata takes precedence over what the file carries.
        trace.meta.extend(rec.meta);
        entries.push(LabeledTrace {
            id: rec.id,
            trace,
            label: rec.label,
            split: rec.split,
        });
    }
    let ds = Dataset {
        class_names: manifest.class_names,
        entries,
        attrs: manifest.attrs,
    };
    ds.validate()?;
    Ok(ds)
}
