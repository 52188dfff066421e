//! Synthetic GPU-inference EM traces from architecture descriptors.

pub mod arch;
pub mod em;
pub mod zoo;

use thiserror::Error;

pub use arch::{
    count_macs, count_params, load_corpus, prefix_descriptor, ArchitectureDescriptor, LayerKind,
    LayerSpec, Padding, Shape,
};
pub use em::{
    dataset_skeleton, plan_dataset, simulate_dataset, simulate_dataset_with, simulate_trace,
    timeline, EmModel, KernelSpan, Protocol, SimConfig, TracePlan,
};

#[derive(Debug, Error)]
pub enum SimError {
    #[error("architecture {0:?} has no layers")]
    NoLayers(String),
    #[error("layer {layer:?}: {msg}")]
    InvalidLayer { layer: String, msg: String },
    #[error(
        "{arch}: layer {layer:?} expects input {got:?} but the timeline provides {expected:?}"
    )]
    ShapeMismatch {
        arch: String,
        layer: String,
        expected: Shape,
        got: Shape,
    },
    #[error("{arch}: computed {computed} parameters, declared {declared}")]
    ParamMismatch {
        arch: String,
        computed: u64,
        declared: u64,
    },
    #[error("prefix length {k} outside 1..={layers}")]
    BadPrefix { k: usize, layers: usize },
    #[error("duplicate architecture name {0:?}")]
    DuplicateArch(String),
    #[error("descriptor error: {0}")]
    Descriptor(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("i/o error")]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Trace(#[from] crate::trace::TraceError),
}
