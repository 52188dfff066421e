//! Minimal f64 neural-network engine for the trace classifier.

pub mod gradcheck;
pub mod layers;
pub mod model;
pub mod tensor;
pub mod train;

use thiserror::Error;

pub use layers::{
    conv1d_backward, conv1d_forward, dense_backward, dense_forward, dropout_backward,
    dropout_forward, maxpool1d_backward, maxpool1d_forward, relu_backward, relu_forward, softmax,
    softmax_cross_entropy, softmax_cross_entropy_batch, ConvGrads, DenseGrads,
};
pub use model::{
    build_classifier, gradient_check, predict, relative_error, Activation, ClassifierSpec,
    FeatureShape, LayerConfig, Model, CLASSIFIER_MIN_INPUT_LEN,
};
pub use tensor::Tensor;
pub use train::{
    evaluate_set, train, EarlyStopMetric, EpochStats, History, LabeledSet, Optimizer, TrainConfig,
};

#[derive(Debug, Error)]
pub enum NnError {
    #[error("shape {shape:?} does not hold {len} values")]
    ShapeData { shape: Vec<usize>, len: usize },
    #[error("tensor dimensions must be positive, got {0:?}")]
    ZeroDim(Vec<usize>),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("input length {len} too short for the layer stack (minimum {min})")]
    InputTooShort { len: usize, min: usize },
    #[error("sequence length {len} shorter than kernel {kernel}")]
    KernelTooLong { len: usize, kernel: usize },
    #[error("invalid classifier spec: {0}")]
    Spec(String),
    #[error("label {label} out of range for {classes} classes")]
    Label { label: usize, classes: usize },
    #[error("{0} split is empty")]
    EmptySplit(&'static str),
    #[error("invalid training configuration: {0}")]
    Config(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("i/o error")]
    Io(#[from] std::io::Error),
}
