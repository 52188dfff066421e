use std::io::{Read, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::layers::*;
use super::{NnError, Tensor};
use crate::dsp::PreprocessConfig;

/// Smallest input accepted by [`ClassifierSpec::standard`].
pub const CLASSIFIER_MIN_INPUT_LEN: usize = 19_950;

const CHECKPOINT_MAGIC: &[u8; 4] = b"EMCK";
const CHECKPOINT_VERSION: u32 = 1;
const PREDICT_CHUNK: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Linear,
    Relu,
    /// Only valid on the final dense layer; folded into the loss during training.
    Softmax,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum LayerConfig {
    Conv1d {
        filters: usize,
        kernel: usize,
        stride: usize,
        activation: Activation,
    },
    MaxPool1d {
        pool: usize,
        stride: usize,
    },
    Flatten,
    Dense {
        units: usize,
        activation: Activation,
    },
    Dropout {
        rate: f64,
    },
}

/// Per-sample feature shape between layers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum FeatureShape {
    Seq { len: usize, channels: usize },
    Flat(usize),
}

impl FeatureShape {
    pub fn size(&self) -> usize {
        match *self {
            FeatureShape::Seq { len, channels } => len * channels,
            FeatureShape::Flat(d) => d,
        }
    }
}

/// Ordered layer stack. Input is a single-channel sequence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassifierSpec {
    pub layers: Vec<LayerConfig>,
}

impl ClassifierSpec {
    pub fn standard(num_classes: usize) -> Self {
        use Activation::*;
        Self {
            layers: vec![
                LayerConfig::Conv1d {
                    filters: 32,
                    kernel: 500,
                    stride: 50,
                    activation: Relu,
                },
                LayerConfig::Conv1d {
                    filters: 32,
                    kernel: 300,
                    stride: 10,
                    activation: Relu,
                },
                LayerConfig::MaxPool1d {
                    pool: 10,
                    stride: 5,
                },
                LayerConfig::Flatten,
                LayerConfig::Dense {
                    units: 32,
                    activation: Relu,
                },
                LayerConfig::Dropout { rate: 0.2 },
                LayerConfig::Dense {
                    units: num_classes,
                    activation: Softmax,
                },
            ],
        }
    }

    pub fn num_classes(&self) -> usize {
        match self.layers.last() {
            Some(LayerConfig::Dense { units, .. }) => *units,
            _ => 0,
        }
    }

    /// Structural checks that do not depend on the input length.
    pub fn validate(&self) -> Result<(), NnError> {
        let err = |m: String| Err(NnError::Spec(m));
        let last = self.layers.len().checked_sub(1);
        match self.layers.last() {
            Some(LayerConfig::Dense {
                units,
                activation: Activation::Softmax,
            }) if *units >= 2 => {}
            Some(LayerConfig::Dense { units, .. }) if *units < 2 => {
                return err(format!("need at least 2 classes, got {units}"))
            }
            _ => return err("stack must end in a softmax dense layer".into()),
        }
        for (i, l) in self.layers.iter().enumerate() {
            match *l {
                LayerConfig::Conv1d {
                    filters,
                    kernel,
                    stride,
                    activation,
                } => {
                    if filters == 0 || kernel == 0 || stride == 0 {
                        return err(format!("layer {i}: conv sizes must be positive"));
                    }
                    if activation == Activation::Softmax {
                        return err(format!("layer {i}: softmax only allowed on the output"));
                    }
                }
                LayerConfig::MaxPool1d { pool, stride } => {
                    if pool == 0 || stride == 0 {
                        return err(format!("layer {i}: pool sizes must be positive"));
                    }
                }
                LayerConfig::Dense { units, activation } => {
                    if units == 0 {
                        return err(format!("layer {i}: dense units must be positive"));
                    }
                    if activation == Activation::Softmax && Some(i) != last {
                        return err(format!("layer {i}: softmax only allowed on the output"));
                    }
                }
                LayerConfig::Dropout { rate } => {
                    if !(0.0..1.0).contains(&rate) {
                        return err(format!("layer {i}: dropout rate {rate} outside [0, 1)"));
                    }
                }
                LayerConfig::Flatten => {}
            }
        }
        Ok(())
    }

    /// Chains the shape formulas. `Ok(None)` means the length is too short somewhere.
    fn try_shapes(&self, input_len: usize) -> Result<Option<Vec<FeatureShape>>, NnError> {
        let mut cur = FeatureShape::Seq {
            len: input_len,
            channels: 1,
        };
        let mut out = Vec::with_capacity(self.layers.len());
        for (i, l) in self.layers.iter().enumerate() {
            cur = match (*l, cur) {
                (
                    LayerConfig::Conv1d {
                        filters,
                        kernel,
                        stride,
                        ..
                    },
                    FeatureShape::Seq { len, .. },
                ) => {
                    if len < kernel {
                        return Ok(None);
                    }
                    FeatureShape::Seq {
                        len: (len - kernel) / stride + 1,
                        channels: filters,
                    }
                }
                (LayerConfig::MaxPool1d { pool, stride }, FeatureShape::Seq { len, channels }) => {
                    if len < pool {
                        return Ok(None);
                    }
                    FeatureShape::Seq {
                        len: (len - pool) / stride + 1,
                        channels,
                    }
                }
                (LayerConfig::Flatten, s) => FeatureShape::Flat(s.size()),
                (LayerConfig::Dense { units, .. }, FeatureShape::Flat(_)) => {
                    FeatureShape::Flat(units)
                }
                (LayerConfig::Dropout { .. }, s) => s,
                (l, s) => {
                    return Err(NnError::Spec(format!(
                        "layer {i} ({l:?}) cannot follow output shape {s:?}"
                    )))
                }
            };
            out.push(cur);
        }
        Ok(Some(out))
    }

    /// Smallest input length for which every layer has a positive output size.
    /// Valid lengths are upward closed, so a doubling + bisection search suffices.
    pub fn min_input_len(&self) -> Result<usize, NnError> {
        let ok = |n: usize| self.try_shapes(n).map(|s| s.is_some());
        if ok(1)? {
            return Ok(1);
        }
        let mut hi = 2usize;
        while !ok(hi)? {
            if hi > 1 << 48 {
                return Err(NnError::Spec("no input length satisfies the stack".into()));
            }
            hi *= 2;
        }
        let mut lo = hi / 2;
        while hi - lo > 1 {
            let mid = lo + (hi - lo) / 2;
            if ok(mid)? {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        Ok(hi)
    }

    /// Per-layer output shapes for `input_len`.
    pub fn output_shapes(&self, input_len: usize) -> Result<Vec<FeatureShape>, NnError> {
        self.validate()?;
        match self.try_shapes(input_len)? {
            Some(s) => Ok(s),
            None => Err(NnError::InputTooShort {
                len: input_len,
                min: self.min_input_len()?,
            }),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Op {
    Conv { p: usize, stride: usize },
    Relu,
    Pool { pool: usize, stride: usize },
    Flatten,
    Dense { p: usize },
    Dropout { rate: f64 },
}

enum Cache {
    Conv(Tensor),
    Relu(Tensor),
    Pool {
        argmax: Vec<usize>,
        shape: Vec<usize>,
    },
    Flatten(Vec<usize>),
    Dense(Tensor),
    Dropout(Option<Vec<f64>>),
}

/// A classifier instance: spec, weights and the labelling context it was trained in.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    spec: ClassifierSpec,
    input_len: usize,
    seed: u64,
    shapes: Vec<FeatureShape>,
    ops: Vec<Op>,
    params: Vec<Tensor>,
    pub class_names: Vec<String>,
    pub preprocess: Option<PreprocessConfig>,
}

#[derive(Serialize, Deserialize)]
struct CheckpointHeader {
    spec: ClassifierSpec,
    input_len: usize,
    num_classes: usize,
    seed: u64,
    class_names: Vec<String>,
    preprocess: Option<PreprocessConfig>,
    param_shapes: Vec<Vec<usize>>,
}

/// Table 2 classifier for `num_classes` outputs, He-uniform initialised from `seed`.
pub fn build_classifier(input_len: usize, num_classes: usize, seed: u64) -> Result<Model, NnError> {
    Model::new(ClassifierSpec::standard(num_classes), input_len, seed)
}

impl Model {
    pub fn new(spec: ClassifierSpec, input_len: usize, seed: u64) -> Result<Self, NnError> {
        let (shapes, ops, param_shapes) = Self::plan(&spec, input_len)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let params = param_shapes
            .into_iter()
            .map(|shape| {
                if shape.len() == 1 {
                    return Tensor::zeros(shape);
                }
                let fan_in: usize = shape[..shape.len() - 1].iter().product();
                let limit = (6.0 / fan_in as f64).sqrt();
                let n = shape.iter().product();
                let data = (0..n).map(|_| rng.gen_range(-limit..limit)).collect();
                Tensor::new(shape, data).expect("shape product matches")
            })
            .collect();
        let c = spec.num_classes();
        Ok(Self {
            spec,
            input_len,
            seed,
            shapes,
            ops,
            params,
            class_names: (0..c).map(|i| format!("class{i}")).collect(),
            preprocess: None,
        })
    }

    #[allow(clippy::type_complexity)]
    fn plan(
        spec: &ClassifierSpec,
        input_len: usize,
    ) -> Result<(Vec<FeatureShape>, Vec<Op>, Vec<Vec<usize>>), NnError> {
        let shapes = spec.output_shapes(input_len)?;
        let mut ops = Vec::new();
        let mut params = Vec::new();
        let mut prev = FeatureShape::Seq {
            len: input_len,
            channels: 1,
        };
        for (l, &shape) in spec.layers.iter().zip(&shapes) {
            match *l {
                LayerConfig::Conv1d {
                    filters,
                    kernel,
                    stride,
                    activation,
                } => {
                    let FeatureShape::Seq { channels, .. } = prev else {
                        unreachable!("validated by output_shapes")
                    };
                    ops.push(Op::Conv {
                        p: params.len(),
                        stride,
                    });
                    params.push(vec![kernel, channels, filters]);
                    params.push(vec![filters]);
                    if activation == Activation::Relu {
                        ops.push(Op::Relu);
                    }
                }
                LayerConfig::MaxPool1d { pool, stride } => ops.push(Op::Pool { pool, stride }),
                LayerConfig::Flatten => ops.push(Op::Flatten),
                LayerConfig::Dense { units, activation } => {
                    ops.push(Op::Dense { p: params.len() });
                    params.push(vec![prev.size(), units]);
                    params.push(vec![units]);
                    if activation == Activation::Relu {
                        ops.push(Op::Relu);
                    }
                }
                LayerConfig::Dropout { rate } => ops.push(Op::Dropout { rate }),
            }
            prev = shape;
        }
        Ok((shapes, ops, params))
    }

    pub fn spec(&self) -> &ClassifierSpec {
        &self.spec
    }

    pub fn input_len(&self) -> usize {
        self.input_len
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn num_classes(&self) -> usize {
        self.spec.num_classes()
    }

    /// Output shape of every configured layer.
    pub fn layer_shapes(&self) -> &[FeatureShape] {
        &self.shapes
    }

    pub fn params(&self) -> &[Tensor] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Tensor] {
        &mut self.params
    }

    pub fn param_count(&self) -> usize {
        self.params.iter().map(Tensor::len).sum()
    }

    /// One line per layer with its output shape.
    pub fn summary(&self) -> String {
        let mut s = format!("input: {} x 1\n", self.input_len);
        for (l, sh) in self.spec.layers.iter().zip(&self.shapes) {
            let shape = match sh {
                FeatureShape::Seq { len, channels } => format!("{len} x {channels}"),
                FeatureShape::Flat(d) => format!("{d}"),
            };
            s.push_str(&format!("{l:?} -> {shape}\n"));
        }
        s.push_str(&format!("parameters: {}\n", self.param_count()));
        s
    }

    pub(crate) fn batch_tensor(&self, flat: &[f64]) -> Result<Tensor, NnError> {
        if flat.is_empty() || !flat.len().is_multiple_of(self.input_len) {
            return Err(NnError::Shape(format!(
                "{} values is not a whole number of length-{} inputs",
                flat.len(),
                self.input_len
            )));
        }
        Tensor::new(
            vec![flat.len() / self.input_len, self.input_len, 1],
            flat.to_vec(),
        )
    }

    fn run<R: Rng + ?Sized>(
        &self,
        mut x: Tensor,
        training: bool,
        rng: &mut R,
        keep: bool,
    ) -> Result<(Tensor, Vec<Cache>), NnError> {
        let mut caches = Vec::with_capacity(if keep { self.ops.len() } else { 0 });
        for &op in &self.ops {
            let (y, cache) = match op {
                Op::Conv { p, stride } => {
                    let y = conv1d_forward(&x, &self.params[p], &self.params[p + 1], stride)?;
                    (y, Cache::Conv(x))
                }
                Op::Relu => (relu_forward(&x), Cache::Relu(x)),
                Op::Pool { pool, stride } => {
                    let (y, argmax) = maxpool1d_forward(&x, pool, stride)?;
                    let shape = x.shape().to_vec();
                    (y, Cache::Pool { argmax, shape })
                }
                Op::Flatten => {
                    let shape = x.shape().to_vec();
                    let n = shape[0];
                    let d = x.len() / n;
                    (x.reshape(vec![n, d])?, Cache::Flatten(shape))
                }
                Op::Dense { p } => {
                    let y = dense_forward(&x, &self.params[p], &self.params[p + 1])?;
                    (y, Cache::Dense(x))
                }
                Op::Dropout { rate } => {
                    let (y, mask) = dropout_forward(&x, rate, training, rng);
                    (y, Cache::Dropout(mask))
                }
            };
            if keep {
                caches.push(cache);
            }
            x = y;
        }
        Ok((x, caches))
    }

    /// Forward pass returning logits and the per-op caches for [`Model::backward`].
    fn forward_train<R: Rng + ?Sized>(
        &self,
        x: Tensor,
        training: bool,
        rng: &mut R,
    ) -> Result<(Tensor, Vec<Cache>), NnError> {
        self.run(x, training, rng, true)
    }

    /// Logits for a `[N, input_len, 1]` batch in inference mode.
    pub fn logits(&self, x: Tensor) -> Result<Tensor, NnError> {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        Ok(self.run(x, false, &mut rng, false)?.0)
    }

    fn backward(&self, caches: Vec<Cache>, grad_logits: Tensor) -> Result<Vec<Tensor>, NnError> {
        let mut grads: Vec<Option<Tensor>> = vec![None; self.params.len()];
        let mut g = grad_logits;
        for (i, (&op, cache)) in self.ops.iter().zip(caches).enumerate().rev() {
            g = match (op, cache) {
                (Op::Conv { p, stride }, Cache::Conv(x)) => {
                    let cg = conv1d_backward(&g, &x, &self.params[p], stride, i > 0)?;
                    grads[p] = Some(cg.grad_w);
                    grads[p + 1] = Some(cg.grad_b);
                    match cg.grad_x {
                        Some(gx) => gx,
                        None => break,
                    }
                }
                (Op::Relu, Cache::Relu(x)) => relu_backward(&g, &x)?,
                (Op::Pool { .. }, Cache::Pool { argmax, shape }) => {
                    maxpool1d_backward(&g, &argmax, &shape)?
                }
                (Op::Flatten, Cache::Flatten(shape)) => g.reshape(shape)?,
                (Op::Dense { p }, Cache::Dense(x)) => {
                    let dg = dense_backward(&g, &x, &self.params[p])?;
                    grads[p] = Some(dg.grad_w);
                    grads[p + 1] = Some(dg.grad_b);
                    dg.grad_x
                }
                (Op::Dropout { .. }, Cache::Dropout(mask)) => dropout_backward(&g, mask.as_deref()),
                _ => unreachable!("caches are produced in op order"),
            };
        }
        Ok(grads
            .into_iter()
            .zip(&self.params)
            .map(|(g, p)| g.unwrap_or_else(|| Tensor::zeros(p.shape().to_vec())))
            .collect())
    }

    /// Mean loss and parameter gradients over a batch.
    pub(crate) fn loss_and_grads<R: Rng + ?Sized>(
        &self,
        x: Tensor,
        labels: &[usize],
        training: bool,
        rng: &mut R,
    ) -> Result<(f64, Tensor, Vec<Tensor>), NnError> {
        let (logits, caches) = self.forward_train(x, training, rng)?;
        let (loss, grad) = softmax_cross_entropy_batch(&logits, labels)?;
        let grads = self.backward(caches, grad)?;
        Ok((loss, logits, grads))
    }

    /// Class probabilities for each length-`input_len` row of `flat`.
    pub fn predict_batch(&self, flat: &[f64]) -> Result<Vec<Vec<f64>>, NnError> {
        self.batch_tensor(flat)?;
        let chunks: Vec<&[f64]> = flat.chunks(PREDICT_CHUNK * self.input_len).collect();
        let parts: Result<Vec<Vec<Vec<f64>>>, NnError> = chunks
            .par_iter()
            .map(|c| {
                let logits = self.logits(self.batch_tensor(c)?)?;
                Ok(logits
                    .data()
                    .chunks(self.num_classes())
                    .map(softmax)
                    .collect())
            })
            .collect();
        Ok(parts?.into_iter().flatten().collect())
    }

    pub fn write_checkpoint<W: Write>(&self, mut w: W) -> Result<(), NnError> {
        let header = CheckpointHeader {
            spec: self.spec.clone(),
            input_len: self.input_len,
            num_classes: self.num_classes(),
            seed: self.seed,
            class_names: self.class_names.clone(),
            preprocess: self.preprocess.clone(),
            param_shapes: self.params.iter().map(|p| p.shape().to_vec()).collect(),
        };
        let json = serde_json::to_vec(&header).map_err(|e| NnError::Checkpoint(e.to_string()))?;
        w.write_all(CHECKPOINT_MAGIC)?;
        w.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
        w.write_all(&(json.len() as u64).to_le_bytes())?;
        w.write_all(&json)?;
        let mut buf = Vec::with_capacity(self.param_count() * 8);
        for p in &self.params {
            for v in p.data() {
                buf.extend_from_slice(&v.to_le_bytes());
            }
        }
        w.write_all(&buf)?;
        w.flush()?;
        Ok(())
    }

    pub fn read_checkpoint<R: Read>(mut r: R) -> Result<Self, NnError> {
        let bad = |m: &str| NnError::Checkpoint(m.to_string());
        let mut fixed = [0u8; 16];
        r.read_exact(&mut fixed)
            .map_err(|_| bad("truncated header"))?;
        if &fixed[..4] != CHECKPOINT_MAGIC {
            return Err(bad("bad magic"));
        }
        let version = u32::from_le_bytes(fixed[4..8].try_into().unwrap());
        if version != CHECKPOINT_VERSION {
            return Err(NnError::Checkpoint(format!(
                "unsupported version {version}"
            )));
        }
        let hlen = u64::from_le_bytes(fixed[8..16].try_into().unwrap());
        if hlen > 1 << 30 {
            return Err(bad("header length implausible"));
        }
        let mut json = vec![0u8; hlen as usize];
        r.read_exact(&mut json)
            .map_err(|_| bad("truncated header"))?;
        let h: CheckpointHeader =
            serde_json::from_slice(&json).map_err(|e| NnError::Checkpoint(e.to_string()))?;
        let mut model = Self::new(h.spec, h.input_len, h.seed)?;
        if model.num_classes() != h.num_classes
            || model
                .params
                .iter()
                .map(|p| p.shape().to_vec())
                .collect::<Vec<_>>()
                != h.param_shapes
        {
            return Err(bad("header shapes disagree with the layer spec"));
        }
        if h.class_names.len() != h.num_classes {
            return Err(bad("class name count differs from class count"));
        }
        for p in &mut model.params {
            let mut buf = vec![0u8; p.len() * 8];
            r.read_exact(&mut buf)
                .map_err(|_| bad("truncated weights"))?;
            for (dst, b) in p.data_mut().iter_mut().zip(buf.chunks_exact(8)) {
                *dst = f64::from_le_bytes(b.try_into().unwrap());
            }
        }
        let mut rest = [0u8; 1];
        if r.read(&mut rest)? != 0 {
            return Err(bad("trailing bytes after weights"));
        }
        model.class_names = h.class_names;
        model.preprocess = h.preprocess;
        Ok(model)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut v = Vec::new();
        self.write_checkpoint(&mut v)
            .expect("writing to a Vec cannot fail");
        v
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), NnError> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, NnError> {
        let bytes = std::fs::read(path)?;
        Self::read_checkpoint(&bytes[..])
    }
}

/// Probability vector for one input of length `model.input_len()`.
pub fn predict(model: &Model, x: &[f64]) -> Result<Vec<f64>, NnError> {
    if x.len() != model.input_len() {
        return Err(NnError::Shape(format!(
            "input length {} but the model expects {}",
            x.len(),
            model.input_len()
        )));
    }
    Ok(model.predict_batch(x)?.remove(0))
}

/// Relative error used by [`gradient_check`]: `|a - n| / max(|a|, |n|, 1e-5)`.
/// The denominator floor keeps near-zero gradients from turning central-difference
/// roundoff (about 1e-10 absolute at h = 1e-5) into a large ratio.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-5)
}

/// Compares backprop gradients of the cross-entropy loss against central differences
/// (h = 1e-5) for every parameter, in inference mode. Returns the worst relative error.
/// Intended for small models: cost is two forward passes per parameter.
pub fn gradient_check(model: &Model, x: &[f64], label: usize) -> Result<f64, NnError> {
    const H: f64 = 1e-5;
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let xt = model.batch_tensor(x)?;
    let (_, _, grads) = model.loss_and_grads(xt.clone(), &[label], false, &mut rng)?;
    let mut probe = model.clone();
    let loss = |m: &Model| -> Result<f64, NnError> {
        let logits = m.logits(xt.clone())?;
        Ok(softmax_cross_entropy(logits.data(), label)?.0)
    };
    let mut worst = 0.0f64;
    for (pi, g) in grads.iter().enumerate() {
        for j in 0..g.len() {
            let orig = probe.params[pi].data()[j];
            probe.params[pi].data_mut()[j] = orig + H;
            let up = loss(&probe)?;
            probe.params[pi].data_mut()[j] = orig - H;
            let down = loss(&probe)?;
            probe.params[pi].data_mut()[j] = orig;
            worst = worst.max(relative_error(g.data()[j], (up - down) / (2.0 * H)));
        }
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn brute_min(spec: &ClassifierSpec) -> usize {
        (1..)
            .find(|&n| spec.try_shapes(n).unwrap().is_some())
            .unwrap()
    }

    #[test]
    fn standard_minimum_length() {
        let spec = ClassifierSpec::standard(15);
        assert_eq!(brute_min(&spec), CLASSIFIER_MIN_INPUT_LEN);
        assert_eq!(spec.min_input_len().unwrap(), CLASSIFIER_MIN_INPUT_LEN);
        match build_classifier(16_000, 15, 0) {
            Err(NnError::InputTooShort { len, min }) => {
                assert_eq!((len, min), (16_000, CLASSIFIER_MIN_INPUT_LEN))
            }
            other => panic!("{other:?}"),
        }
        assert!(build_classifier(CLASSIFIER_MIN_INPUT_LEN, 15, 0).is_ok());
        assert!(build_classifier(CLASSIFIER_MIN_INPUT_LEN - 1, 15, 0).is_err());
    }

    #[test]
    fn standard_shapes() {
        let m = build_classifier(20_000, 15, 1).unwrap();
        assert_eq!(
            m.layer_shapes()[0],
            FeatureShape::Seq {
                len: 391,
                channels: 32
            }
        );
        assert_eq!(m.layer_shapes().last(), Some(&FeatureShape::Flat(15)));
        assert_eq!(m.num_classes(), 15);
        assert_eq!(m.params()[6].shape(), &[32, 15]);
    }

    #[test]
    fn spec_validation() {
        assert!(ClassifierSpec::standard(1).validate().is_err());
        let mut s = ClassifierSpec::standard(3);
        s.layers.swap(3, 4);
        assert!(matches!(s.output_shapes(30_000), Err(NnError::Spec(_))));
        let mut s = ClassifierSpec::standard(3);
        s.layers[5] = LayerConfig::Dropout { rate: 1.0 };
        assert!(s.validate().is_err());
    }

    #[test]
    fn same_seed_same_weights() {
        let a = build_classifier(20_000, 4, 9).unwrap();
        let b = build_classifier(20_000, 4, 9).unwrap();
        let c = build_classifier(20_000, 4, 10).unwrap();
        assert_eq!(a.params(), b.params());
        assert_ne!(a.params(), c.params());
    }

    #[test]
    fn checkpoint_roundtrip_bit_exact() {
        let mut m = build_classifier(20_000, 3, 5).unwrap();
        m.class_names = vec!["a".into(), "b".into(), "c".into()];
        m.preprocess = Some(PreprocessConfig::default());
        let bytes = m.to_bytes();
        let back = Model::read_checkpoint(&bytes[..]).unwrap();
        assert_eq!(back, m);
        for (p, q) in back.params().iter().zip(m.params()) {
            assert!(p
                .data()
                .iter()
                .zip(q.data())
                .all(|(a, b)| a.to_bits() == b.to_bits()));
        }
        assert_eq!(back.to_bytes(), bytes);
        assert!(Model::read_checkpoint(&bytes[..bytes.len() - 1]).is_err());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(Model::read_checkpoint(&bad[..]).is_err());
    }

    #[test]
    fn predict_is_distribution() {
        let m = build_classifier(20_000, 15, 2).unwrap();
        let p = predict(&m, &vec![0.0; 20_000]).unwrap();
        assert_eq!(p.len(), 15);
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-6);
        assert!(predict(&m, &[0.0; 10]).is_err());
    }

    #[test]
    fn small_model_gradient_check() {
        let spec = ClassifierSpec {
            layers: vec![
                LayerConfig::Conv1d {
                    filters: 3,
                    kernel: 4,
                    stride: 2,
                    activation: Activation::Relu,
                },
                LayerConfig::MaxPool1d { pool: 3, stride: 2 },
                LayerConfig::Flatten,
                LayerConfig::Dense {
                    units: 5,
                    activation: Activation::Relu,
                },
                LayerConfig::Dropout { rate: 0.5 },
                LayerConfig::Dense {
                    units: 3,
                    activation: Activation::Softmax,
                },
            ],
        };
        let m = Model::new(spec, 24, 3).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let x: Vec<f64> = (0..24).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let err = gradient_check(&m, &x, 1).unwrap();
        assert!(err < 1e-4, "{err}");
    }
}
