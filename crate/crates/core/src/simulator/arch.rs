//! Layer specifications, architecture descriptors and their cost model.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::SimError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LayerKind {
    Conv2d,
    Dwconv2d,
    Pwconv2d,
    Dense,
    Maxpool,
    Avgpool,
    GlobalPool,
    Relu,
    Swish,
    Softmax,
    Batchnorm,
    SeBlock,
    Add,
    Concat,
}

impl LayerKind {
    pub const ALL: [LayerKind; 14] = [
        LayerKind::Conv2d,
        LayerKind::Dwconv2d,
        LayerKind::Pwconv2d,
        LayerKind::Dense,
        LayerKind::Maxpool,
        LayerKind::Avgpool,
        LayerKind::GlobalPool,
        LayerKind::Relu,
        LayerKind::Swish,
        LayerKind::Softmax,
        LayerKind::Batchnorm,
        LayerKind::SeBlock,
        LayerKind::Add,
        LayerKind::Concat,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            LayerKind::Conv2d => "conv2d",
            LayerKind::Dwconv2d => "dwconv2d",
            LayerKind::Pwconv2d => "pwconv2d",
            LayerKind::Dense => "dense",
            LayerKind::Maxpool => "maxpool",
            LayerKind::Avgpool => "avgpool",
            LayerKind::GlobalPool => "global_pool",
            LayerKind::Relu => "relu",
            LayerKind::Swish => "swish",
            LayerKind::Softmax => "softmax",
            LayerKind::Batchnorm => "batchnorm",
            LayerKind::SeBlock => "se_block",
            LayerKind::Add => "add",
            LayerKind::Concat => "concat",
        }
    }
}

impl fmt::Display for LayerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Padding {
    #[default]
    Same,
    Valid,
}

/// (H, W, C)
pub type Shape = [u64; 3];

fn default_stride() -> [u64; 2] {
    [1, 1]
}

fn default_true() -> bool {
    true
}

fn is_default_stride(s: &[u64; 2]) -> bool {
    *s == [1, 1]
}

fn is_true(b: &bool) -> bool {
    *b
}

fn is_same(p: &Padding) -> bool {
    *p == Padding::Same
}

/// One kernel-timeline entry.
///
/// `out_channels` is the filter count for conv and dense kinds, the squeeze
/// width for `se_block` and the total output channel count for `concat`.
/// `kernel` is the spatial window for conv and pooling kinds.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub name: String,
    pub kind: LayerKind,
    pub in_shape: Shape,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out_channels: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kernel: Option<[u64; 2]>,
    #[serde(default = "default_stride", skip_serializing_if = "is_default_stride")]
    pub stride: [u64; 2],
    #[serde(default, skip_serializing_if = "is_same")]
    pub padding: Padding,
    #[serde(default = "default_true", skip_serializing_if = "is_true")]
    pub bias: bool,
}

impl LayerSpec {
    pub fn new(name: impl Into<String>, kind: LayerKind, in_shape: Shape) -> Self {
        Self {
            name: name.into(),
            kind,
            in_shape,
            out_channels: None,
            kernel: None,
            stride: [1, 1],
            padding: Padding::Same,
            bias: true,
        }
    }

    pub fn with_out(mut self, c: u64) -> Self {
        self.out_channels = Some(c);
        self
    }

    pub fn with_kernel(mut self, k: u64) -> Self {
        self.kernel = Some([k, k]);
        self
    }

    pub fn with_stride(mut self, s: u64) -> Self {
        self.stride = [s, s];
        self
    }

    pub fn with_padding(mut self, p: Padding) -> Self {
        self.padding = p;
        self
    }

    pub fn with_bias(mut self, bias: bool) -> Self {
        self.bias = bias;
        self
    }

    fn err(&self, msg: impl Into<String>) -> SimError {
        SimError::InvalidLayer {
            layer: self.name.clone(),
            msg: msg.into(),
        }
    }

    fn required_out(&self) -> Result<u64, SimError> {
        match self.out_channels {
            Some(c) if c > 0 => Ok(c),
            _ => Err(self.err(format!("{} requires out_channels > 0", self.kind))),
        }
    }

    fn window(&self) -> Result<[u64; 2], SimError> {
        match self.kernel {
            Some([kh, kw]) if kh > 0 && kw > 0 => Ok([kh, kw]),
            _ => Err(self.err(format!("{} requires a positive kernel", self.kind))),
        }
    }

    fn spatial_out(&self) -> Result<[u64; 2], SimError> {
        let [h, w, _] = self.in_shape;
        let [sh, sw] = self.stride;
        if sh == 0 || sw == 0 {
            return Err(self.err("stride must be positive"));
        }
        let [kh, kw] = self.window()?;
        match self.padding {
            Padding::Same => Ok([h.div_ceil(sh), w.div_ceil(sw)]),
            Padding::Valid => {
                if kh > h || kw > w {
                    return Err(self.err("kernel larger than unpadded input"));
                }
                Ok([(h - kh) / sh + 1, (w - kw) / sw + 1])
            }
        }
    }

    /// Output (H, W, C) of this layer.
    pub fn out_shape(&self) -> Result<Shape, SimError> {
        let [h, w, c] = self.in_shape;
        if h == 0 || w == 0 || c == 0 {
            return Err(self.err("input shape must be positive"));
        }
        Ok(match self.kind {
            LayerKind::Conv2d => {
                let [ho, wo] = self.spatial_out()?;
                [ho, wo, self.required_out()?]
            }
            LayerKind::Pwconv2d => {
                if self.kernel.is_some_and(|k| k != [1, 1]) {
                    return Err(self.err("pwconv2d kernel must be 1x1"));
                }
                let [sh, sw] = self.stride;
                if sh == 0 || sw == 0 {
                    return Err(self.err("stride must be positive"));
                }
                [h.div_ceil(sh), w.div_ceil(sw), self.required_out()?]
            }
            LayerKind::Dwconv2d | LayerKind::Maxpool | LayerKind::Avgpool => {
                let [ho, wo] = self.spatial_out()?;
                [ho, wo, c]
            }
            LayerKind::Dense => [1, 1, self.required_out()?],
            LayerKind::GlobalPool => [1, 1, c],
            LayerKind::SeBlock => {
                self.required_out()?;
                [h, w, c]
            }
            LayerKind::Concat => {
                let total = self.required_out()?;
                if total < c {
                    return Err(self.err("concat output has fewer channels than its input"));
                }
                [h, w, total]
            }
            LayerKind::Relu
            | LayerKind::Swish
            | LayerKind::Softmax
            | LayerKind::Batchnorm
            | LayerKind::Add => [h, w, c],
        })
    }

    /// Multiply-accumulate count of this layer.
    pub fn macs(&self) -> Result<u64, SimError> {
        let [h, w, c] = self.in_shape;
        let out = self.out_shape()?;
        let [ho, wo, co] = out;
        let out_elems = ho * wo * co;
        Ok(match self.kind {
            LayerKind::Conv2d => {
                let [kh, kw] = self.window()?;
                ho * wo * co * kh * kw * c
            }
            LayerKind::Dwconv2d => {
                let [kh, kw] = self.window()?;
                ho * wo * c * kh * kw
            }
            LayerKind::Pwconv2d => ho * wo * co * c,
            LayerKind::Dense => h * w * c * co,
            LayerKind::Maxpool | LayerKind::Avgpool => {
                let [kh, kw] = self.window()?;
                out_elems * kh * kw
            }
            LayerKind::GlobalPool => c * h * w,
            // squeeze pooling + two pointwise layers + channel rescale
            LayerKind::SeBlock => 2 * h * w * c + 2 * c * self.required_out()?,
            LayerKind::Relu
            | LayerKind::Swish
            | LayerKind::Softmax
            | LayerKind::Batchnorm
            | LayerKind::Add
            | LayerKind::Concat => out_elems,
        })
    }

    /// Trainable weight count; batch norm counts scale and offset only.
    pub fn params(&self) -> Result<u64, SimError> {
        let [h, w, c] = self.in_shape;
        let bias = |n: u64| if self.bias { n } else { 0 };
        Ok(match self.kind {
            LayerKind::Conv2d => {
                let [kh, kw] = self.window()?;
                let co = self.required_out()?;
                kh * kw * c * co + bias(co)
            }
            LayerKind::Pwconv2d => {
                let co = self.required_out()?;
                c * co + bias(co)
            }
            LayerKind::Dwconv2d => {
                let [kh, kw] = self.window()?;
                kh * kw * c + bias(c)
            }
            LayerKind::Dense => {
                let co = self.required_out()?;
                h * w * c * co + bias(co)
            }
            LayerKind::Batchnorm => 2 * c,
            LayerKind::SeBlock => {
                let se = self.required_out()?;
                c * se + se + se * c + c
            }
            LayerKind::Maxpool
            | LayerKind::Avgpool
            | LayerKind::GlobalPool
            | LayerKind::Relu
            | LayerKind::Swish
            | LayerKind::Softmax
            | LayerKind::Add
            | LayerKind::Concat => 0,
        })
    }
}

/// Multiply-accumulate count of one layer.
pub fn count_macs(layer: &LayerSpec) -> Result<u64, SimError> {
    layer.macs()
}

fn default_input_shape() -> Shape {
    super::zoo::DEFAULT_INPUT
}

/// Serial kernel timeline of one network. Branches are flattened in
/// topological order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArchitectureDescriptor {
    pub name: String,
    #[serde(default = "default_input_shape")]
    pub input_shape: Shape,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub declared_params: Option<u64>,
    pub layers: Vec<LayerSpec>,
}

/// Relative tolerance between computed and declared parameter counts.
pub const PARAM_TOLERANCE: f64 = 0.05;

impl ArchitectureDescriptor {
    /// Checks that each layer consumes a tensor that already exists in the
    /// flattened timeline: the previous layer's output, or for branch
    /// entries any earlier tensor including the network input.
    pub fn validate(&self) -> Result<(), SimError> {
        if self.layers.is_empty() {
            return Err(SimError::NoLayers(self.name.clone()));
        }
        let mut available = vec![self.input_shape];
        let mut prev = self.input_shape;
        for layer in &self.layers {
            if layer.in_shape != prev && !available.contains(&layer.in_shape) {
                return Err(SimError::ShapeMismatch {
                    arch: self.name.clone(),
                    layer: layer.name.clone(),
                    expected: prev,
                    got: layer.in_shape,
                });
            }
            let out = layer.out_shape()?;
            if !available.contains(&out) {
                available.push(out);
            }
            prev = out;
        }
        Ok(())
    }

    pub fn output_shape(&self) -> Result<Shape, SimError> {
        self.layers
            .last()
            .ok_or_else(|| SimError::NoLayers(self.name.clone()))?
            .out_shape()
    }

    pub fn total_macs(&self) -> Result<u64, SimError> {
        self.layers.iter().map(LayerSpec::macs).sum()
    }

    pub fn layer_macs(&self) -> Result<Vec<u64>, SimError> {
        self.layers.iter().map(LayerSpec::macs).collect()
    }

    pub fn kind_histogram(&self) -> BTreeMap<LayerKind, usize> {
        let mut h = BTreeMap::new();
        for l in &self.layers {
            *h.entry(l.kind).or_default() += 1;
        }
        h
    }

    /// Verifies the computed parameter count against `declared_params`.
    pub fn check_declared_params(&self) -> Result<(), SimError> {
        if let Some(declared) = self.declared_params {
            let computed = count_params(self)?;
            let rel = (computed as f64 - declared as f64).abs() / declared as f64;
            if rel > PARAM_TOLERANCE {
                return Err(SimError::ParamMismatch {
                    arch: self.name.clone(),
                    computed,
                    declared,
                });
            }
        }
        Ok(())
    }

    pub fn to_toml(&self) -> Result<String, SimError> {
        toml::to_string(self).map_err(|e| SimError::Descriptor(e.to_string()))
    }

    pub fn from_toml(text: &str) -> Result<Self, SimError> {
        toml::from_str(text).map_err(|e| SimError::Descriptor(e.to_string()))
    }
}

pub fn count_params(descriptor: &ArchitectureDescriptor) -> Result<u64, SimError> {
    descriptor.layers.iter().map(LayerSpec::params).sum()
}

/// First `k` layers of `descriptor`, renamed `<name>#prefix<k>`.
pub fn prefix_descriptor(
    descriptor: &ArchitectureDescriptor,
    k: usize,
) -> Result<ArchitectureDescriptor, SimError> {
    let l = descriptor.layers.len();
    if k == 0 || k > l {
        return Err(SimError::BadPrefix { k, layers: l });
    }
    Ok(ArchitectureDescriptor {
        name: format!("{}#prefix{k}", descriptor.name),
        input_shape: descriptor.input_shape,
        declared_params: None,
        layers: descriptor.layers[..k].to_vec(),
    })
}

/// Loads every `*.toml` descriptor in a directory (sorted by file name) or
/// a single descriptor file. Each descriptor is shape-checked and, when it
/// declares a parameter count, cross-checked against it.
pub fn load_corpus(path: &Path) -> Result<Vec<ArchitectureDescriptor>, SimError> {
    let mut files = Vec::new();
    if path.is_dir() {
        for entry in fs::read_dir(path)? {
            let p = entry?.path();
            if p.extension().is_some_and(|e| e == "toml") {
                files.push(p);
            }
        }
        files.sort();
    } else {
        files.push(path.to_path_buf());
    }
    let mut corpus: Vec<ArchitectureDescriptor> = Vec::with_capacity(files.len());
    for f in files {
        let d = ArchitectureDescriptor::from_toml(&fs::read_to_string(&f)?)
            .map_err(|e| SimError::Descriptor(format!("{}: {e}", f.display())))?;
        d.validate()?;
        d.check_declared_params()?;
        if corpus.iter().any(|c| c.name == d.name) {
            return Err(SimError::DuplicateArch(d.name));
        }
        corpus.push(d);
    }
    if corpus.is_empty() {
        return Err(SimError::Descriptor(format!(
            "no descriptors found at {}",
            path.display()
        )));
    }
    Ok(corpus)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mac_formulas() {
        let conv = LayerSpec::new("c", LayerKind::Conv2d, [32, 32, 3])
            .with_out(32)
            .with_kernel(3);
        assert_eq!(count_macs(&conv).unwrap(), 884_736);
        let dw = LayerSpec::new("d", LayerKind::Dwconv2d, [16, 16, 64]).with_kernel(3);
        assert_eq!(count_macs(&dw).unwrap(), 147_456);
        let dense = LayerSpec::new("f", LayerKind::Dense, [1, 1, 1024]).with_out(15);
        assert_eq!(count_macs(&dense).unwrap(), 15_360);
        let pw = LayerSpec::new("p", LayerKind::Pwconv2d, [8, 8, 16]).with_out(32);
        assert_eq!(count_macs(&pw).unwrap(), 8 * 8 * 32 * 16);
        let relu = LayerSpec::new("r", LayerKind::Relu, [4, 4, 8]);
        assert_eq!(count_macs(&relu).unwrap(), 128);
        let pool = LayerSpec::new("m", LayerKind::Maxpool, [8, 8, 4])
            .with_kernel(2)
            .with_stride(2);
        assert_eq!(count_macs(&pool).unwrap(), 4 * 4 * 4 * 4);
        let gp = LayerSpec::new("g", LayerKind::GlobalPool, [7, 7, 10]);
        assert_eq!(count_macs(&gp).unwrap(), 490);
    }

    #[test]
    fn param_formulas() {
        let dense = LayerSpec::new("f", LayerKind::Dense, [1, 1, 100]).with_out(32);
        assert_eq!(dense.params().unwrap(), 3_232);
        let conv = LayerSpec::new("c", LayerKind::Conv2d, [32, 32, 3])
            .with_out(32)
            .with_kernel(3)
            .with_bias(false);
        assert_eq!(conv.params().unwrap(), 864);
        let bn = LayerSpec::new("b", LayerKind::Batchnorm, [4, 4, 32]);
        assert_eq!(bn.params().unwrap(), 64);
        let se = LayerSpec::new("s", LayerKind::SeBlock, [4, 4, 96]).with_out(4);
        assert_eq!(se.params().unwrap(), 96 * 4 + 4 + 4 * 96 + 96);
        let dw = LayerSpec::new("d", LayerKind::Dwconv2d, [4, 4, 8])
            .with_kernel(5)
            .with_bias(false);
        assert_eq!(dw.params().unwrap(), 200);
    }

    #[test]
    fn shapes() {
        let c = LayerSpec::new("c", LayerKind::Conv2d, [15, 15, 3])
            .with_out(8)
            .with_kernel(3)
            .with_stride(2);
        assert_eq!(c.out_shape().unwrap(), [8, 8, 8]);
        let v = c.clone().with_padding(Padding::Valid);
        assert_eq!(v.out_shape().unwrap(), [7, 7, 8]);
        let missing = LayerSpec::new("c", LayerKind::Conv2d, [4, 4, 3]).with_kernel(3);
        assert!(missing.out_shape().is_err());
        let cat = LayerSpec::new("cat", LayerKind::Concat, [4, 4, 8]).with_out(4);
        assert!(cat.out_shape().is_err());
    }

    fn mlp() -> ArchitectureDescriptor {
        ArchitectureDescriptor {
            name: "mlp".into(),
            input_shape: [1, 1, 100],
            declared_params: None,
            layers: vec![
                LayerSpec::new("fc1", LayerKind::Dense, [1, 1, 100]).with_out(32),
                LayerSpec::new("relu1", LayerKind::Relu, [1, 1, 32]),
                LayerSpec::new("fc2", LayerKind::Dense, [1, 1, 32]).with_out(32),
                LayerSpec::new("relu2", LayerKind::Relu, [1, 1, 32]),
            ],
        }
    }

    #[test]
    fn prefixes() {
        let d = mlp();
        d.validate().unwrap();
        let full = prefix_descriptor(&d, 4).unwrap();
        assert_eq!(full.layers, d.layers);
        assert_eq!(full.name, "mlp#prefix4");
        // 100*32 + 32 + 0 + 32*32 + 32 + 0
        assert_eq!(count_params(&full).unwrap(), 4_288);
        let one = prefix_descriptor(&d, 1).unwrap();
        assert_eq!(one.layers.len(), 1);
        assert!(prefix_descriptor(&d, 0).is_err());
        assert!(prefix_descriptor(&d, 5).is_err());
    }

    #[test]
    fn validation_catches_broken_chain() {
        let mut d = mlp();
        d.layers[2].in_shape = [1, 1, 33];
        assert!(matches!(d.validate(), Err(SimError::ShapeMismatch { .. })));
        let empty = ArchitectureDescriptor {
            layers: vec![],
            ..mlp()
        };
        assert!(matches!(empty.validate(), Err(SimError::NoLayers(_))));
    }

    #[test]
    fn branch_reentry_is_allowed() {
        let mut d = mlp();
        // relu on the network input after the first dense: a branch entry
        d.layers
            .insert(2, LayerSpec::new("side", LayerKind::Relu, [1, 1, 100]));
        d.layers[3].in_shape = [1, 1, 100];
        d.layers[3].out_channels = Some(32);
        d.validate().unwrap();
    }

    #[test]
    fn declared_params_check() {
        let mut d = mlp();
        d.declared_params = Some(4_324);
        d.check_declared_params().unwrap();
        d.declared_params = Some(5_000);
        assert!(matches!(
            d.check_declared_params(),
            Err(SimError::ParamMismatch { .. })
        ));
    }

    #[test]
    fn toml_roundtrip() {
        let d = mlp();
        let text = d.to_toml().unwrap();
        assert_eq!(ArchitectureDescriptor::from_toml(&text).unwrap(), d);
    }
}
