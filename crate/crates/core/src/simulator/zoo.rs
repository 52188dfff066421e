//! Block-level builders for the fifteen victim architectures.
//!
//! Layer structure follows the TensorFlow reference implementations with
//! default arguments (1000-class top, alpha = 1), minus their input
//! preprocessing layers. Batch norm, activation, residual add and concat
//! each become their own timeline entry; branches are emitted in
//! topological order.

use super::arch::{ArchitectureDescriptor, LayerKind, LayerSpec, Padding, Shape};

/// Input resolution of the shipped corpus. Parameter counts do not depend on
/// it; smaller inputs keep simulated traces short.
pub const DEFAULT_INPUT: Shape = [32, 32, 3];

/// Names and parameter counts (in millions) of the fifteen architectures.
pub const REFERENCE_PARAMS_M: [(&str, f64); 15] = [
    ("EfficientNetB0", 5.3),
    ("EfficientNetB1", 7.9),
    ("EfficientNetB2", 9.2),
    ("EfficientNetB3", 12.3),
    ("EfficientNetB4", 19.5),
    ("EfficientNetB5", 30.6),
    ("EfficientNetB6", 43.3),
    ("MobileNet", 4.3),
    ("MobileNetV2", 3.5),
    ("MobileNetV3small", 2.5),
    ("MobileNetV3large", 5.4),
    ("DenseNet121", 8.1),
    ("DenseNet169", 14.3),
    ("DenseNet201", 20.2),
    ("NASNetMobile", 5.3),
];

const CLASSES: u64 = 1000;

struct Net {
    name: String,
    input: Shape,
    cur: Shape,
    layers: Vec<LayerSpec>,
}

impl Net {
    fn new(name: &str, input: Shape) -> Self {
        Self {
            name: name.to_string(),
            input,
            cur: input,
            layers: Vec::new(),
        }
    }

    fn push(&mut self, spec: LayerSpec) -> Shape {
        self.cur = spec.out_shape().expect("zoo layer is well formed");
        self.layers.push(spec);
        self.cur
    }

    /// Continue from another tensor (branch entry).
    fn at(&mut self, shape: Shape) -> &mut Self {
        self.cur = shape;
        self
    }

    fn conv(&mut self, name: &str, out: u64, k: u64, stride: u64, bias: bool) -> Shape {
        let spec = if k == 1 {
            LayerSpec::new(name, LayerKind::Pwconv2d, self.cur).with_out(out)
        } else {
            LayerSpec::new(name, LayerKind::Conv2d, self.cur)
                .with_out(out)
                .with_kernel(k)
        };
        self.push(spec.with_stride(stride).with_bias(bias))
    }

    fn dw(&mut self, name: &str, k: u64, stride: u64) -> Shape {
        let spec = LayerSpec::new(name, LayerKind::Dwconv2d, self.cur)
            .with_kernel(k)
            .with_stride(stride)
            .with_bias(false);
        self.push(spec)
    }

    fn simple(&mut self, name: &str, kind: LayerKind) -> Shape {
        let spec = LayerSpec::new(name, kind, self.cur);
        self.push(spec)
    }

    fn bn(&mut self, name: &str) -> Shape {
        self.simple(name, LayerKind::Batchnorm)
    }

    fn relu(&mut self, name: &str) -> Shape {
        self.simple(name, LayerKind::Relu)
    }

    fn swish(&mut self, name: &str) -> Shape {
        self.simple(name, LayerKind::Swish)
    }

    fn act(&mut self, name: &str, swish: bool) -> Shape {
        if swish {
            self.swish(name)
        } else {
            self.relu(name)
        }
    }

    fn add(&mut self, name: &str) -> Shape {
        self.simple(name, LayerKind::Add)
    }

    fn concat(&mut self, name: &str, total: u64) -> Shape {
        let spec = LayerSpec::new(name, LayerKind::Concat, self.cur).with_out(total);
        self.push(spec)
    }

    fn se(&mut self, name: &str, squeeze: u64) -> Shape {
        let spec = LayerSpec::new(name, LayerKind::SeBlock, self.cur).with_out(squeeze);
        self.push(spec)
    }

    fn pool(&mut self, name: &str, kind: LayerKind, k: u64, stride: u64) -> Shape {
        let spec = LayerSpec::new(name, kind, self.cur)
            .with_kernel(k)
            .with_stride(stride);
        self.push(spec)
    }

    fn dense_softmax_top(&mut self) {
        self.simple("avg_pool", LayerKind::GlobalPool);
        let spec = LayerSpec::new("predictions", LayerKind::Dense, self.cur).with_out(CLASSES);
        self.push(spec);
        self.simple("predictions_softmax", LayerKind::Softmax);
    }

    fn finish(self, declared_m: f64) -> ArchitectureDescriptor {
        ArchitectureDescriptor {
            name: self.name,
            input_shape: self.input,
            declared_params: Some((declared_m * 1e6).round() as u64),
            layers: self.layers,
        }
    }
}

/// Rounds channel counts to a multiple of 8, never dropping below 90%.
fn make_divisible(v: f64) -> u64 {
    let divisor = 8u64;
    let mut new_v = divisor.max(((v + 4.0) as u64) / divisor * divisor);
    if (new_v as f64) < 0.9 * v {
        new_v += divisor;
    }
    new_v
}

fn declared(name: &str) -> f64 {
    REFERENCE_PARAMS_M
        .iter()
        .find(|(n, _)| *n == name)
        .map(|(_, p)| *p)
        .expect("known architecture")
}

pub fn mobilenet(input: Shape) -> ArchitectureDescriptor {
    let mut n = Net::new("MobileNet", input);
    n.conv("conv1", 32, 3, 2, false);
    n.bn("conv1_bn");
    n.relu("conv1_relu");
    let blocks: [(u64, u64); 13] = [
        (64, 1),
        (128, 2),
        (128, 1),
        (256, 2),
        (256, 1),
        (512, 2),
        (512, 1),
        (512, 1),
        (512, 1),
        (512, 1),
        (512, 1),
        (1024, 2),
        (1024, 1),
    ];
    for (i, (filters, stride)) in blocks.into_iter().enumerate() {
        let id = i + 1;
        n.dw(&format!("conv_dw_{id}"), 3, stride);
        n.bn(&format!("conv_dw_{id}_bn"));
        n.relu(&format!("conv_dw_{id}_relu"));
        n.conv(&format!("conv_pw_{id}"), filters, 1, 1, false);
        n.bn(&format!("conv_pw_{id}_bn"));
        n.relu(&format!("conv_pw_{id}_relu"));
    }
    n.simple("global_average_pooling", LayerKind::GlobalPool);
    n.conv("conv_preds", CLASSES, 1, 1, true);
    n.simple("predictions", LayerKind::Softmax);
    n.finish(declared("MobileNet"))
}

pub fn mobilenet_v2(input: Shape) -> ArchitectureDescriptor {
    let mut n = Net::new("MobileNetV2", input);
    n.conv("Conv1", 32, 3, 2, false);
    n.bn("bn_Conv1");
    n.relu("Conv1_relu");
    // (filters, stride, expansion)
    let blocks: [(u64, u64, u64); 17] = [
        (16, 1, 1),
        (24, 2, 6),
        (24, 1, 6),
        (32, 2, 6),
        (32, 1, 6),
        (32, 1, 6),
        (64, 2, 6),
        (64, 1, 6),
        (64, 1, 6),
        (64, 1, 6),
        (96, 1, 6),
        (96, 1, 6),
        (96, 1, 6),
        (160, 2, 6),
        (160, 1, 6),
        (160, 1, 6),
        (320, 1, 6),
    ];
    for (id, (filters, stride, expansion)) in blocks.into_iter().enumerate() {
        let in_c = n.cur[2];
        let out_c = make_divisible(filters as f64);
        let p = format!("block_{id}");
        if id > 0 {
            n.conv(&format!("{p}_expand"), expansion * in_c, 1, 1, false);
            n.bn(&format!("{p}_expand_BN"));
            n.relu(&format!("{p}_expand_relu"));
        }
        n.dw(&format!("{p}_depthwise"), 3, stride);
        n.bn(&format!("{p}_depthwise_BN"));
        n.relu(&format!("{p}_depthwise_relu"));
        n.conv(&format!("{p}_project"), out_c, 1, 1, false);
        n.bn(&format!("{p}_project_BN"));
        if in_c == out_c && stride == 1 {
            n.add(&format!("{p}_add"));
        }
    }
    n.conv("Conv_1", 1280, 1, 1, false);
    n.bn("Conv_1_bn");
    n.relu("out_relu");
    n.dense_softmax_top();
    n.finish(declared("MobileNetV2"))
}

#[derive(Clone, Copy)]
struct V3Block {
    expansion: f64,
    filters: u64,
    kernel: u64,
    stride: u64,
    se: bool,
    swish: bool,
}

const fn v3(
    expansion: f64,
    filters: u64,
    kernel: u64,
    stride: u64,
    se: bool,
    swish: bool,
) -> V3Block {
    V3Block {
        expansion,
        filters,
        kernel,
        stride,
        se,
        swish,
    }
}

fn mobilenet_v3(
    name: &str,
    input: Shape,
    blocks: &[V3Block],
    last_point_ch: u64,
) -> ArchitectureDescriptor {
    let mut n = Net::new(name, input);
    n.conv("conv", 16, 3, 2, false);
    n.bn("conv_bn");
    n.swish("conv_hard_swish");
    for (id, b) in blocks.iter().enumerate() {
        let in_c = n.cur[2];
        let p = format!("expanded_conv_{id}");
        let expanded = make_divisible(in_c as f64 * b.expansion);
        if id > 0 {
            n.conv(&format!("{p}_expand"), expanded, 1, 1, false);
            n.bn(&format!("{p}_expand_bn"));
            n.act(&format!("{p}_expand_act"), b.swish);
        }
        n.dw(&format!("{p}_depthwise"), b.kernel, b.stride);
        n.bn(&format!("{p}_depthwise_bn"));
        n.act(&format!("{p}_depthwise_act"), b.swish);
        if b.se {
            let c = n.cur[2];
            n.se(
                &format!("{p}_squeeze_excite"),
                make_divisible(c as f64 * 0.25),
            );
        }
        n.conv(&format!("{p}_project"), b.filters, 1, 1, false);
        n.bn(&format!("{p}_project_bn"));
        if b.stride == 1 && in_c == b.filters {
            n.add(&format!("{p}_add"));
        }
    }
    let last_conv = make_divisible(n.cur[2] as f64 * 6.0);
    n.conv("conv_1", last_conv, 1, 1, false);
    n.bn("conv_1_bn");
    n.swish("conv_1_hard_swish");
    n.simple("global_average_pooling", LayerKind::GlobalPool);
    n.conv("conv_2", last_point_ch, 1, 1, true);
    n.swish("conv_2_hard_swish");
    n.conv("logits", CLASSES, 1, 1, true);
    n.simple("predictions", LayerKind::Softmax);
    n.finish(declared(name))
}

pub fn mobilenet_v3_small(input: Shape) -> ArchitectureDescriptor {
    let blocks = [
        v3(1.0, 16, 3, 2, true, false),
        v3(72.0 / 16.0, 24, 3, 2, false, false),
        v3(88.0 / 24.0, 24, 3, 1, false, false),
        v3(4.0, 40, 5, 2, true, true),
        v3(6.0, 40, 5, 1, true, true),
        v3(6.0, 40, 5, 1, true, true),
        v3(3.0, 48, 5, 1, true, true),
        v3(3.0, 48, 5, 1, true, true),
        v3(6.0, 96, 5, 2, true, true),
        v3(6.0, 96, 5, 1, true, true),
        v3(6.0, 96, 5, 1, true, true),
    ];
    mobilenet_v3("MobileNetV3small", input, &blocks, 1024)
}

pub fn mobilenet_v3_large(input: Shape) -> ArchitectureDescriptor {
    let blocks = [
        v3(1.0, 16, 3, 1, false, false),
        v3(4.0, 24, 3, 2, false, false),
        v3(3.0, 24, 3, 1, false, false),
        v3(3.0, 40, 5, 2, true, false),
        v3(3.0, 40, 5, 1, true, false),
        v3(3.0, 40, 5, 1, true, false),
        v3(6.0, 80, 3, 2, false, true),
        v3(2.5, 80, 3, 1, false, true),
        v3(2.3, 80, 3, 1, false, true),
        v3(2.3, 80, 3, 1, false, true),
        v3(6.0, 112, 3, 1, true, true),
        v3(6.0, 112, 3, 1, true, true),
        v3(6.0, 160, 5, 2, true, true),
        v3(6.0, 160, 5, 1, true, true),
        v3(6.0, 160, 5, 1, true, true),
    ];
    mobilenet_v3("MobileNetV3large", input, &blocks, 1280)
}

/// (kernel, repeats, filters_in, filters_out, expand_ratio, stride)
const EFFICIENTNET_BLOCKS: [(u64, u64, u64, u64, u64, u64); 7] = [
    (3, 1, 32, 16, 1, 1),
    (3, 2, 16, 24, 6, 2),
    (5, 2, 24, 40, 6, 2),
    (3, 3, 40, 80, 6, 2),
    (5, 3, 80, 112, 6, 1),
    (5, 4, 112, 192, 6, 2),
    (3, 1, 192, 320, 6, 1),
];

/// (width coefficient, depth coefficient) of B0..B6.
pub const EFFICIENTNET_SCALING: [(f64, f64); 7] = [
    (1.0, 1.0),
    (1.0, 1.1),
    (1.1, 1.2),
    (1.2, 1.4),
    (1.4, 1.8),
    (1.6, 2.2),
    (1.8, 2.6),
];

pub fn efficientnet(variant: usize, input: Shape) -> ArchitectureDescriptor {
    assert!(variant < EFFICIENTNET_SCALING.len(), "EfficientNet B0..B6");
    let name = format!("EfficientNetB{variant}");
    let (width, depth) = EFFICIENTNET_SCALING[variant];
    let round_filters = |f: u64| make_divisible(f as f64 * width);
    let round_repeats = |r: u64| (depth * r as f64).ceil() as u64;

    let mut n = Net::new(&name, input);
    n.conv("stem_conv", round_filters(32), 3, 2, false);
    n.bn("stem_bn");
    n.swish("stem_activation");

    for (i, &(kernel, repeats, f_in, f_out, expand, stride)) in
        EFFICIENTNET_BLOCKS.iter().enumerate()
    {
        let mut filters_in = round_filters(f_in);
        let filters_out = round_filters(f_out);
        for j in 0..round_repeats(repeats) {
            let stride = if j > 0 { 1 } else { stride };
            if j > 0 {
                filters_in = filters_out;
            }
            let p = format!("block{}{}", i + 1, (b'a' + j as u8) as char);
            let filters = filters_in * expand;
            if expand != 1 {
                n.conv(&format!("{p}_expand_conv"), filters, 1, 1, false);
                n.bn(&format!("{p}_expand_bn"));
                n.swish(&format!("{p}_expand_activation"));
            }
            n.dw(&format!("{p}_dwconv"), kernel, stride);
            n.bn(&format!("{p}_bn"));
            n.swish(&format!("{p}_activation"));
            let squeeze = 1.max((filters_in as f64 * 0.25) as u64);
            n.se(&format!("{p}_se"), squeeze);
            n.conv(&format!("{p}_project_conv"), filters_out, 1, 1, false);
            n.bn(&format!("{p}_project_bn"));
            if stride == 1 && filters_in == filters_out {
                n.add(&format!("{p}_add"));
            }
        }
    }
    n.conv("top_conv", round_filters(1280), 1, 1, false);
    n.bn("top_bn");
    n.swish("top_activation");
    n.dense_softmax_top();
    n.finish(declared(&name))
}

pub fn densenet(blocks: [u64; 4], input: Shape) -> ArchitectureDescriptor {
    let depth = 4 + 2 * blocks.iter().sum::<u64>() + 1;
    let name = format!("DenseNet{depth}");
    let mut n = Net::new(&name, input);
    n.conv("conv1_conv", 64, 7, 2, false);
    n.bn("conv1_bn");
    n.relu("conv1_relu");
    n.pool("pool1", LayerKind::Maxpool, 3, 2);
    for (b, &count) in blocks.iter().enumerate() {
        let stage = b + 2;
        for i in 1..=count {
            let entry = n.cur;
            let p = format!("conv{stage}_block{i}");
            n.bn(&format!("{p}_0_bn"));
            n.relu(&format!("{p}_0_relu"));
            n.conv(&format!("{p}_1_conv"), 128, 1, 1, false);
            n.bn(&format!("{p}_1_bn"));
            n.relu(&format!("{p}_1_relu"));
            n.conv(&format!("{p}_2_conv"), 32, 3, 1, false);
            n.concat(&format!("{p}_concat"), entry[2] + 32);
        }
        if b < 3 {
            let p = format!("pool{stage}");
            let c = n.cur[2];
            n.bn(&format!("{p}_bn"));
            n.relu(&format!("{p}_relu"));
            n.conv(&format!("{p}_conv"), c / 2, 1, 1, false);
            n.pool(&format!("{p}_pool"), LayerKind::Avgpool, 2, 2);
        }
    }
    n.bn("bn");
    n.relu("relu");
    n.dense_softmax_top();
    n.finish(declared(&name))
}

fn nas_separable(n: &mut Net, src: Shape, filters: u64, k: u64, stride: u64, p: &str) -> Shape {
    n.at(src).relu(&format!("{p}_relu_1"));
    n.dw(&format!("{p}_sep1_dw"), k, stride);
    n.conv(&format!("{p}_sep1_pw"), filters, 1, 1, false);
    n.bn(&format!("{p}_bn_1"));
    n.relu(&format!("{p}_relu_2"));
    n.dw(&format!("{p}_sep2_dw"), k, 1);
    n.conv(&format!("{p}_sep2_pw"), filters, 1, 1, false);
    n.bn(&format!("{p}_bn_2"))
}

fn nas_adjust(n: &mut Net, p: Option<Shape>, ip: Shape, filters: u64, id: &str) -> Shape {
    let Some(p) = p else {
        return ip;
    };
    if p[1] != ip[1] {
        n.at(p).relu(&format!("adjust_relu_1_{id}"));
        let relu_out = n.cur;
        n.pool(&format!("adjust_avg_pool_1_{id}"), LayerKind::Avgpool, 1, 2);
        n.conv(&format!("adjust_conv_1_{id}"), filters / 2, 1, 1, false);
        n.at(relu_out)
            .pool(&format!("adjust_avg_pool_2_{id}"), LayerKind::Avgpool, 1, 2);
        n.conv(&format!("adjust_conv_2_{id}"), filters / 2, 1, 1, false);
        n.concat(&format!("adjust_concat_{id}"), 2 * (filters / 2));
        n.bn(&format!("adjust_bn_{id}"))
    } else if p[2] != filters {
        n.at(p).relu(&format!("adjust_relu_projection_{id}"));
        n.conv(
            &format!("adjust_conv_projection_{id}"),
            filters,
            1,
            1,
            false,
        );
        n.bn(&format!("adjust_bn_{id}"))
    } else {
        p
    }
}

fn nas_squeeze(n: &mut Net, ip: Shape, filters: u64, p: &str) -> Shape {
    n.at(ip).relu(&format!("{p}_relu1"));
    n.conv(&format!("{p}_conv_1"), filters, 1, 1, false);
    n.bn(&format!("{p}_bn_1"))
}

fn nas_normal_cell(
    n: &mut Net,
    ip: Shape,
    p: Option<Shape>,
    filters: u64,
    id: &str,
) -> (Shape, Shape) {
    let p = nas_adjust(n, p, ip, filters, id);
    let h = nas_squeeze(n, ip, filters, &format!("normal_{id}"));

    nas_separable(n, h, filters, 5, 1, &format!("normal_left1_{id}"));
    nas_separable(n, p, filters, 3, 1, &format!("normal_right1_{id}"));
    n.add(&format!("normal_add_1_{id}"));

    nas_separable(n, p, filters, 5, 1, &format!("normal_left2_{id}"));
    nas_separable(n, p, filters, 3, 1, &format!("normal_right2_{id}"));
    n.add(&format!("normal_add_2_{id}"));

    n.at(h)
        .pool(&format!("normal_left3_{id}"), LayerKind::Avgpool, 3, 1);
    n.add(&format!("normal_add_3_{id}"));

    n.at(p)
        .pool(&format!("normal_left4_{id}"), LayerKind::Avgpool, 3, 1);
    n.at(p)
        .pool(&format!("normal_right4_{id}"), LayerKind::Avgpool, 3, 1);
    n.add(&format!("normal_add_4_{id}"));

    nas_separable(n, h, filters, 3, 1, &format!("normal_left5_{id}"));
    n.add(&format!("normal_add_5_{id}"));

    let out = n.concat(&format!("normal_concat_{id}"), 6 * filters);
    (out, ip)
}

fn nas_reduction_cell(
    n: &mut Net,
    ip: Shape,
    p: Option<Shape>,
    filters: u64,
    id: &str,
) -> (Shape, Shape) {
    let p = nas_adjust(n, p, ip, filters, id);
    let h = nas_squeeze(n, ip, filters, &format!("reduction_{id}"));

    nas_separable(n, h, filters, 5, 2, &format!("reduction_left1_{id}"));
    nas_separable(n, p, filters, 7, 2, &format!("reduction_right1_{id}"));
    let x1 = n.add(&format!("reduction_add_1_{id}"));

    n.at(h)
        .pool(&format!("reduction_left2_{id}"), LayerKind::Maxpool, 3, 2);
    nas_separable(n, p, filters, 7, 2, &format!("reduction_right2_{id}"));
    n.add(&format!("reduction_add_2_{id}"));

    n.at(h)
        .pool(&format!("reduction_left3_{id}"), LayerKind::Avgpool, 3, 2);
    nas_separable(n, p, filters, 5, 2, &format!("reduction_right3_{id}"));
    n.add(&format!("reduction_add3_{id}"));

    n.at(x1)
        .pool(&format!("reduction_left4_{id}"), LayerKind::Avgpool, 3, 1);
    n.add(&format!("reduction_add4_{id}"));

    nas_separable(n, x1, filters, 3, 1, &format!("reduction_left5_{id}"));
    n.at(h)
        .pool(&format!("reduction_right5_{id}"), LayerKind::Maxpool, 3, 2);
    n.add(&format!("reduction_add5_{id}"));

    let out = n.concat(&format!("reduction_concat_{id}"), 4 * filters);
    (out, ip)
}

pub fn nasnet_mobile(input: Shape) -> ArchitectureDescriptor {
    const PENULTIMATE: u64 = 1056;
    const NUM_BLOCKS: usize = 4;
    let filters = PENULTIMATE / 24;

    let mut n = Net::new("NASNetMobile", input);
    let stem = LayerSpec::new("stem_conv1", LayerKind::Conv2d, input)
        .with_out(32)
        .with_kernel(3)
        .with_stride(2)
        .with_padding(Padding::Valid)
        .with_bias(false);
    n.push(stem);
    let x = n.bn("stem_bn1");

    let (x, p) = nas_reduction_cell(&mut n, x, None, filters / 4, "stem_1");
    let (mut x, mut p) = nas_reduction_cell(&mut n, x, Some(p), filters / 2, "stem_2");
    for i in 0..NUM_BLOCKS {
        (x, p) = nas_normal_cell(&mut n, x, Some(p), filters, &i.to_string());
    }
    (x, p) = nas_reduction_cell(
        &mut n,
        x,
        Some(p),
        filters * 2,
        &format!("reduce_{NUM_BLOCKS}"),
    );
    for i in 0..NUM_BLOCKS {
        (x, p) = nas_normal_cell(
            &mut n,
            x,
            Some(p),
            filters * 2,
            &(NUM_BLOCKS + i + 1).to_string(),
        );
    }
    (x, p) = nas_reduction_cell(
        &mut n,
        x,
        Some(p),
        filters * 4,
        &format!("reduce_{}", 2 * NUM_BLOCKS),
    );
    for i in 0..NUM_BLOCKS {
        (x, p) = nas_normal_cell(
            &mut n,
            x,
            Some(p),
            filters * 4,
            &(2 * NUM_BLOCKS + i + 1).to_string(),
        );
    }
    let _ = p;
    n.at(x).relu("final_relu");
    n.dense_softmax_top();
    n.finish(declared("NASNetMobile"))
}

/// The fifteen architectures, in the order of [`REFERENCE_PARAMS_M`].
pub fn builtin_corpus(input: Shape) -> Vec<ArchitectureDescriptor> {
    let mut v: Vec<_> = (0..7).map(|b| efficientnet(b, input)).collect();
    v.push(mobilenet(input));
    v.push(mobilenet_v2(input));
    v.push(mobilenet_v3_small(input));
    v.push(mobilenet_v3_large(input));
    v.push(densenet([6, 12, 24, 16], input));
    v.push(densenet([6, 12, 32, 32], input));
    v.push(densenet([6, 12, 48, 32], input));
    v.push(nasnet_mobile(input));
    v
}

/// Multilayer perceptron of `widths.len()` dense layers on an input vector,
/// each optionally followed by a ReLU.
pub fn mlp(
    name: &str,
    input_size: u64,
    widths: &[u64],
    relu_after: &[bool],
) -> ArchitectureDescriptor {
    assert_eq!(widths.len(), relu_after.len());
    let input = [1, 1, input_size];
    let mut n = Net::new(name, input);
    for (i, (&w, &r)) in widths.iter().zip(relu_after).enumerate() {
        let spec = LayerSpec::new(format!("dense_{}", i + 1), LayerKind::Dense, n.cur).with_out(w);
        n.push(spec);
        if r {
            n.relu(&format!("relu_{}", i + 1));
        }
    }
    ArchitectureDescriptor {
        name: n.name,
        input_shape: input,
        declared_params: None,
        layers: n.layers,
    }
}

/// Three dense layers of 32 units on a 100-element input, each followed by a ReLU.
pub fn mlp3() -> ArchitectureDescriptor {
    mlp("MLP3", 100, &[32, 32, 32], &[true, true, true])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simulator::arch::count_params;

    #[test]
    fn make_divisible_matches_reference_rounding() {
        assert_eq!(make_divisible(16.0), 16);
        assert_eq!(make_divisible(72.0), 72);
        assert_eq!(make_divisible(16.0 * 4.5), 72);
        assert_eq!(make_divisible(24.0 * 88.0 / 24.0), 88);
        assert_eq!(make_divisible(32.0 * 1.1), 32);
        assert_eq!(make_divisible(1280.0 * 1.8), 2304);
        assert_eq!(make_divisible(80.0 * 2.3), 184);
        assert_eq!(make_divisible(3.0), 8);
    }

    // Trainable counts of the TensorFlow reference models (weights=None,
    // 32x32x3 input) used to calibrate the builders.
    #[test]
    fn builders_reproduce_reference_trainable_counts() {
        let expected: [u64; 15] = [
            5_288_548, 7_794_184, 9_109_994, 12_233_232, 19_341_616, 30_389_784, 43_040_704,
            4_231_976, 3_504_872, 2_542_856, 5_483_032, 7_978_856, 14_149_480, 20_013_928,
            5_289_978,
        ];
        for (d, e) in builtin_corpus(DEFAULT_INPUT).iter().zip(expected) {
            d.validate().unwrap();
            assert_eq!(count_params(d).unwrap(), e, "{}", d.name);
        }
    }

    #[test]
    fn names_follow_reference_table() {
        let names: Vec<_> = builtin_corpus(DEFAULT_INPUT)
            .into_iter()
            .map(|d| d.name)
            .collect();
        let expected: Vec<_> = REFERENCE_PARAMS_M
            .iter()
            .map(|(n, _)| n.to_string())
            .collect();
        assert_eq!(names, expected);
    }

    #[test]
    fn mlp3_layout() {
        let d = mlp3();
        d.validate().unwrap();
        assert_eq!(d.layers.len(), 6);
        assert_eq!(count_params(&d).unwrap(), 3_232 + 1_056 * 2);
    }
}
