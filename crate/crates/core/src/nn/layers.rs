//! Layer kernels. Activations use `[N, L, C]` (sequence) or `[N, D]` (flat) layouts.

use rand::Rng;
use rayon::prelude::*;

use super::{NnError, Tensor};

/// `c = a·b + beta * c` over strided views.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    (rsa, csa): (usize, usize),
    b: &[f64],
    (rsb, csb): (usize, usize),
    beta: f64,
    c: &mut [f64],
    (rsc, csc): (usize, usize),
) {
    debug_assert!(m == 0 || k == 0 || (m - 1) * rsa + (k - 1) * csa < a.len());
    debug_assert!(k == 0 || n == 0 || (k - 1) * rsb + (n - 1) * csb < b.len());
    debug_assert!(m == 0 || n == 0 || (m - 1) * rsc + (n - 1) * csc < c.len());
    // SAFETY: the asserted bounds keep every strided access inside the slices.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa as isize,
            csa as isize,
            b.as_ptr(),
            rsb as isize,
            csb as isize,
            beta,
            c.as_mut_ptr(),
            rsc as isize,
            csc as isize,
        );
    }
}

fn conv_dims(x: &Tensor, w: &Tensor, stride: usize) -> Result<[usize; 6], NnError> {
    let (n, l, c) = x.dims3()?;
    let [k, wc, o] = w.shape()[..] else {
        return Err(NnError::Shape(format!("conv weights {:?}", w.shape())));
    };
    if wc != c {
        return Err(NnError::Shape(format!(
            "conv input {:?}, weights {:?}",
            x.shape(),
            w.shape()
        )));
    }
    if stride == 0 {
        return Err(NnError::Shape("stride must be positive".into()));
    }
    if l < k {
        return Err(NnError::KernelTooLong { len: l, kernel: k });
    }
    Ok([n, l, c, k, o, (l - k) / stride + 1])
}

/// Valid 1-D convolution. `x: [N, L, C_in]`, `w: [K, C_in, C_out]`, `b: [C_out]`.
pub fn conv1d_forward(
    x: &Tensor,
    w: &Tensor,
    b: &Tensor,
    stride: usize,
) -> Result<Tensor, NnError> {
    let [n, l, c, k, o, lo] = conv_dims(x, w, stride)?;
    if b.shape() != [o] {
        return Err(NnError::Shape(format!(
            "conv bias {:?}, expected [{o}]",
            b.shape()
        )));
    }
    let mut out = vec![0.0; n * lo * o];
    out.par_chunks_mut(lo * o)
        .zip(x.data().par_chunks(l * c))
        .for_each(|(y, xs)| {
            for row in y.chunks_mut(o) {
                row.copy_from_slice(b.data());
            }
            // Row i of the patch matrix starts at i*stride*C and spans K*C contiguous values.
            gemm(
                lo,
                k * c,
                o,
                xs,
                (stride * c, 1),
                w.data(),
                (o, 1),
                1.0,
                y,
                (o, 1),
            );
        });
    Tensor::new(vec![n, lo, o], out)
}

#[derive(Debug, Clone)]
pub struct ConvGrads {
    pub grad_x: Option<Tensor>,
    pub grad_w: Tensor,
    pub grad_b: Tensor,
}

/// Gradients of [`conv1d_forward`]. `grad_x` is skipped when `need_grad_x` is false.
pub fn conv1d_backward(
    grad_out: &Tensor,
    x: &Tensor,
    w: &Tensor,
    stride: usize,
    need_grad_x: bool,
) -> Result<ConvGrads, NnError> {
    let [n, l, c, k, o, lo] = conv_dims(x, w, stride)?;
    if grad_out.shape() != [n, lo, o] {
        return Err(NnError::Shape(format!(
            "conv grad {:?}, expected {:?}",
            grad_out.shape(),
            [n, lo, o]
        )));
    }
    let kc = k * c;
    let g = grad_out.data();
    let mut gw = vec![0.0; kc * o];
    let mut gb = vec![0.0; o];
    for (gs, xs) in g.chunks(lo * o).zip(x.data().chunks(l * c)) {
        gemm(
            kc,
            lo,
            o,
            xs,
            (1, stride * c),
            gs,
            (o, 1),
            1.0,
            &mut gw,
            (o, 1),
        );
        for row in gs.chunks(o) {
            for (acc, v) in gb.iter_mut().zip(row) {
                *acc += v;
            }
        }
    }
    let grad_x = if need_grad_x {
        let mut gx = vec![0.0; n * l * c];
        gx.par_chunks_mut(l * c)
            .zip(g.par_chunks(lo * o))
            .for_each(|(gxs, gs)| {
                let mut p = vec![0.0; lo * kc];
                gemm(
                    lo,
                    o,
                    kc,
                    gs,
                    (o, 1),
                    w.data(),
                    (1, o),
                    0.0,
                    &mut p,
                    (kc, 1),
                );
                for (i, prow) in p.chunks(kc).enumerate() {
                    let base = i * stride * c;
                    for (dst, v) in gxs[base..base + kc].iter_mut().zip(prow) {
                        *dst += v;
                    }
                }
            });
        Some(Tensor::new(vec![n, l, c], gx)?)
    } else {
        None
    };
    Ok(ConvGrads {
        grad_x,
        grad_w: Tensor::new(vec![k, c, o], gw)?,
        grad_b: Tensor::new(vec![o], gb)?,
    })
}

/// Windowed max over the sequence axis. Returns the output and, per output value,
/// the flat input index that produced it (first occurrence on ties).
pub fn maxpool1d_forward(
    x: &Tensor,
    pool: usize,
    stride: usize,
) -> Result<(Tensor, Vec<usize>), NnError> {
    let (n, l, c) = x.dims3()?;
    if pool == 0 || stride == 0 {
        return Err(NnError::Shape("pool and stride must be positive".into()));
    }
    if l < pool {
        return Err(NnError::KernelTooLong {
            len: l,
            kernel: pool,
        });
    }
    let lo = (l - pool) / stride + 1;
    let xd = x.data();
    let mut out = Vec::with_capacity(n * lo * c);
    let mut arg = Vec::with_capacity(n * lo * c);
    for s in 0..n {
        for i in 0..lo {
            for ch in 0..c {
                let mut best = (s * l + i * stride) * c + ch;
                for t in 1..pool {
                    let idx = (s * l + i * stride + t) * c + ch;
                    if xd[idx] > xd[best] {
                        best = idx;
                    }
                }
                out.push(xd[best]);
                arg.push(best);
            }
        }
    }
    Ok((Tensor::new(vec![n, lo, c], out)?, arg))
}

pub fn maxpool1d_backward(
    grad_out: &Tensor,
    argmax: &[usize],
    x_shape: &[usize],
) -> Result<Tensor, NnError> {
    if grad_out.len() != argmax.len() {
        return Err(NnError::Shape(
            "pool gradient does not match argmax table".into(),
        ));
    }
    let mut gx = Tensor::zeros(x_shape.to_vec());
    let gxd = gx.data_mut();
    for (&idx, &g) in argmax.iter().zip(grad_out.data()) {
        gxd[idx] += g;
    }
    Ok(gx)
}

/// `x: [N, D]`, `w: [D, M]`, `b: [M]`.
pub fn dense_forward(x: &Tensor, w: &Tensor, b: &Tensor) -> Result<Tensor, NnError> {
    let (n, d) = x.dims2()?;
    let (wd, m) = w.dims2()?;
    if wd != d || b.shape() != [m] {
        return Err(NnError::Shape(format!(
            "dense input {:?}, weights {:?}, bias {:?}",
            x.shape(),
            w.shape(),
            b.shape()
        )));
    }
    let mut out = Vec::with_capacity(n * m);
    for _ in 0..n {
        out.extend_from_slice(b.data());
    }
    gemm(
        n,
        d,
        m,
        x.data(),
        (d, 1),
        w.data(),
        (m, 1),
        1.0,
        &mut out,
        (m, 1),
    );
    Tensor::new(vec![n, m], out)
}

#[derive(Debug, Clone)]
pub struct DenseGrads {
    pub grad_x: Tensor,
    pub grad_w: Tensor,
    pub grad_b: Tensor,
}

pub fn dense_backward(grad_out: &Tensor, x: &Tensor, w: &Tensor) -> Result<DenseGrads, NnError> {
    let (n, d) = x.dims2()?;
    let (wd, m) = w.dims2()?;
    if wd != d || grad_out.shape() != [n, m] {
        return Err(NnError::Shape(format!(
            "dense grad {:?} for input {:?}, weights {:?}",
            grad_out.shape(),
            x.shape(),
            w.shape()
        )));
    }
    let g = grad_out.data();
    let mut gw = vec![0.0; d * m];
    gemm(d, n, m, x.data(), (1, d), g, (m, 1), 0.0, &mut gw, (m, 1));
    let mut gb = vec![0.0; m];
    for row in g.chunks(m) {
        for (acc, v) in gb.iter_mut().zip(row) {
            *acc += v;
        }
    }
    let mut gx = vec![0.0; n * d];
    gemm(n, m, d, g, (m, 1), w.data(), (1, m), 0.0, &mut gx, (d, 1));
    Ok(DenseGrads {
        grad_x: Tensor::new(vec![n, d], gx)?,
        grad_w: Tensor::new(vec![d, m], gw)?,
        grad_b: Tensor::new(vec![m], gb)?,
    })
}

pub fn relu_forward(x: &Tensor) -> Tensor {
    let mut y = x.clone();
    for v in y.data_mut() {
        *v = v.max(0.0);
    }
    y
}

pub fn relu_backward(grad_out: &Tensor, x: &Tensor) -> Result<Tensor, NnError> {
    if grad_out.shape() != x.shape() {
        return Err(NnError::Shape("relu gradient shape".into()));
    }
    let mut g = grad_out.clone();
    for (gv, &xv) in g.data_mut().iter_mut().zip(x.data()) {
        if xv <= 0.0 {
            *gv = 0.0;
        }
    }
    Ok(g)
}

/// Inverted dropout. In eval mode (or with `rate == 0`) this is the identity and no
/// mask is returned. The mask holds `0` or `1 / (1 - rate)` per element.
pub fn dropout_forward<R: Rng + ?Sized>(
    x: &Tensor,
    rate: f64,
    training: bool,
    rng: &mut R,
) -> (Tensor, Option<Vec<f64>>) {
    if !training || rate <= 0.0 {
        return (x.clone(), None);
    }
    let keep = 1.0 - rate;
    let mask: Vec<f64> = (0..x.len())
        .map(|_| {
            if rng.gen::<f64>() < keep {
                1.0 / keep
            } else {
                0.0
            }
        })
        .collect();
    let mut y = x.clone();
    for (v, m) in y.data_mut().iter_mut().zip(&mask) {
        *v *= m;
    }
    (y, Some(mask))
}

pub fn dropout_backward(grad_out: &Tensor, mask: Option<&[f64]>) -> Tensor {
    let mut g = grad_out.clone();
    if let Some(mask) = mask {
        for (v, m) in g.data_mut().iter_mut().zip(mask) {
            *v *= m;
        }
    }
    g
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|z| (z - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// Cross-entropy of `softmax(logits)` against `label`, with its gradient w.r.t. the logits.
pub fn softmax_cross_entropy(logits: &[f64], label: usize) -> Result<(f64, Vec<f64>), NnError> {
    if label >= logits.len() {
        return Err(NnError::Label {
            label,
            classes: logits.len(),
        });
    }
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|z| (z - max).exp()).sum::<f64>().ln();
    let mut grad = softmax(logits);
    grad[label] -= 1.0;
    Ok((lse - logits[label], grad))
}

/// Mean loss over the batch; the gradient is scaled by `1/N` to match.
pub fn softmax_cross_entropy_batch(
    logits: &Tensor,
    labels: &[usize],
) -> Result<(f64, Tensor), NnError> {
    let (n, c) = logits.dims2()?;
    if labels.len() != n {
        return Err(NnError::Shape(format!(
            "{} labels for {n} rows",
            labels.len()
        )));
    }
    let mut total = 0.0;
    let mut grad = Vec::with_capacity(n * c);
    for (row, &y) in logits.data().chunks(c).zip(labels) {
        let (loss, g) = softmax_cross_entropy(row, y)?;
        total += loss;
        grad.extend(g.into_iter().map(|v| v / n as f64));
    }
    Ok((total / n as f64, Tensor::new(vec![n, c], grad)?))
}
