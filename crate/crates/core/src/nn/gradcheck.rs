//! Finite-difference verification of every layer's backward pass on random
//! small shapes. Each layer output is reduced with a fixed random projection
//! `L = sum(r * y)`, so `dL/dy = r`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::layers::*;
use super::model::{
    gradient_check, relative_error, Activation, ClassifierSpec, LayerConfig, Model,
};
use super::{NnError, Tensor};

const H: f64 = 1e-5;

#[derive(Debug, Clone, PartialEq)]
pub struct LayerCheck {
    pub layer: &'static str,
    pub max_rel_error: f64,
}

fn rand_tensor(shape: Vec<usize>, rng: &mut ChaCha8Rng) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).expect("shape")
}

fn project(y: &Tensor, r: &Tensor) -> f64 {
    y.data().iter().zip(r.data()).map(|(a, b)| a * b).sum()
}

/// Worst error between `analytic` and central differences of `f` around `x`.
fn compare<F>(x: &Tensor, analytic: &Tensor, mut f: F) -> Result<f64, NnError>
where
    F: FnMut(&Tensor) -> Result<f64, NnError>,
{
    let mut probe = x.clone();
    let mut worst = 0.0f64;
    for i in 0..x.len() {
        let orig = probe.data()[i];
        probe.data_mut()[i] = orig + H;
        let up = f(&probe)?;
        probe.data_mut()[i] = orig - H;
        let down = f(&probe)?;
        probe.data_mut()[i] = orig;
        worst = worst.max(relative_error(analytic.data()[i], (up - down) / (2.0 * H)));
    }
    Ok(worst)
}

fn check_conv(rng: &mut ChaCha8Rng) -> Result<f64, NnError> {
    let (n, c, o) = (
        rng.gen_range(1..=3),
        rng.gen_range(1..=3),
        rng.gen_range(1..=4),
    );
    let (k, s) = (rng.gen_range(1..=5), rng.gen_range(1..=3));
    let l = k + rng.gen_range(0..=12);
    let x = rand_tensor(vec![n, l, c], rng);
    let w = rand_tensor(vec![k, c, o], rng);
    let b = rand_tensor(vec![o], rng);
    let r = rand_tensor(conv1d_forward(&x, &w, &b, s)?.shape().to_vec(), rng);
    let g = conv1d_backward(&r, &x, &w, s, true)?;
    let gx = g.grad_x.expect("requested");
    let ex = compare(&x, &gx, |x| Ok(project(&conv1d_forward(x, &w, &b, s)?, &r)))?;
    let ew = compare(&w, &g.grad_w, |w| {
        Ok(project(&conv1d_forward(&x, w, &b, s)?, &r))
    })?;
    let eb = compare(&b, &g.grad_b, |b| {
        Ok(project(&conv1d_forward(&x, &w, b, s)?, &r))
    })?;
    Ok(ex.max(ew).max(eb))
}

fn check_dense(rng: &mut ChaCha8Rng) -> Result<f64, NnError> {
    let (n, d, m) = (
        rng.gen_range(1..=3),
        rng.gen_range(1..=6),
        rng.gen_range(1..=5),
    );
    let x = rand_tensor(vec![n, d], rng);
    let w = rand_tensor(vec![d, m], rng);
    let b = rand_tensor(vec![m], rng);
    let r = rand_tensor(vec![n, m], rng);
    let g = dense_backward(&r, &x, &w)?;
    let ex = compare(&x, &g.grad_x, |x| {
        Ok(project(&dense_forward(x, &w, &b)?, &r))
    })?;
    let ew = compare(&w, &g.grad_w, |w| {
        Ok(project(&dense_forward(&x, w, &b)?, &r))
    })?;
    let eb = compare(&b, &g.grad_b, |b| {
        Ok(project(&dense_forward(&x, &w, b)?, &r))
    })?;
    Ok(ex.max(ew).max(eb))
}

fn check_relu(rng: &mut ChaCha8Rng) -> Result<f64, NnError> {
    let n = rng.gen_range(1..=20);
    // Keep inputs away from the kink so +-h never crosses it.
    let data = (0..n)
        .map(|_| {
            let v: f64 = rng.gen_range(0.05..1.0);
            if rng.gen_bool(0.5) {
                v
            } else {
                -v
            }
        })
        .collect();
    let x = Tensor::new(vec![1, n], data)?;
    let r = rand_tensor(vec![1, n], rng);
    let g = relu_backward(&r, &x)?;
    compare(&x, &g, |x| Ok(project(&relu_forward(x), &r)))
}

fn check_maxpool(rng: &mut ChaCha8Rng) -> Result<f64, NnError> {
    let (n, c) = (rng.gen_range(1..=2), rng.gen_range(1..=3));
    let (pool, stride) = (rng.gen_range(1..=4), rng.gen_range(1..=3));
    let l = pool + rng.gen_range(0..=10);
    // Distinct values spaced well beyond h, so the argmax is stable under probing.
    let mut vals: Vec<f64> = (0..n * l * c).map(|i| i as f64 * 0.01).collect();
    for i in (1..vals.len()).rev() {
        vals.swap(i, rng.gen_range(0..=i));
    }
    let x = Tensor::new(vec![n, l, c], vals)?;
    let (y, arg) = maxpool1d_forward(&x, pool, stride)?;
    let r = rand_tensor(y.shape().to_vec(), rng);
    let g = maxpool1d_backward(&r, &arg, x.shape())?;
    compare(&x, &g, |x| {
        Ok(project(&maxpool1d_forward(x, pool, stride)?.0, &r))
    })
}

fn check_dropout(rng: &mut ChaCha8Rng) -> Result<f64, NnError> {
    let n = rng.gen_range(1..=20);
    let x = rand_tensor(vec![1, n], rng);
    let r = rand_tensor(vec![1, n], rng);
    let mask_rng = ChaCha8Rng::seed_from_u64(rng.gen());
    let (_, mask) = dropout_forward(&x, 0.2, true, &mut mask_rng.clone());
    let g = dropout_backward(&r, mask.as_deref());
    compare(&x, &g, |x| {
        Ok(project(
            &dropout_forward(x, 0.2, true, &mut mask_rng.clone()).0,
            &r,
        ))
    })
}

fn check_softmax_ce(rng: &mut ChaCha8Rng) -> Result<f64, NnError> {
    let c = rng.gen_range(2..=8);
    let z = rand_tensor(vec![c], rng);
    let label = rng.gen_range(0..c);
    let (_, g) = softmax_cross_entropy(z.data(), label)?;
    let g = Tensor::new(vec![c], g)?;
    compare(&z, &g, |z| Ok(softmax_cross_entropy(z.data(), label)?.0))
}

fn check_model(rng: &mut ChaCha8Rng) -> Result<f64, NnError> {
    let spec = ClassifierSpec {
        layers: vec![
            LayerConfig::Conv1d {
                filters: rng.gen_range(1..=3),
                kernel: rng.gen_range(2..=5),
                stride: rng.gen_range(1..=3),
                activation: Activation::Linear,
            },
            LayerConfig::Conv1d {
                filters: 2,
                kernel: 2,
                stride: 1,
                activation: Activation::Linear,
            },
            LayerConfig::MaxPool1d { pool: 2, stride: 1 },
            LayerConfig::Flatten,
            LayerConfig::Dense {
                units: 4,
                activation: Activation::Linear,
            },
            LayerConfig::Dropout { rate: 0.2 },
            LayerConfig::Dense {
                units: 3,
                activation: Activation::Softmax,
            },
        ],
    };
    let len = spec.min_input_len()? + rng.gen_range(0..8);
    let model = Model::new(spec, len, rng.gen())?;
    let x: Vec<f64> = (0..len).map(|_| rng.gen_range(-1.0..1.0)).collect();
    gradient_check(&model, &x, rng.gen_range(0..3))
}

/// Runs every layer check once with shapes drawn from `seed`.
pub fn check_all_layers(seed: u64) -> Result<Vec<LayerCheck>, NnError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    type Check = fn(&mut ChaCha8Rng) -> Result<f64, NnError>;
    let checks: [(&'static str, Check); 7] = [
        ("conv1d", check_conv),
        ("dense", check_dense),
        ("relu", check_relu),
        ("maxpool1d", check_maxpool),
        ("dropout", check_dropout),
        ("softmax_cross_entropy", check_softmax_ce),
        ("model", check_model),
    ];
    checks
        .iter()
        .map(|(layer, f)| {
            Ok(LayerCheck {
                layer,
                max_rel_error: f(&mut rng)?,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn all_layers_pass_one_seed() {
        for c in check_all_layers(0).unwrap() {
            assert!(c.max_rel_error < 1e-4, "{c:?}");
        }
    }
}
