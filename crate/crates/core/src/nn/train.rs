use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::model::Model;
use super::{NnError, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Optimizer {
    Sgd,
    Adam { beta1: f64, beta2: f64, eps: f64 },
}

impl Default for Optimizer {
    fn default() -> Self {
        Optimizer::Adam {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EarlyStopMetric {
    #[default]
    ValLoss,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub max_epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub optimizer: Optimizer,
    pub early_stop_patience: usize,
    pub early_stop_metric: EarlyStopMetric,
    pub rng_seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            max_epochs: 100,
            batch_size: 32,
            learning_rate: 1e-3,
            optimizer: Optimizer::default(),
            early_stop_patience: 10,
            early_stop_metric: EarlyStopMetric::ValLoss,
            rng_seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), NnError> {
        let bad = |m: &str| Err(NnError::Config(m.to_string()));
        if self.max_epochs == 0 {
            return bad("max_epochs must be positive");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be positive");
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be positive");
        }
        if let Optimizer::Adam { beta1, beta2, eps } = self.optimizer {
            if !(0.0..1.0).contains(&beta1) || !(0.0..1.0).contains(&beta2) || eps <= 0.0 {
                return bad("adam needs beta in [0, 1) and eps > 0");
            }
        }
        Ok(())
    }
}

/// Fixed-length inputs stored row-major with integer labels.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledSet {
    input_len: usize,
    x: Vec<f64>,
    y: Vec<usize>,
}

impl LabeledSet {
    pub fn new(input_len: usize) -> Self {
        Self {
            input_len,
            x: Vec::new(),
            y: Vec::new(),
        }
    }

    pub fn push(&mut self, x: &[f64], label: usize) -> Result<(), NnError> {
        if x.len() != self.input_len {
            return Err(NnError::Shape(format!(
                "sample of length {} in a set of length {}",
                x.len(),
                self.input_len
            )));
        }
        self.x.extend_from_slice(x);
        self.y.push(label);
        Ok(())
    }

    pub fn input_len(&self) -> usize {
        self.input_len
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.x[i * self.input_len..(i + 1) * self.input_len]
    }

    pub fn labels(&self) -> &[usize] {
        &self.y
    }

    pub fn rows(&self) -> &[f64] {
        &self.x
    }

    fn gather(&self, idx: &[usize]) -> (Tensor, Vec<usize>) {
        let mut x = Vec::with_capacity(idx.len() * self.input_len);
        for &i in idx {
            x.extend_from_slice(self.row(i));
        }
        let t = Tensor::new(vec![idx.len(), self.input_len, 1], x).expect("gathered rows");
        (t, idx.iter().map(|&i| self.y[i]).collect())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_accuracy: f64,
    pub val_loss: f64,
    pub val_accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct History {
    pub epochs: Vec<EpochStats>,
    /// Epoch whose weights were kept.
    pub best_epoch: usize,
    pub stopped_early: bool,
}

impl History {
    /// Tab-separated table, one row per epoch.
    pub fn to_text(&self) -> String {
        let mut s = String::from("epoch\ttrain_loss\ttrain_acc\tval_loss\tval_acc\n");
        for e in &self.epochs {
            s.push_str(&format!(
                "{}\t{:.6}\t{:.4}\t{:.6}\t{:.4}\n",
                e.epoch, e.train_loss, e.train_accuracy, e.val_loss, e.val_accuracy
            ));
        }
        s.push_str(&format!(
            "# best_epoch {} stopped_early {}\n",
            self.best_epoch, self.stopped_early
        ));
        s
    }
}

fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

fn check_set(model: &Model, set: &LabeledSet, name: &'static str) -> Result<(), NnError> {
    if set.is_empty() {
        return Err(NnError::EmptySplit(name));
    }
    if set.input_len() != model.input_len() {
        return Err(NnError::Shape(format!(
            "{name} inputs have length {} but the model expects {}",
            set.input_len(),
            model.input_len()
        )));
    }
    let c = model.num_classes();
    if let Some(&label) = set.labels().iter().find(|&&l| l >= c) {
        return Err(NnError::Label { label, classes: c });
    }
    Ok(())
}

/// Mean loss and accuracy in inference mode.
pub fn evaluate_set(model: &Model, set: &LabeledSet) -> Result<(f64, f64), NnError> {
    let probs = model.predict_batch(set.rows())?;
    let mut loss = 0.0;
    let mut correct = 0usize;
    for (p, &y) in probs.iter().zip(set.labels()) {
        loss -= p[y].max(f64::MIN_POSITIVE).ln();
        correct += usize::from(argmax(p) == y);
    }
    let n = set.len() as f64;
    Ok((loss / n, correct as f64 / n))
}

/// Mini-batch training with early stopping on validation loss. The returned model
/// carries the weights of the best validation epoch.
pub fn train(
    mut model: Model,
    train: &LabeledSet,
    val: &LabeledSet,
    cfg: &TrainConfig,
) -> Result<(Model, History), NnError> {
    cfg.validate()?;
    check_set(&model, train, "train")?;
    check_set(&model, val, "validation")?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.rng_seed);
    let mut m: Vec<Vec<f64>> = model.params().iter().map(|p| vec![0.0; p.len()]).collect();
    let mut v = m.clone();
    let mut step = 0i32;
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut best = (f64::INFINITY, model.params().to_vec(), 0usize);
    let mut epochs = Vec::new();
    let mut stopped_early = false;
    let mut since_best = 0;

    for epoch in 1..=cfg.max_epochs {
        order.shuffle(&mut rng);
        let (mut loss_sum, mut correct) = (0.0, 0usize);
        for idx in order.chunks(cfg.batch_size) {
            let (x, y) = train.gather(idx);
            let (loss, logits, grads) = model.loss_and_grads(x, &y, true, &mut rng)?;
            loss_sum += loss * idx.len() as f64;
            correct += logits
                .data()
                .chunks(model.num_classes())
                .zip(&y)
                .filter(|(row, &t)| argmax(row) == t)
                .count();
            step += 1;
            for (((p, g), mi), vi) in model
                .params_mut()
                .iter_mut()
                .zip(&grads)
                .zip(&mut m)
                .zip(&mut v)
            {
                let (pd, gd) = (p.data_mut(), g.data());
                match cfg.optimizer {
                    Optimizer::Sgd => {
                        for (w, &gr) in pd.iter_mut().zip(gd) {
                            *w -= cfg.learning_rate * gr;
                        }
                    }
                    Optimizer::Adam { beta1, beta2, eps } => {
                        let c1 = 1.0 - beta1.powi(step);
                        let c2 = 1.0 - beta2.powi(step);
                        for j in 0..pd.len() {
                            mi[j] = beta1 * mi[j] + (1.0 - beta1) * gd[j];
                            vi[j] = beta2 * vi[j] + (1.0 - beta2) * gd[j] * gd[j];
                            let mh = mi[j] / c1;
                            let vh = vi[j] / c2;
                            pd[j] -= cfg.learning_rate * mh / (vh.sqrt() + eps);
                        }
                    }
                }
            }
        }
        let (val_loss, val_accuracy) = evaluate_set(&model, val)?;
        epochs.push(EpochStats {
            epoch,
            train_loss: loss_sum / train.len() as f64,
            train_accuracy: correct as f64 / train.len() as f64,
            val_loss,
            val_accuracy,
        });
        if val_loss < best.0 {
            best = (val_loss, model.params().to_vec(), epoch);
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= cfg.early_stop_patience {
                stopped_early = true;
                break;
            }
        }
    }
    let (_, params, best_epoch) = best;
    // With a NaN-only history no epoch improves; keep the final weights then.
    if best_epoch > 0 {
        model.params_mut().clone_from_slice(&params);
    }
    Ok((
        model,
        History {
            epochs,
            best_epoch,
            stopped_early,
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::model::{Activation, ClassifierSpec, LayerConfig};
    use rand::Rng;

    fn toy_spec() -> ClassifierSpec {
        ClassifierSpec {
            layers: vec![
                LayerConfig::Conv1d {
                    filters: 4,
                    kernel: 8,
                    stride: 4,
                    activation: Activation::Relu,
                },
                LayerConfig::MaxPool1d { pool: 2, stride: 2 },
                LayerConfig::Flatten,
                LayerConfig::Dense {
                    units: 8,
                    activation: Activation::Relu,
                },
                LayerConfig::Dropout { rate: 0.2 },
                LayerConfig::Dense {
                    units: 2,
                    activation: Activation::Softmax,
                },
            ],
        }
    }

    /// Class 0: energy in the first half; class 1: energy in the second half.
    fn toy_set(n: usize, seed: u64) -> LabeledSet {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut s = LabeledSet::new(64);
        for i in 0..n {
            let label = i % 2;
            let x: Vec<f64> = (0..64)
                .map(|j| {
                    let on = (j < 32) == (label == 0);
                    f64::from(u8::from(on)) + 0.1 * rng.gen_range(-1.0..1.0)
                })
                .collect();
            s.push(&x, label).unwrap();
        }
        s
    }

    #[test]
    fn separable_toy_converges() {
        let model = Model::new(toy_spec(), 64, 1).unwrap();
        let cfg = TrainConfig {
            max_epochs: 200,
            batch_size: 4,
            early_stop_patience: 200,
            ..TrainConfig::default()
        };
        let set = toy_set(20, 2);
        let (model, hist) = train(model, &set, &set, &cfg).unwrap();
        let best = hist
            .epochs
            .iter()
            .map(|e| e.val_loss)
            .fold(f64::INFINITY, f64::min);
        assert!(best < 0.05, "best loss {best}");
        let (loss, acc) = evaluate_set(&model, &set).unwrap();
        assert!(loss < 0.05 && acc == 1.0);
    }

    #[test]
    fn deterministic_and_early_stopping() {
        let cfg = TrainConfig {
            max_epochs: 30,
            batch_size: 8,
            early_stop_patience: 3,
            rng_seed: 4,
            ..TrainConfig::default()
        };
        let (tr, va) = (toy_set(24, 5), toy_set(10, 6));
        let run = || train(Model::new(toy_spec(), 64, 3).unwrap(), &tr, &va, &cfg).unwrap();
        let (a, ha) = run();
        let (b, hb) = run();
        assert_eq!(ha, hb);
        for (p, q) in a.params().iter().zip(b.params()) {
            assert!(p
                .data()
                .iter()
                .zip(q.data())
                .all(|(x, y)| x.to_bits() == y.to_bits()));
        }
        let best = ha.epochs[ha.best_epoch - 1].val_loss;
        assert!(ha.epochs.iter().all(|e| e.val_loss >= best));
        if ha.stopped_early {
            assert_eq!(ha.epochs.len(), ha.best_epoch + 3);
        }
        let (loss, _) = evaluate_set(&a, &va).unwrap();
        assert_eq!(loss.to_bits(), best.to_bits());
    }

    #[test]
    fn rejects_bad_inputs() {
        let model = Model::new(toy_spec(), 64, 1).unwrap();
        let set = toy_set(4, 0);
        let empty = LabeledSet::new(64);
        let cfg = TrainConfig::default();
        assert!(matches!(
            train(model.clone(), &empty, &set, &cfg),
            Err(NnError::EmptySplit("train"))
        ));
        assert!(matches!(
            train(model.clone(), &set, &empty, &cfg),
            Err(NnError::EmptySplit("validation"))
        ));
        let mut bad = LabeledSet::new(64);
        bad.push(&[0.0; 64], 5).unwrap();
        assert!(matches!(
            train(model.clone(), &bad, &set, &cfg),
            Err(NnError::Label { label: 5, .. })
        ));
        let cfg = TrainConfig {
            batch_size: 0,
            ..TrainConfig::default()
        };
        assert!(train(model, &set, &set, &cfg).is_err());
        assert!(LabeledSet::new(3).push(&[0.0; 2], 0).is_err());
    }
}
