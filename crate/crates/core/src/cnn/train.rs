use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::loss::softmax_cross_entropy;
use super::model::{DropoutMasks, Gradients, Model};
use super::{CnnError, Real, Tensor, TensorF};

/// One labeled training input (`label` is a class index).
#[derive(Debug, Clone)]
pub struct Sample {
    pub input: TensorF,
    pub label: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub dropout_rate: f64,
    pub seed: u64,
    pub validation_fraction: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 8,
            epochs: 30,
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-7,
            dropout_rate: 0.2,
            seed: 0,
            validation_fraction: 0.2,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), CnnError> {
        let bad = |m: &str| Err(CnnError::Training(m.into()));
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1");
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return bad("dropout_rate must be in [0, 1)");
        }
        if !(0.0..1.0).contains(&self.validation_fraction) {
            return bad("validation_fraction must be in [0, 1)");
        }
        if !(self.learning_rate > 0.0) {
            return bad("learning_rate must be positive");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    /// Mean loss over the epoch's mini-batches (dropout active).
    pub train_loss: f64,
    pub train_accuracy: f64,
    pub val_loss: Option<f64>,
    pub val_accuracy: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TrainHistory {
    pub epochs: Vec<EpochStats>,
}

impl TrainHistory {
    pub fn last(&self) -> Option<&EpochStats> {
        self.epochs.last()
    }
}

/// Adam with bias correction folded into the step size.
#[derive(Debug, Clone)]
pub struct Adam<T> {
    lr: f64,
    beta1: f64,
    beta2: f64,
    epsilon: f64,
    step: i32,
    m: Gradients<T>,
    v: Gradients<T>,
}

impl<T: Real> Adam<T> {
    pub fn new(model: &Model<T>, lr: f64, beta1: f64, beta2: f64, epsilon: f64) -> Self {
        Self {
            lr,
            beta1,
            beta2,
            epsilon,
            step: 0,
            m: model.zero_gradients(),
            v: model.zero_gradients(),
        }
    }

    pub fn step(&mut self, model: &mut Model<T>, grads: &Gradients<T>) {
        self.step += 1;
        let lr_t = self.lr * (1.0 - self.beta2.powi(self.step)).sqrt() / (1.0 - self.beta1.powi(self.step));
        let (b1, b2) = (T::from_f64(self.beta1), T::from_f64(self.beta2));
        let (lr_t, eps) = (T::from_f64(lr_t), T::from_f64(self.epsilon));
        let layers = model
            .params_mut()
            .iter_mut()
            .zip(&grads.layers)
            .zip(self.m.layers.iter_mut().zip(self.v.layers.iter_mut()));
        for ((p, g), (m, v)) in layers {
            let (Some(p), Some(g), Some(m), Some(v)) = (p, g, m, v) else {
                continue;
            };
            let pairs = [
                (p.weights.data_mut(), g.weights.data(), m.weights.data_mut(), v.weights.data_mut()),
                (p.bias.data_mut(), g.bias.data(), m.bias.data_mut(), v.bias.data_mut()),
            ];
            for (pd, gd, md, vd) in pairs {
                for (((pv, &gv), mv), vv) in pd.iter_mut().zip(gd).zip(md.iter_mut()).zip(vd.iter_mut()) {
                    *mv = b1 * *mv + (T::ONE - b1) * gv;
                    *vv = b2 * *vv + (T::ONE - b2) * gv * gv;
                    *pv -= lr_t * *mv / (vv.sqrt() + eps);
                }
            }
        }
    }
}

/// Summed loss, correct count and summed parameter gradients of a batch.
#[derive(Debug, Clone)]
pub struct BatchResult<T> {
    pub loss_sum: f64,
    pub correct: usize,
    pub grads: Gradients<T>,
}

fn argmax<T: Real>(v: &[T]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

/// Gradient of the summed cross-entropy over a batch. Samples run in
/// parallel; the reduction is sequential in batch order, so results are
/// bitwise reproducible.
pub fn batch_gradients<T: Real>(
    model: &Model<T>,
    inputs: &[&Tensor<T>],
    labels: &[usize],
    masks: &[DropoutMasks<T>],
) -> Result<BatchResult<T>, CnnError> {
    if inputs.len() != labels.len() || (!masks.is_empty() && masks.len() != inputs.len()) {
        return Err(CnnError::Training("batch inputs, labels and masks differ in length".into()));
    }
    let none = DropoutMasks::none();
    let per_sample: Vec<(f64, bool, Gradients<T>)> = (0..inputs.len())
        .into_par_iter()
        .map(|i| {
            let mask = masks.get(i).unwrap_or(&none);
            let trace = model.forward_train(inputs[i], mask)?;
            let logits = trace.logits();
            let (loss, grad) = softmax_cross_entropy(logits, labels[i]);
            let correct = argmax(logits) == labels[i];
            Ok((loss.to_f64(), correct, model.backward(&trace, &grad)?))
        })
        .collect::<Result<_, CnnError>>()?;
    let mut out = BatchResult {
        loss_sum: 0.0,
        correct: 0,
        grads: model.zero_gradients(),
    };
    for (loss, correct, g) in &per_sample {
        out.loss_sum += loss;
        out.correct += usize::from(*correct);
        out.grads.add_assign(g);
    }
    Ok(out)
}

/// Seeded per-class split: `round(n_class * fraction)` of each class goes to
/// validation. Returns `(train, val)` index lists.
pub fn split_stratified(labels: &[usize], fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut classes: Vec<usize> = labels.to_vec();
    classes.sort_unstable();
    classes.dedup();
    let (mut train, mut val) = (Vec::new(), Vec::new());
    for class in classes {
        let mut idx: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == class).collect();
        idx.shuffle(&mut rng);
        let n_val = (idx.len() as f64 * fraction).round() as usize;
        val.extend_from_slice(&idx[..n_val]);
        train.extend_from_slice(&idx[n_val..]);
    }
    train.sort_unstable();
    val.sort_unstable();
    (train, val)
}

fn check_classes(samples: &[&Sample]) -> Result<(), CnnError> {
    if samples.is_empty() {
        return Err(CnnError::Training("dataset is empty".into()));
    }
    if samples.iter().any(|s| s.label > 1) {
        return Err(CnnError::Training("labels must be class indices 0 or 1".into()));
    }
    if samples.iter().all(|s| s.label == samples[0].label) {
        return Err(CnnError::Training("dataset has a single class".into()));
    }
    Ok(())
}

/// Splits `samples` by `config.validation_fraction` and trains.
pub fn train(model: &mut Model<f32>, samples: &[Sample], config: &TrainConfig) -> Result<TrainHistory, CnnError> {
    config.validate()?;
    check_classes(&samples.iter().collect::<Vec<_>>())?;
    let labels: Vec<usize> = samples.iter().map(|s| s.label).collect();
    let (tr, va) = split_stratified(&labels, config.validation_fraction, config.seed);
    let train_set: Vec<&Sample> = tr.iter().map(|&i| &samples[i]).collect();
    let val_set: Vec<&Sample> = va.iter().map(|&i| &samples[i]).collect();
    train_with_split(model, &train_set, &val_set, config, |_| {})
}

fn evaluate(model: &Model<f32>, samples: &[&Sample]) -> Result<(f64, f64), CnnError> {
    let results: Vec<(f64, bool)> = samples
        .par_iter()
        .map(|s| {
            let logits = model.forward(&s.input)?;
            let (loss, _) = softmax_cross_entropy(&logits, s.label);
            Ok((f64::from(loss), argmax(&logits) == s.label))
        })
        .collect::<Result<_, CnnError>>()?;
    let n = results.len() as f64;
    let loss = results.iter().map(|r| r.0).sum::<f64>() / n;
    let acc = results.iter().filter(|r| r.1).count() as f64 / n;
    Ok((loss, acc))
}

/// Mini-batch Adam over a fixed split, reshuffling each epoch from
/// `config.seed`. `on_epoch` sees each epoch's stats as they complete.
pub fn train_with_split(
    model: &mut Model<f32>,
    train_set: &[&Sample],
    val_set: &[&Sample],
    config: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochStats),
) -> Result<TrainHistory, CnnError> {
    config.validate()?;
    check_classes(train_set)?;
    model.set_dropout_rate(config.dropout_rate);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut adam = Adam::new(model, config.learning_rate, config.beta1, config.beta2, config.epsilon);
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut history = TrainHistory::default();
    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        let (mut loss_sum, mut correct) = (0.0, 0usize);
        for batch in order.chunks(config.batch_size) {
            let inputs: Vec<&TensorF> = batch.iter().map(|&i| &train_set[i].input).collect();
            let labels: Vec<usize> = batch.iter().map(|&i| train_set[i].label).collect();
            let masks: Vec<DropoutMasks<f32>> = batch.iter().map(|_| model.sample_dropout_masks(&mut rng)).collect();
            let mut r = batch_gradients(model, &inputs, &labels, &masks)?;
            r.grads.scale(1.0 / batch.len() as f32);
            adam.step(model, &r.grads);
            loss_sum += r.loss_sum;
            correct += r.correct;
        }
        let n = train_set.len() as f64;
        let (val_loss, val_accuracy) = if val_set.is_empty() {
            (None, None)
        } else {
            let (l, a) = evaluate(model, val_set)?;
            (Some(l), Some(a))
        };
        let stats = EpochStats {
            epoch: epoch + 1,
            train_loss: loss_sum / n,
            train_accuracy: correct as f64 / n,
            val_loss,
            val_accuracy,
        };
        on_epoch(&stats);
        history.epochs.push(stats);
    }
    Ok(history)
}
