//! Cross-entropy training with Adam, L1/L2 penalties, exponential learning
//! rate decay and early stopping on validation loss.

use rand::seq::SliceRandom;

use super::net::{softmax_cross_entropy, Feat, Mode};
use super::{argmax, EncoderModel, LabeledSet};
use crate::error::{Error, Result};
use crate::rng::rng_from_seed;

const ADAM_BETA1: f64 = 0.9;
const ADAM_BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub early_stop_patience: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// L1 penalty weight on all trainable parameters.
    pub l1: f64,
    /// L2 penalty weight (applied as l2 * ||theta||^2).
    pub l2: f64,
    /// Multiplicative learning-rate factor per epoch, in (0, 1].
    pub lr_decay: f64,
    pub seed: u64,
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.early_stop_patience == 0 || self.batch_size == 0 {
            return Err(Error::Config("epochs/patience/batch size must be positive".into()));
        }
        if self.learning_rate < 0.0 || self.l1 < 0.0 || self.l2 < 0.0 {
            return Err(Error::Config("rates and penalties must be nonnegative".into()));
        }
        if !(self.lr_decay > 0.0 && self.lr_decay <= 1.0) {
            return Err(Error::Config("lr_decay must lie in (0, 1]".into()));
        }
        Ok(())
    }
}

/// Per-epoch metrics; `best_epoch` indexes these vectors.
#[derive(Debug, Clone, Default)]
pub struct TrainHistory {
    pub train_loss: Vec<f64>,
    pub val_loss: Vec<f64>,
    pub val_accuracy: Vec<f64>,
    pub best_epoch: usize,
}

struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
}

impl Adam {
    fn new(n: usize) -> Adam {
        Adam {
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    fn step(&mut self, params: &mut [f64], grads: &[f64], lr: f64) {
        self.t += 1;
        let bc1 = 1.0 - ADAM_BETA1.powi(self.t as i32);
        let bc2 = 1.0 - ADAM_BETA2.powi(self.t as i32);
        for i in 0..params.len() {
            self.m[i] = ADAM_BETA1 * self.m[i] + (1.0 - ADAM_BETA1) * grads[i];
            self.v[i] = ADAM_BETA2 * self.v[i] + (1.0 - ADAM_BETA2) * grads[i] * grads[i];
            let m_hat = self.m[i] / bc1;
            let v_hat = self.v[i] / bc2;
            params[i] -= lr * m_hat / (v_hat.sqrt() + ADAM_EPS);
        }
    }
}

fn batch_feat(model: &EncoderModel, set: &LabeledSet, idx: &[usize]) -> (Feat, Vec<usize>) {
    let mut feat = Feat::zeros(idx.len(), 2, model.input_rx, model.input_p);
    let mut labels = Vec::with_capacity(idx.len());
    for (b, &i) in idx.iter().enumerate() {
        let (obs, label) = &set.items[i];
        obs.write_into(&mut feat, b);
        labels.push(*label);
    }
    (feat, labels)
}

/// Full training loss (mean cross-entropy plus penalties) and its gradient
/// for one batch; train-mode batch statistics, optionally refreshing the
/// running statistics.
pub(crate) fn batch_loss_and_grads(
    model: &mut EncoderModel,
    feat: &Feat,
    labels: &[usize],
    l1: f64,
    l2: f64,
    update_state: bool,
    grads: &mut [f64],
) -> f64 {
    let mut caches = Vec::with_capacity(model.net.layers.len());
    let logits = model
        .net
        .forward(feat, Mode::Train, update_state, Some(&mut caches));
    let (ce, dlogits) = softmax_cross_entropy(&logits, labels);
    model.net.backward(&caches, dlogits, grads);

    let mut penalty = 0.0;
    for (i, &p) in model.net.params.data.iter().enumerate() {
        penalty += l1 * p.abs() + l2 * p * p;
        let sub = if p != 0.0 { l1 * p.signum() } else { 0.0 };
        grads[i] += sub + 2.0 * l2 * p;
    }
    ce + penalty
}

/// Mean cross-entropy and accuracy of infer-mode predictions on `set`.
pub fn evaluate(model: &EncoderModel, set: &LabeledSet) -> (f64, f64) {
    let logits = model.infer_logits(&set.items);
    let mut loss = 0.0;
    let mut correct = 0usize;
    for (l, (_, label)) in logits.iter().zip(set.items.iter()) {
        let maxv = l.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let denom: f64 = l.iter().map(|v| (v - maxv).exp()).sum();
        loss += denom.ln() + maxv - l[*label];
        if argmax(l) == *label {
            correct += 1;
        }
    }
    let n = set.len() as f64;
    (loss / n, correct as f64 / n)
}

/// Trains `model` on `train_set`, early-stopping on `val_set`, and returns
/// the snapshot with the best validation loss together with the history.
///
/// The batch order is drawn once from the seed and kept fixed across epochs,
/// so the run is a pure function of (model, data, config).
pub fn train(
    model: EncoderModel,
    train_set: &LabeledSet,
    val_set: &LabeledSet,
    cfg: &TrainConfig,
) -> Result<(EncoderModel, TrainHistory)> {
    cfg.validate()?;
    if train_set.is_empty() || val_set.is_empty() {
        return Err(Error::Size("training and validation sets must be nonempty".into()));
    }
    let mut model = model;
    let mut history = TrainHistory::default();
    let mut adam = Adam::new(model.net.params.len());
    let mut grads = vec![0.0; model.net.params.len()];

    let mut order: Vec<usize> = (0..train_set.len()).collect();
    order.shuffle(&mut rng_from_seed(cfg.seed));
    let batches: Vec<Vec<usize>> = order
        .chunks(cfg.batch_size)
        .map(|chunk| chunk.to_vec())
        .collect();

    let mut best: Option<(f64, Vec<f64>, Vec<f64>, usize)> = None;
    let mut stall = 0usize;

    for epoch in 0..cfg.epochs {
        let lr = cfg.learning_rate * cfg.lr_decay.powi(epoch as i32);
        let mut loss_sum = 0.0;
        for idx in &batches {
            let (feat, labels) = batch_feat(&model, train_set, idx);
            grads.iter_mut().for_each(|g| *g = 0.0);
            let loss =
                batch_loss_and_grads(&mut model, &feat, &labels, cfg.l1, cfg.l2, true, &mut grads);
            adam.step(&mut model.net.params.data, &grads, lr);
            loss_sum += loss * idx.len() as f64;
        }
        history.train_loss.push(loss_sum / train_set.len() as f64);

        let (val_loss, val_acc) = evaluate(&model, val_set);
        history.val_loss.push(val_loss);
        history.val_accuracy.push(val_acc);

        let improved = best.as_ref().map_or(true, |(b, _, _, _)| val_loss < *b);
        if improved {
            best = Some((
                val_loss,
                model.net.params.data.clone(),
                model.net.state.data.clone(),
                epoch,
            ));
            stall = 0;
        } else {
            stall += 1;
            if stall >= cfg.early_stop_patience {
                break;
            }
        }
    }

    let (_, params, state, best_epoch) = best.expect("at least one epoch ran");
    model.net.params.data = params;
    model.net.state.data = state;
    history.best_epoch = best_epoch;
    Ok((model, history))
}
