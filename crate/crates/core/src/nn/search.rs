//! Random hyperparameter search over architecture and training controls.

use rand::Rng;

use super::train::{train, TrainConfig, TrainHistory};
use super::{Activation, EncoderArchitecture, EncoderModel, LabeledSet};
use crate::error::{Error, Result};
use crate::rng::{derive_seed, rng_from_seed};

/// Sampling ranges; integer ranges are inclusive, learning rate and penalty
/// weights are drawn log-uniformly.
#[derive(Debug, Clone)]
pub struct SearchSpace {
    pub conv_depth: (usize, usize),
    pub kernels_per_layer: (usize, usize),
    pub batch_size: (usize, usize),
    pub log10_learning_rate: (f64, f64),
    pub log10_l1: (f64, f64),
    pub log10_l2: (f64, f64),
    pub lr_decay: (f64, f64),
    pub activations: Vec<Activation>,
    pub epochs: usize,
    pub early_stop_patience: usize,
    pub use_max_pool: bool,
}

impl SearchSpace {
    /// Small-scale defaults: shallow nets, short budgets, learning rates
    /// that converge within tens of epochs.
    pub fn desk() -> SearchSpace {
        SearchSpace {
            conv_depth: (1, 3),
            kernels_per_layer: (4, 16),
            batch_size: (20, 256),
            log10_learning_rate: (-4.0, -2.0),
            log10_l1: (-6.0, -3.0),
            log10_l2: (-6.0, -3.0),
            lr_decay: (0.94, 1.0),
            activations: vec![
                Activation::Relu,
                Activation::Sigmoid,
                Activation::PRelu,
                Activation::LeakyRelu,
                Activation::Tanh,
                Activation::Swish,
            ],
            epochs: 50,
            early_stop_patience: 5,
            use_max_pool: false,
        }
    }

    /// Full-scale ranges: deep stacks, 300 epochs, wide batch sizes.
    pub fn full_scale() -> SearchSpace {
        SearchSpace {
            conv_depth: (8, 20),
            kernels_per_layer: (32, 64),
            batch_size: (20, 1000),
            log10_learning_rate: (-6.0, -3.0),
            log10_l1: (-6.0, -3.0),
            log10_l2: (-6.0, -3.0),
            lr_decay: (0.94, 1.0),
            activations: vec![
                Activation::Relu,
                Activation::Sigmoid,
                Activation::PRelu,
                Activation::LeakyRelu,
                Activation::Tanh,
                Activation::Swish,
            ],
            epochs: 300,
            early_stop_patience: 5,
            use_max_pool: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ord = |lo: f64, hi: f64| lo <= hi;
        if self.conv_depth.0 == 0
            || self.conv_depth.0 > self.conv_depth.1
            || self.kernels_per_layer.0 == 0
            || self.kernels_per_layer.0 > self.kernels_per_layer.1
            || self.batch_size.0 == 0
            || self.batch_size.0 > self.batch_size.1
            || !ord(self.log10_learning_rate.0, self.log10_learning_rate.1)
            || !ord(self.log10_l1.0, self.log10_l1.1)
            || !ord(self.log10_l2.0, self.log10_l2.1)
            || !ord(self.lr_decay.0, self.lr_decay.1)
            || self.activations.is_empty()
            || self.epochs == 0
            || self.early_stop_patience == 0
        {
            return Err(Error::Config("invalid search space".into()));
        }
        Ok(())
    }

    fn sample(&self, k: usize, rng: &mut impl Rng, seed: u64) -> (EncoderArchitecture, TrainConfig) {
        let int = |lo: usize, hi: usize, rng: &mut dyn rand::RngCore| -> usize {
            if lo == hi {
                lo
            } else {
                lo + (rng.next_u64() % (hi - lo + 1) as u64) as usize
            }
        };
        let conv_depth = int(self.conv_depth.0, self.conv_depth.1, rng);
        let kernels = int(self.kernels_per_layer.0, self.kernels_per_layer.1, rng);
        let act = self.activations[int(0, self.activations.len() - 1, rng)];
        let batch = int(self.batch_size.0, self.batch_size.1, rng);
        let log_unif = |range: (f64, f64), rng: &mut dyn rand::RngCore| -> f64 {
            let u = (rng.next_u64() as f64) / (u64::MAX as f64);
            10f64.powf(range.0 + u * (range.1 - range.0))
        };
        let lr = log_unif(self.log10_learning_rate, rng);
        let l1 = log_unif(self.log10_l1, rng);
        let l2 = log_unif(self.log10_l2, rng);
        let u = (rng.next_u64() as f64) / (u64::MAX as f64);
        let decay = self.lr_decay.0 + u * (self.lr_decay.1 - self.lr_decay.0);

        let arch = EncoderArchitecture {
            use_max_pool: self.use_max_pool,
            ..EncoderArchitecture::new(conv_depth, kernels, act, k)
        };
        let cfg = TrainConfig {
            epochs: self.epochs,
            early_stop_patience: self.early_stop_patience,
            batch_size: batch,
            learning_rate: lr,
            l1,
            l2,
            lr_decay: decay,
            seed,
        };
        (arch, cfg)
    }
}

/// Outcome of one search trial.
#[derive(Debug, Clone)]
pub struct TrialRecord {
    pub index: usize,
    pub architecture: EncoderArchitecture,
    pub train_config: TrainConfig,
    pub val_accuracy: f64,
    pub val_loss: f64,
    pub epochs_run: usize,
}

/// Samples `budget` configurations, trains each, and returns the model with
/// the highest validation accuracy (earliest trial wins ties) plus the log
/// of every trial. Trial `i` derives all of its randomness from `(seed, i)`.
pub fn random_search(
    space: &SearchSpace,
    budget: usize,
    train_set: &LabeledSet,
    val_set: &LabeledSet,
    n_rx: usize,
    n_p: usize,
    seed: u64,
) -> Result<(EncoderModel, Vec<TrialRecord>)> {
    space.validate()?;
    if budget == 0 {
        return Err(Error::Size("search budget must be at least 1".into()));
    }
    if train_set.num_classes != val_set.num_classes {
        return Err(Error::Config("train/val class counts differ".into()));
    }
    let k = train_set.num_classes;

    let mut best: Option<(EncoderModel, usize)> = None;
    let mut records: Vec<TrialRecord> = Vec::with_capacity(budget);
    for trial in 0..budget {
        let trial_seed = derive_seed(seed, trial as u64);
        let mut rng = rng_from_seed(trial_seed);
        let (arch, cfg) = space.sample(k, &mut rng, derive_seed(trial_seed, 1));
        let model = EncoderModel::init(arch.clone(), n_rx, n_p, derive_seed(trial_seed, 2))?;
        let (trained, history): (EncoderModel, TrainHistory) =
            train(model, train_set, val_set, &cfg)?;
        let val_accuracy = history.val_accuracy[history.best_epoch];
        let val_loss = history.val_loss[history.best_epoch];
        records.push(TrialRecord {
            index: trial,
            architecture: arch,
            train_config: cfg,
            val_accuracy,
            val_loss,
            epochs_run: history.val_loss.len(),
        });
        let better = match &best {
            None => true,
            Some((_, best_idx)) => val_accuracy > records[*best_idx].val_accuracy,
        };
        if better {
            best = Some((trained, trial));
        }
    }
    let (model, _) = best.expect("budget >= 1");
    Ok((model, records))
}
