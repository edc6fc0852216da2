use std::collections::BTreeMap;
use std::f64::consts::PI;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::loss::{pair_loss, LossConfig};
use crate::consistency::Problem;
use crate::error::{Error, Result};
use crate::eval::greedy_accuracy;
use crate::pairs::PreferencePair;
use crate::policy::PolicyModel;
use crate::seed::{derive_seed, rng_from};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LrSchedule {
    #[default]
    Constant,
    /// Half-cosine decay from the base rate to 0 over all steps of an iteration.
    Cosine,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub schedule: LrSchedule,
    pub batch_size: usize,
    pub iterations: usize,
    /// Set from the run seed, never from the `[train]` table.
    #[serde(skip)]
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 10,
            learning_rate: 0.1,
            schedule: LrSchedule::Constant,
            batch_size: 16,
            iterations: 2,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::validation("train.batch_size", "must be positive"));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::validation("train.learning_rate", "must be a finite value > 0"));
        }
        Ok(())
    }

    fn rate(&self, step: usize, total: usize) -> f64 {
        match self.schedule {
            LrSchedule::Constant => self.learning_rate,
            LrSchedule::Cosine => 0.5 * self.learning_rate * (1.0 + (PI * step as f64 / total as f64).cos()),
        }
    }
}

/// Result of one iteration of training.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: PolicyModel,
    /// Mean per-pair loss of every epoch, measured before each update.
    pub epoch_losses: Vec<f64>,
    /// Dev greedy accuracy after every epoch, when a dev split was given.
    pub dev_accuracy: Vec<f64>,
    /// 1-based epoch of the returned checkpoint; 0 when no epoch ran.
    pub selected_epoch: usize,
}

/// Train `model` on `pairs` for one iteration against a frozen copy of itself.
///
/// Mini-batch gradient descent sums per-pair gradients within a batch. With a
/// non-empty `dev` split the checkpoint with the best dev greedy accuracy is
/// returned (ties to the earliest epoch); otherwise the last epoch's.
pub fn train_iteration(
    model: &PolicyModel,
    pairs: &[PreferencePair],
    loss_cfg: &LossConfig,
    train_cfg: &TrainConfig,
    dev: Option<&[Problem]>,
    iteration: usize,
) -> Result<TrainOutcome> {
    if pairs.is_empty() {
        return Err(Error::EmptyDataset);
    }
    loss_cfg.validate()?;
    train_cfg.validate()?;
    let reference = model.clone();
    let mut current = model.clone();
    let mut rng = rng_from(derive_seed(train_cfg.seed, "train/shuffle", iteration as u64));
    let batches_per_epoch = pairs.len().div_ceil(train_cfg.batch_size);
    let total_steps = train_cfg.epochs * batches_per_epoch;
    let dev = dev.filter(|d| !d.is_empty());

    let mut epoch_losses = Vec::with_capacity(train_cfg.epochs);
    let mut dev_accuracy = Vec::new();
    let mut best: Option<(f64, usize, PolicyModel)> = None;
    let mut order: Vec<usize> = (0..pairs.len()).collect();
    let mut step = 0;
    for epoch in 1..=train_cfg.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for batch in order.chunks(train_cfg.batch_size) {
            let mut rows: BTreeMap<&str, Vec<f64>> = BTreeMap::new();
            let mut shared = 0.0;
            for &i in batch {
                let pair = &pairs[i];
                let (loss, grad) = pair_loss(&current, &reference, pair, loss_cfg)?;
                epoch_loss += loss;
                shared += grad.shared;
                let acc = rows
                    .entry(pair.problem_id.as_str())
                    .or_insert_with(|| vec![0.0; grad.row.len()]);
                for (a, g) in acc.iter_mut().zip(&grad.row) {
                    *a += g;
                }
            }
            let lr = train_cfg.rate(step, total_steps);
            for (pid, g) in rows {
                let row = current.row_mut(pid)?;
                for (l, g) in row.logits.iter_mut().zip(&g) {
                    *l -= lr * g;
                }
            }
            current.shared -= lr * shared;
            current.check_finite()?;
            step += 1;
        }
        epoch_losses.push(epoch_loss / pairs.len() as f64);
        if let Some(dev) = dev {
            let acc = greedy_accuracy(&current, dev)?;
            dev_accuracy.push(acc);
            if best.as_ref().is_none_or(|(b, _, _)| acc > *b) {
                best = Some((acc, epoch, current.clone()));
            }
        }
    }

    let (mut model_out, selected_epoch) = match best {
        Some((_, epoch, m)) => (m, epoch),
        None => (current, train_cfg.epochs),
    };
    model_out.version = model.version + 1;
    Ok(TrainOutcome {
        model: model_out,
        epoch_losses,
        dev_accuracy,
        selected_epoch,
    })
}
