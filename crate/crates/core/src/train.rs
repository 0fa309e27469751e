//! Mini-batch training with Adam and the warm-up schedule, per-epoch
//! validation and best-model tracking.

use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{config, Result};
use crate::graph::{Graph, Var};
use crate::optim::{noam_lr, Adam, AdamConfig};
use crate::params::ParamStore;

/// A differentiable per-example loss. `loss` returns the example's mean
/// loss and its weight (usually the number of scored tokens); batch losses
/// are weight-averaged.
pub trait Objective {
    type Example;
    fn loss(&self, g: &mut Graph<'_>, example: &Self::Example) -> Result<(Var, f64)>;
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainOptions {
    pub max_epochs: usize,
    pub batch_size: usize,
    pub warmup_epochs: usize,
    /// Multiplier on the scheduled learning rate.
    pub lr_scale: f64,
    pub shuffle_seed: u64,
    /// Model width entering the schedule.
    pub d: usize,
}

impl TrainOptions {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(config("batch size must be positive"));
        }
        if !(self.lr_scale > 0.0 && self.lr_scale.is_finite()) {
            return Err(config("lr_scale must be positive"));
        }
        Ok(())
    }

    pub fn batches_per_epoch(&self, examples: usize) -> usize {
        examples.div_ceil(self.batch_size)
    }

    /// Warm-up length in steps: `warmup_epochs` worth of batches.
    pub fn warmup_steps(&self, examples: usize) -> u64 {
        (self.warmup_epochs * self.batches_per_epoch(examples)).max(1) as u64
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: Option<f64>,
    /// Learning rate of the epoch's last step.
    pub lr: f64,
}

/// Everything needed to continue training where it stopped.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainState {
    pub adam: Adam,
    pub epochs_done: usize,
    pub history: Vec<EpochRecord>,
    pub best_loss: Option<f64>,
    pub best_params: Option<ParamStore>,
}

impl TrainState {
    pub fn new(params: &ParamStore) -> Self {
        TrainState {
            adam: Adam::new(params, AdamConfig::default()),
            epochs_done: 0,
            history: Vec::new(),
            best_loss: None,
            best_params: None,
        }
    }
}

/// Weighted mean loss over `examples` and the gradients of that mean.
pub fn batch_gradients<O: Objective>(
    params: &ParamStore,
    objective: &O,
    examples: &[&O::Example],
) -> Result<(f64, Vec<Vec<f64>>)> {
    let mut grads = params.zeros_like();
    let mut sum = 0.0;
    let mut total_weight = 0.0;
    for ex in examples {
        let mut g = Graph::new(params);
        let (loss, w) = objective.loss(&mut g, ex)?;
        sum += w * g.value(loss).item()?;
        total_weight += w;
        g.backward(loss)?.accumulate_scaled(&mut grads, w);
    }
    if total_weight <= 0.0 {
        return Ok((0.0, grads));
    }
    for buf in grads.iter_mut() {
        for x in buf.iter_mut() {
            *x /= total_weight;
        }
    }
    let mean = sum / total_weight;
    Ok((mean, grads))
}

/// Weighted mean loss without gradients.
pub fn evaluate_loss<O: Objective>(params: &ParamStore, objective: &O, examples: &[O::Example]) -> Result<f64> {
    let mut sum = 0.0;
    let mut weight = 0.0;
    for ex in examples {
        let mut g = Graph::new(params);
        let (loss, w) = objective.loss(&mut g, ex)?;
        sum += w * g.value(loss).item()?;
        weight += w;
    }
    Ok(if weight > 0.0 { sum / weight } else { 0.0 })
}

/// Example order for an epoch; depends only on the seed and epoch index.
pub fn epoch_order(seed: u64, epoch: usize, len: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..len).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (epoch as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    order.shuffle(&mut rng);
    order
}

/// Overflow inside the forward pass is divergence too.
fn diverged(e: crate::Error) -> crate::Error {
    match e {
        crate::Error::NonFinite(op) => crate::Error::Diverged(alloc::format!("non-finite value in {op}")),
        e => e,
    }
}

/// Runs one epoch of updates and returns `(mean train loss, last lr)`.
pub fn train_epoch<O: Objective>(
    params: &mut ParamStore,
    state: &mut TrainState,
    objective: &O,
    train: &[O::Example],
    opts: &TrainOptions,
) -> Result<(f64, f64)> {
    let warmup = opts.warmup_steps(train.len());
    let order = epoch_order(opts.shuffle_seed, state.epochs_done, train.len());
    let mut loss_sum = 0.0;
    let mut batches = 0usize;
    let mut lr = 0.0;
    for chunk in order.chunks(opts.batch_size) {
        let batch: Vec<&O::Example> = chunk.iter().map(|&i| &train[i]).collect();
        let (loss, grads) = batch_gradients(params, objective, &batch)?;
        lr = opts.lr_scale * noam_lr(state.adam.step + 1, warmup, opts.d)?;
        state.adam.update(params, &grads, lr)?;
        loss_sum += loss;
        batches += 1;
    }
    Ok((if batches > 0 { loss_sum / batches as f64 } else { 0.0 }, lr))
}

/// Trains until `opts.max_epochs` epochs are done, evaluating `val` (or the
/// training loss when `val` is empty) after every epoch and keeping a copy
/// of the best parameters. `on_epoch` sees each finished epoch and may stop
/// training early by returning `false`.
pub fn train<O: Objective>(
    params: &mut ParamStore,
    state: &mut TrainState,
    objective: &O,
    train: &[O::Example],
    val: &[O::Example],
    opts: &TrainOptions,
    mut on_epoch: impl FnMut(&EpochRecord, &ParamStore, &TrainState) -> bool,
) -> Result<()> {
    opts.validate()?;
    if train.is_empty() {
        return Err(crate::error::data("training set is empty"));
    }
    while state.epochs_done < opts.max_epochs {
        let (train_loss, lr) = train_epoch(params, state, objective, train, opts).map_err(diverged)?;
        if !train_loss.is_finite() {
            return Err(crate::Error::Diverged(alloc::format!("training loss {train_loss}")));
        }
        if let Some((_, p)) = params.iter().find(|(_, p)| !p.value.is_finite()) {
            return Err(crate::Error::Diverged(alloc::format!("parameter {} is no longer finite", p.name)));
        }
        let val_loss = if val.is_empty() {
            None
        } else {
            Some(evaluate_loss(params, objective, val).map_err(diverged)?)
        };
        state.epochs_done += 1;
        let record = EpochRecord {
            epoch: state.epochs_done,
            train_loss,
            val_loss,
            lr,
        };
        state.history.push(record);
        let score = val_loss.unwrap_or(train_loss);
        if state.best_loss.is_none_or(|b| score < b) {
            state.best_loss = Some(score);
            state.best_params = Some(params.clone());
        }
        if !on_epoch(&record, params, state) {
            break;
        }
    }
    Ok(())
}
