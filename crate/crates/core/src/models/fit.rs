//! Minibatch Adam loop shared by every supervised network in the crate.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use taskmask_nn::{exec, Adam, AdamConfig, Grads, ParamStore, Scalar};

use crate::error::{CoreError, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FitConfig {
    pub steps: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub clip_norm: Option<f64>,
    pub seed: u64,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            steps: 1000,
            batch_size: 16,
            lr: 2e-3,
            clip_norm: Some(10.0),
            seed: 0,
        }
    }
}

impl FitConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(CoreError::InvalidArgument(
                "batch_size and lr must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// Endless sequence of shuffled epochs over `0..n`.
pub struct BatchSampler {
    rng: ChaCha8Rng,
    order: Vec<usize>,
    pos: usize,
}

impl BatchSampler {
    pub fn new(n: usize, seed: u64) -> Self {
        assert!(n > 0, "cannot sample from an empty set");
        Self {
            rng: ChaCha8Rng::seed_from_u64(seed),
            order: (0..n).collect(),
            pos: n,
        }
    }

    pub fn next_batch(&mut self, size: usize) -> Vec<usize> {
        let mut out = Vec::with_capacity(size);
        while out.len() < size {
            if self.pos == self.order.len() {
                self.order.shuffle(&mut self.rng);
                self.pos = 0;
            }
            out.push(self.order[self.pos]);
            self.pos += 1;
        }
        out
    }
}

/// Mean loss and mean gradient of `per_item` over `batch`, summed in batch order.
pub fn batch_grads<S, F>(params: &ParamStore<S>, batch: &[usize], per_item: &F) -> (f64, Grads<S>)
where
    S: Scalar,
    F: Fn(&ParamStore<S>, usize) -> (f64, Grads<S>) + Sync,
{
    let parts = exec::par_map(batch, |&i| per_item(params, i));
    let loss = parts.iter().map(|p| p.0).sum::<f64>() / batch.len() as f64;
    let mut grads = Grads::sum_ordered(parts.into_iter().map(|p| p.1).collect()).expect("non-empty batch");
    grads.scale(S::lit(1.0 / batch.len() as f64));
    (loss, grads)
}

/// Trains `params` for `cfg.steps` steps; returns the per-step mean loss.
pub fn fit<F>(params: &mut ParamStore<f32>, cfg: &FitConfig, n: usize, per_item: F) -> Result<Vec<f64>>
where
    F: Fn(&ParamStore<f32>, usize) -> (f64, Grads<f32>) + Sync,
{
    cfg.validate()?;
    let mut adam = Adam::new(
        AdamConfig {
            clip_norm: cfg.clip_norm,
            ..AdamConfig::with_lr(cfg.lr)
        },
        params,
    );
    let mut sampler = BatchSampler::new(n, cfg.seed);
    let mut history = Vec::with_capacity(cfg.steps);
    for step in 0..cfg.steps {
        let batch = sampler.next_batch(cfg.batch_size);
        let (loss, grads) = batch_grads(params, &batch, &per_item);
        if !loss.is_finite() || !grads.all_finite() {
            return Err(CoreError::NonFinite { step });
        }
        adam.step(params, &grads);
        history.push(loss);
    }
    Ok(history)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sampler_covers_each_epoch_once() {
        let mut s = BatchSampler::new(10, 1);
        let mut seen = s.next_batch(10);
        seen.sort();
        assert_eq!(seen, (0..10).collect::<Vec<_>>());
        let a = BatchSampler::new(10, 1).next_batch(25);
        assert_eq!(a, BatchSampler::new(10, 1).next_batch(25));
    }
}
