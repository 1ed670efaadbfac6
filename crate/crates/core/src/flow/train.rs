//! Maximum-likelihood training of the flow on simulated pairs.

use ndarray::{s, Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::model::{FlowModel, ParamMap, Standardizer};
use super::FlowArchitecture;
use crate::nn::{Adam, Layered};
use crate::{rng, Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub learning_rate: f64,
    pub validation_fraction: f64,
    pub patience: usize,
    pub max_epochs: usize,
    /// Global gradient-norm clip; `0` disables clipping.
    pub clip_norm: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 200,
            learning_rate: 4.2e-4,
            validation_fraction: 0.10,
            patience: 20,
            max_epochs: 500,
            clip_norm: 5.0,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Validation("train.batch_size must be >= 1".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Validation(format!("train.learning_rate must be positive, got {}", self.learning_rate)));
        }
        if !(self.validation_fraction > 0.0 && self.validation_fraction < 1.0) {
            return Err(Error::Validation(format!(
                "train.validation_fraction must lie in (0, 1), got {}",
                self.validation_fraction
            )));
        }
        if self.max_epochs == 0 || self.patience == 0 {
            return Err(Error::Validation("train.max_epochs and train.patience must be >= 1".into()));
        }
        if !(self.clip_norm >= 0.0) {
            return Err(Error::Validation("train.clip_norm must be >= 0".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub epochs: Vec<EpochRecord>,
    pub initial_val_loss: f64,
    pub best_epoch: usize,
    pub best_val_loss: f64,
    pub stopped_early: bool,
    pub n_train: usize,
    pub n_val: usize,
}

/// Deterministic train/validation split of `n` rows.
pub fn split_indices(n: usize, validation_fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut rng::seeded(rng::stream_seed(seed, "split", 0)));
    let n_val = ((n as f64 * validation_fraction).round() as usize).clamp(1, n.saturating_sub(1));
    let val = idx.split_off(n - n_val);
    (idx, val)
}

fn chunked_loss(model: &FlowModel, thetas: &Array2<f64>, xs: &Array2<f64>) -> Result<f64> {
    let n = thetas.nrows();
    let mut total = 0.0;
    let mut start = 0;
    while start < n {
        let end = (start + 1000).min(n);
        let l = model.loss(&thetas.slice(s![start..end, ..]), &xs.slice(s![start..end, ..]))?;
        total += l * (end - start) as f64;
        start = end;
    }
    Ok(total / n as f64)
}

/// Trains a freshly initialized flow; returns the model with the best
/// validation loss and the per-epoch log.
pub fn train(
    architecture: &FlowArchitecture,
    param_map: ParamMap,
    thetas: &ArrayView2<f64>,
    xs: &ArrayView2<f64>,
    cfg: &TrainConfig,
) -> Result<(FlowModel, TrainLog)> {
    cfg.validate()?;
    let n = thetas.nrows();
    if xs.nrows() != n {
        return Err(Error::Validation(format!("{n} parameter rows but {} data rows", xs.nrows())));
    }
    if n < 10 * cfg.batch_size {
        return Err(Error::Validation(format!(
            "dataset of {n} rows is smaller than 10 x batch size {}",
            cfg.batch_size
        )));
    }
    let (train_idx, val_idx) = split_indices(n, cfg.validation_fraction, cfg.seed);
    let tt = thetas.select(Axis(0), &train_idx);
    let tx = xs.select(Axis(0), &train_idx);
    let vt = thetas.select(Axis(0), &val_idx);
    let vx = xs.select(Axis(0), &val_idx);
    let standardizer = Standardizer::fit(&tx.view())?;
    let mut model =
        FlowModel::new(architecture.clone(), param_map, standardizer, rng::stream_seed(cfg.seed, "init", 0))?;

    let mut opt = Adam::new(cfg.learning_rate);
    if cfg.clip_norm > 0.0 {
        opt = opt.with_clip(cfg.clip_norm);
    }
    let initial_val_loss = chunked_loss(&model, &vt, &vx)?;
    let mut best = model.clone();
    let mut log = TrainLog {
        epochs: Vec::new(),
        initial_val_loss,
        best_epoch: 0,
        best_val_loss: initial_val_loss,
        stopped_early: false,
        n_train: train_idx.len(),
        n_val: val_idx.len(),
    };
    let mut order: Vec<usize> = (0..tt.nrows()).collect();
    let mut shuffle_rng = rng::seeded(rng::stream_seed(cfg.seed, "shuffle", 0));
    let mut since_best = 0;
    let mut batch_counter = 0usize;
    for epoch in 1..=cfg.max_epochs {
        order.shuffle(&mut shuffle_rng);
        let mut sum = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            let bt = tt.select(Axis(0), chunk);
            let bx = tx.select(Axis(0), chunk);
            model.zero_grad();
            let loss = model.accumulate_gradients(&bt.view(), &bx.view(), 1.0)?;
            if !loss.is_finite() || !model.grad_norm().is_finite() {
                return Err(Error::Training(format!("non-finite loss in epoch {epoch}, batch {batch_counter}")));
            }
            opt.step(&mut model);
            sum += loss * chunk.len() as f64;
            batch_counter += 1;
        }
        let train_loss = sum / order.len() as f64;
        let val_loss = chunked_loss(&model, &vt, &vx)?;
        if !val_loss.is_finite() {
            return Err(Error::Training(format!("non-finite validation loss in epoch {epoch}")));
        }
        log::debug!("epoch {epoch}: train {train_loss:.5} val {val_loss:.5}");
        log.epochs.push(EpochRecord { epoch, train_loss, val_loss });
        if val_loss < log.best_val_loss {
            log.best_val_loss = val_loss;
            log.best_epoch = epoch;
            best = model.clone();
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= cfg.patience {
                log.stopped_early = true;
                break;
            }
        }
    }
    log::info!(
        "training finished after {} epochs, best epoch {} (val loss {:.5})",
        log.epochs.len(),
        log.best_epoch,
        log.best_val_loss
    );
    Ok((best, log))
}
