//! Mini-batch training with early stopping, and the cross-validation harness.

mod adamw;
mod search;

pub use adamw::{adamw_step, AdamState};
pub use search::{
    cross_validate_fixed, evaluate_candidates, nested_cv, random_search, Candidate, CvReport, FoldResult,
    MetricSummary, SearchOutcome, SearchSpace, Trial,
};

use std::time::Instant;

use log::debug;
use ndarray::Axis;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::data::{stratified_split, SurvivalDataset};
use crate::error::{Error, Result};
use crate::loss::{add_penalty_gradient, l2_penalty, neg_log_partial_likelihood, LossValue, RiskWeights};
use crate::model::{Architecture, Mode, ModelParams};
use crate::rng;

/// How the L2 term enters training.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PenaltyMode {
    /// AdamW-style multiplicative decay.
    Decoupled,
    /// `2 * gamma * theta` added to the gradient.
    Coupled,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub betas: (f64, f64),
    pub adam_eps: f64,
    pub validation_fraction: f64,
    pub penalty: PenaltyMode,
    pub penalize_all_params: bool,
    /// Set from the run seed, never read from config files.
    #[serde(skip)]
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            weight_decay: 1e-4,
            batch_size: 256,
            max_epochs: 100,
            patience: 10,
            betas: (0.9, 0.999),
            adam_eps: 1e-8,
            validation_fraction: 0.2,
            penalty: PenaltyMode::Decoupled,
            penalize_all_params: false,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!(
                "learning_rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if self.weight_decay.is_nan() || self.weight_decay < 0.0 {
            return Err(Error::Config(format!(
                "weight_decay must be >= 0, got {}",
                self.weight_decay
            )));
        }
        if self.batch_size == 0 || self.max_epochs == 0 {
            return Err(Error::Config("batch_size and max_epochs must be >= 1".into()));
        }
        if self.patience == 0 {
            return Err(Error::Config("patience must be >= 1".into()));
        }
        if !(self.validation_fraction > 0.0 && self.validation_fraction < 1.0) {
            return Err(Error::Config(format!(
                "validation_fraction must lie in (0, 1), got {}",
                self.validation_fraction
            )));
        }
        Ok(())
    }
}

/// One line of the JSON-lines training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub val_per_risk: Vec<f64>,
    pub wall_ms: f64,
}

impl EpochRecord {
    /// Equality on everything except wall time.
    pub fn same_values(&self, other: &Self) -> bool {
        self.epoch == other.epoch
            && self.train_loss.to_bits() == other.train_loss.to_bits()
            && self.val_loss.to_bits() == other.val_loss.to_bits()
            && self.val_per_risk == other.val_per_risk
    }
}

#[derive(Debug, Clone)]
pub struct FitResult {
    pub params: ModelParams,
    pub log: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_val_loss: f64,
    pub weights: RiskWeights,
}

/// Loss of an eval-mode model on a whole dataset (full-set risk sets).
pub fn dataset_loss(params: &ModelParams, ds: &SurvivalDataset, weights: &RiskWeights) -> Result<LossValue> {
    let scores = params.predict(ds.features.view())?;
    neg_log_partial_likelihood(scores.eta.view(), &ds.times, &ds.events, weights).map(|(l, _)| l)
}

/// Train on `ds`, holding out a stratified validation split for early stopping.
/// Returns the parameters of the epoch with the lowest validation loss.
pub fn fit(ds: &SurvivalDataset, arch: &Architecture, cfg: &TrainConfig) -> Result<FitResult> {
    cfg.validate()?;
    arch.validate()?;
    ds.require_all_risks("cannot train without events for every risk")?;

    let (train_idx, val_idx) = stratified_split(
        &ds.events,
        cfg.validation_fraction,
        rng::child_seed(cfg.seed, "validation", 0),
    );
    let train = ds.subset(&train_idx);
    let val = ds.subset(&val_idx);
    let hint = "the validation split lacks this event class; use fewer folds or more data";
    train.require_all_risks(hint)?;
    val.require_all_risks(hint)?;
    fit_with_validation(&train, &val, arch, cfg)
}

/// Like [`fit`], with an explicit validation set.
pub fn fit_with_validation(
    train: &SurvivalDataset,
    val: &SurvivalDataset,
    arch: &Architecture,
    cfg: &TrainConfig,
) -> Result<FitResult> {
    fit_observed(train, val, arch, cfg, &mut |_| {})
}

/// [`fit_with_validation`] that calls `on_step` after every optimizer step.
pub fn fit_observed(
    train: &SurvivalDataset,
    val: &SurvivalDataset,
    arch: &Architecture,
    cfg: &TrainConfig,
    on_step: &mut dyn FnMut(&ModelParams),
) -> Result<FitResult> {
    let weights = RiskWeights::compute(&train.events, train.num_risks)?;
    let mut params = ModelParams::init(
        train.num_features(),
        train.num_risks,
        arch,
        &mut rng::stream(cfg.seed, rng::INIT),
    )?;
    let mut state = AdamState::new(&params);
    let mut shuffle_rng = rng::stream(cfg.seed, rng::SHUFFLE);
    let mut dropout_rng = rng::stream(cfg.seed, rng::DROPOUT);

    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut best = params.clone();
    let mut best_val = f64::INFINITY;
    let mut best_epoch = 0;
    let mut stale = 0;
    let mut log = Vec::new();

    for epoch in 1..=cfg.max_epochs {
        let started = Instant::now();
        order.shuffle(&mut shuffle_rng);
        let mut train_loss = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            if arch.batch_norm && batch.len() < 2 {
                continue;
            }
            let x = train.features.select(Axis(0), batch);
            let times: Vec<f64> = batch.iter().map(|&i| train.times[i]).collect();
            let events: Vec<usize> = batch.iter().map(|&i| train.events[i]).collect();
            let (scores, cache) = params.forward(x.view(), Mode::Train, &mut dropout_rng)?;
            let (loss, upstream) = neg_log_partial_likelihood(scores.eta.view(), &times, &events, &weights)?;
            let mut grads = params.backward(upstream.view(), &cache)?;
            if cfg.penalty == PenaltyMode::Coupled && cfg.weight_decay > 0.0 {
                let (_, penalty) = l2_penalty(&params, cfg.weight_decay, cfg.penalize_all_params);
                add_penalty_gradient(&mut grads, &penalty);
            }
            adamw_step(&mut params, &grads, &mut state, cfg)?;
            params.update_running_stats(&cache);
            on_step(&params);
            train_loss += loss.total;
        }

        let val_loss = dataset_loss(&params, val, &weights)?;
        let record = EpochRecord {
            epoch,
            train_loss,
            val_loss: val_loss.total,
            val_per_risk: val_loss.per_risk,
            wall_ms: started.elapsed().as_secs_f64() * 1e3,
        };
        debug!(
            "epoch {epoch}: train {:.4} val {:.4}",
            record.train_loss, record.val_loss
        );
        let improved = record.val_loss.is_finite() && record.val_loss < best_val;
        log.push(record);
        if improved {
            best_val = log[log.len() - 1].val_loss;
            best = params.clone();
            best_epoch = epoch;
            stale = 0;
        } else {
            stale += 1;
            if stale >= cfg.patience {
                break;
            }
        }
    }

    if best_epoch == 0 {
        return Err(Error::validation(
            "validation loss never became finite; training diverged",
        ));
    }
    Ok(FitResult {
        params: best,
        log,
        best_epoch,
        best_val_loss: best_val,
        weights,
    })
}
