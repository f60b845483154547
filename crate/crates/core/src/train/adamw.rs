//! AdamW with decoupled weight decay.

use crate::error::{Error, Result};
use crate::model::{Gradients, ModelParams};

use super::{PenaltyMode, TrainConfig};

/// First and second moments for every trainable block, plus the step count.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct AdamState {
    pub step: u64,
    pub first: Vec<Vec<f64>>,
    pub second: Vec<Vec<f64>>,
}

impl AdamState {
    pub fn new(params: &ModelParams) -> Self {
        let shapes: Vec<usize> = params.trainable().iter().map(|(_, b)| b.len()).collect();
        Self {
            step: 0,
            first: shapes.iter().map(|&n| vec![0.0; n]).collect(),
            second: shapes.iter().map(|&n| vec![0.0; n]).collect(),
        }
    }
}

/// One update. Decay (`theta -= lr * gamma * theta`) is applied before the
/// bias-corrected Adam step. In coupled mode the caller is expected to have
/// added the penalty gradient already and no decay is applied here.
pub fn adamw_step(params: &mut ModelParams, grads: &Gradients, state: &mut AdamState, cfg: &TrainConfig) -> Result<()> {
    if !grads.is_finite() {
        return Err(Error::validation("non-finite gradient; aborting optimizer step"));
    }
    let grad_blocks = grads.slices();
    let mut blocks = params.trainable_mut();
    if grad_blocks.len() != blocks.len() || state.first.len() != blocks.len() {
        return Err(Error::Shape("gradient layout does not match parameters".into()));
    }
    state.step += 1;
    let t = state.step as i32;
    let (b1, b2) = cfg.betas;
    let correction1 = 1.0 - b1.powi(t);
    let correction2 = 1.0 - b2.powi(t);
    let decay = match cfg.penalty {
        PenaltyMode::Decoupled => cfg.learning_rate * cfg.weight_decay,
        PenaltyMode::Coupled => 0.0,
    };

    for (b, (kind, theta)) in blocks.iter_mut().enumerate() {
        let g = grad_blocks[b];
        let m = &mut state.first[b];
        let v = &mut state.second[b];
        let decays = decay > 0.0 && (cfg.penalize_all_params || kind.is_weight());
        for j in 0..theta.len() {
            if decays {
                theta[j] -= decay * theta[j];
            }
            m[j] = b1 * m[j] + (1.0 - b1) * g[j];
            v[j] = b2 * v[j] + (1.0 - b2) * g[j] * g[j];
            let m_hat = m[j] / correction1;
            let v_hat = v[j] / correction2;
            theta[j] -= cfg.learning_rate * m_hat / (v_hat.sqrt() + cfg.adam_eps);
        }
    }
    Ok(())
}
