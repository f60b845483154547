//! Synthetic two-cause benchmark with shared quadratic effects.
//!
//! Covariates are `3 * dim_per_group` standard normals split into groups
//! `x1`, `x2`, `x3`. Latent times are exponential with rates
//!
//! ```text
//! rate_1 = gamma_t * (|x3|^2 + sum(x1))
//! rate_2 = gamma_t * (|x3|^2 + sum(x2))
//! ```
//!
//! floored at `MIN_RATE`, so a cause whose linear term cancels the shared
//! term is effectively never observed. Covariates are never redrawn and
//! stay exactly standard normal. The first latent event is observed; then exactly
//! `floor(censor_fraction * n)` subjects chosen at random are censored at a
//! time uniform on `(0, min(T1, T2)]`.

use ndarray::Array2;
use rand::seq::index::sample;
use rand::Rng as _;
use rand_distr::{Distribution, Exp, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::data::SurvivalDataset;
use crate::error::{Error, Result};
use crate::rng;

pub const MIN_RATE: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthConfig {
    pub n: usize,
    pub gamma_t: f64,
    pub censor_fraction: f64,
    pub seed: u64,
    pub dim_per_group: usize,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n: 30_000,
            gamma_t: 10.0,
            censor_fraction: 0.5,
            seed: 0,
            dim_per_group: 4,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return Err(Error::Config("synthetic n must be >= 1".into()));
        }
        if !(self.gamma_t > 0.0 && self.gamma_t.is_finite()) {
            return Err(Error::Config(format!("gamma_t must be positive, got {}", self.gamma_t)));
        }
        if !(0.0..=1.0).contains(&self.censor_fraction) {
            return Err(Error::Config(format!(
                "censor_fraction must lie in [0, 1], got {}",
                self.censor_fraction
            )));
        }
        if self.dim_per_group == 0 {
            return Err(Error::Config("dim_per_group must be >= 1".into()));
        }
        Ok(())
    }
}

/// Column names: `x1..x{3g}`; the first `g` form group 1, the next `g`
/// group 2, the last `g` the shared group.
pub fn feature_names(dim_per_group: usize) -> Vec<String> {
    (1..=3 * dim_per_group).map(|j| format!("x{j}")).collect()
}

pub fn generate(cfg: &SynthConfig) -> Result<SurvivalDataset> {
    cfg.validate()?;
    let g = cfg.dim_per_group;
    let p = 3 * g;
    let mut rng = rng::stream(cfg.seed, rng::SYNTH);
    let mut features = Array2::zeros((cfg.n, p));
    let mut times = Vec::with_capacity(cfg.n);
    let mut events = Vec::with_capacity(cfg.n);

    let mut x = vec![0.0; p];
    for mut row in features.rows_mut() {
        for v in x.iter_mut() {
            *v = StandardNormal.sample(&mut rng);
        }
        let shared: f64 = x[2 * g..].iter().map(|v| v * v).sum();
        let rate1 = (cfg.gamma_t * (shared + x[..g].iter().sum::<f64>())).max(MIN_RATE);
        let rate2 = (cfg.gamma_t * (shared + x[g..2 * g].iter().sum::<f64>())).max(MIN_RATE);
        let t1 = Exp::new(rate1).expect("positive rate").sample(&mut rng);
        let t2 = Exp::new(rate2).expect("positive rate").sample(&mut rng);
        row.assign(&ndarray::ArrayView1::from(&x[..]));
        if t1 <= t2 {
            times.push(t1);
            events.push(1);
        } else {
            times.push(t2);
            events.push(2);
        }
    }

    let n_censored = (cfg.censor_fraction * cfg.n as f64).floor() as usize;
    let mut chosen = sample(&mut rng, cfg.n, n_censored.min(cfg.n)).into_vec();
    chosen.sort_unstable();
    for i in chosen {
        let u: f64 = rng.random();
        times[i] *= 1.0 - u;
        events[i] = 0;
    }

    SurvivalDataset::new(features, times, events, feature_names(g), 2)
}
