//! Random hyperparameter search and nested cross-validation.

use log::{info, warn};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::{stratified_kfold, Preprocessor, RawDataset, SurvivalDataset};
use crate::error::{Error, Result};
use crate::metrics::{MetricKind, MetricOptions, MetricReport};
use crate::model::Architecture;
use crate::pipeline::FittedModel;
use crate::rng;

use super::{dataset_loss, fit, TrainConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SearchSpace {
    /// Log-uniform.
    pub learning_rate: (f64, f64),
    /// Log-uniform.
    pub weight_decay: (f64, f64),
    pub dropout: (f64, f64),
    pub feature_dropout: (f64, f64),
    /// Inclusive range of hidden-layer counts.
    pub layers: (usize, usize),
    /// Inclusive range of layer widths.
    pub width: (usize, usize),
    pub batch_norm: Vec<bool>,
    pub budget: usize,
    #[serde(skip)]
    pub seed: u64,
}

impl Default for SearchSpace {
    fn default() -> Self {
        Self {
            learning_rate: (1e-4, 1e-2),
            weight_decay: (1e-6, 1e-2),
            dropout: (0.0, 0.5),
            feature_dropout: (0.0, 0.5),
            layers: (1, 3),
            width: (8, 128),
            batch_norm: vec![false, true],
            budget: 25,
            seed: 0,
        }
    }
}

impl SearchSpace {
    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::Config(format!("search space: {what}")));
        if self.budget == 0 {
            return bad("budget must be >= 1");
        }
        if !(self.learning_rate.0 > 0.0 && self.learning_rate.0 <= self.learning_rate.1) {
            return bad("learning_rate range must be positive and ordered");
        }
        if !(self.weight_decay.0 > 0.0 && self.weight_decay.0 <= self.weight_decay.1) {
            return bad("weight_decay range must be positive and ordered");
        }
        for (name, (lo, hi)) in [("dropout", self.dropout), ("feature_dropout", self.feature_dropout)] {
            if !(0.0 <= lo && lo <= hi && hi < 1.0) {
                return bad(&format!("{name} range must lie in [0, 1)"));
            }
        }
        if self.layers.0 == 0 || self.layers.0 > self.layers.1 {
            return bad("layers range must be ordered and >= 1");
        }
        if self.width.0 == 0 || self.width.0 > self.width.1 {
            return bad("width range must be ordered and >= 1");
        }
        if self.batch_norm.is_empty() {
            return bad("batch_norm choices must not be empty");
        }
        Ok(())
    }

    pub fn sample(&self, rng: &mut impl Rng) -> Candidate {
        let log_uniform = |rng: &mut dyn rand::RngCore, (lo, hi): (f64, f64)| -> f64 {
            if lo == hi {
                lo
            } else {
                rng.random_range(lo.ln()..=hi.ln()).exp()
            }
        };
        let uniform = |rng: &mut dyn rand::RngCore, (lo, hi): (f64, f64)| -> f64 {
            if lo == hi {
                lo
            } else {
                rng.random_range(lo..=hi)
            }
        };
        let learning_rate = log_uniform(rng, self.learning_rate);
        let weight_decay = log_uniform(rng, self.weight_decay);
        let dropout = uniform(rng, self.dropout);
        let feature_dropout = uniform(rng, self.feature_dropout);
        let layers = rng.random_range(self.layers.0..=self.layers.1);
        let hidden = (0..layers)
            .map(|_| rng.random_range(self.width.0..=self.width.1))
            .collect();
        let batch_norm = self.batch_norm[rng.random_range(0..self.batch_norm.len())];
        Candidate {
            arch: Architecture {
                hidden,
                batch_norm,
                dropout,
                feature_dropout,
            },
            learning_rate,
            weight_decay,
        }
    }
}

/// One point of the search space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Candidate {
    pub arch: Architecture,
    pub learning_rate: f64,
    pub weight_decay: f64,
}

impl Candidate {
    pub fn train_config(&self, base: &TrainConfig) -> TrainConfig {
        TrainConfig {
            learning_rate: self.learning_rate,
            weight_decay: self.weight_decay,
            ..base.clone()
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trial {
    pub index: usize,
    pub candidate: Candidate,
    pub fold_losses: Vec<f64>,
    /// Mean held-out inner-fold loss; infinite when the trial failed.
    pub mean_loss: f64,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SearchOutcome {
    pub best_index: usize,
    pub trials: Vec<Trial>,
}

impl SearchOutcome {
    pub fn best(&self) -> &Candidate {
        &self.trials[self.best_index].candidate
    }
}

/// Sample `space.budget` candidates and score each by inner-fold loss.
pub fn random_search(
    ds: &SurvivalDataset,
    space: &SearchSpace,
    base: &TrainConfig,
    inner_folds: usize,
) -> Result<SearchOutcome> {
    space.validate()?;
    let mut rng = rng::stream(space.seed, rng::SEARCH);
    let candidates: Vec<Candidate> = (0..space.budget).map(|_| space.sample(&mut rng)).collect();
    evaluate_candidates(ds, &candidates, base, inner_folds, space.seed)
}

/// Score given candidates by mean held-out loss over stratified inner folds.
/// A failing or non-finite trial scores `+inf`; the lowest mean wins.
pub fn evaluate_candidates(
    ds: &SurvivalDataset,
    candidates: &[Candidate],
    base: &TrainConfig,
    inner_folds: usize,
    seed: u64,
) -> Result<SearchOutcome> {
    if candidates.is_empty() {
        return Err(Error::Config("search needs at least one candidate".into()));
    }
    let folds = stratified_kfold(&ds.events, inner_folds, rng::child_seed(seed, "inner-folds", 0))?;
    let mut trials = Vec::with_capacity(candidates.len());
    for (index, candidate) in candidates.iter().enumerate() {
        let cfg = TrainConfig {
            seed: rng::child_seed(seed, "trial", index as u64),
            ..candidate.train_config(base)
        };
        let mut fold_losses = Vec::with_capacity(folds.len());
        let mut error = None;
        for fold in &folds {
            let train = ds.subset(&fold.train);
            let test = ds.subset(&fold.test);
            let outcome = fit(&train, &candidate.arch, &cfg).and_then(|r| dataset_loss(&r.params, &test, &r.weights));
            match outcome {
                Ok(loss) if loss.total.is_finite() => fold_losses.push(loss.total),
                Ok(loss) => {
                    error = Some(format!("non-finite held-out loss {}", loss.total));
                    break;
                }
                Err(e) => {
                    error = Some(e.to_string());
                    break;
                }
            }
        }
        let mean_loss = if error.is_none() {
            fold_losses.iter().sum::<f64>() / fold_losses.len() as f64
        } else {
            f64::INFINITY
        };
        info!(
            "trial {index}: mean inner loss {mean_loss:.4} ({:?})",
            candidate.arch.hidden
        );
        if let Some(e) = &error {
            warn!("trial {index} failed: {e}");
        }
        trials.push(Trial {
            index,
            candidate: candidate.clone(),
            fold_losses,
            mean_loss,
            error,
        });
    }

    let best_index = trials
        .iter()
        .filter(|t| t.mean_loss.is_finite())
        .min_by(|a, b| a.mean_loss.total_cmp(&b.mean_loss))
        .map(|t| t.index);
    match best_index {
        Some(best_index) => Ok(SearchOutcome { best_index, trials }),
        None => Err(Error::SearchFailed {
            trials: trials.len(),
            diagnostics: trials
                .iter()
                .map(|t| format!("trial {}: {}", t.index, t.error.as_deref().unwrap_or("no finite loss")))
                .collect::<Vec<_>>()
                .join("; "),
        }),
    }
}

/// Results for one outer fold.
#[derive(Debug, Clone)]
pub struct FoldResult {
    pub fold: usize,
    pub chosen: Candidate,
    pub search: Option<SearchOutcome>,
    pub report: MetricReport,
}

#[derive(Debug, Clone, Default)]
pub struct CvReport {
    pub folds: Vec<FoldResult>,
}

/// Mean and (sample) standard deviation of one metric across folds.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricSummary {
    pub risk: usize,
    pub quantile: f64,
    pub metric: MetricKind,
    pub mean: f64,
    pub std: f64,
    pub count: usize,
}

impl CvReport {
    /// Values of one (risk, quantile, metric) cell, one per fold where defined.
    pub fn values(&self, risk: usize, quantile: f64, metric: MetricKind) -> Vec<f64> {
        self.folds
            .iter()
            .filter_map(|f| f.report.get(risk, quantile, metric))
            .collect()
    }

    pub fn summary(&self) -> Vec<MetricSummary> {
        let mut keys: Vec<(usize, f64, MetricKind)> = Vec::new();
        for f in &self.folds {
            for r in &f.report.rows {
                if !keys
                    .iter()
                    .any(|&(k, q, m)| k == r.risk && q == r.quantile && m == r.metric)
                {
                    keys.push((r.risk, r.quantile, r.metric));
                }
            }
        }
        keys.into_iter()
            .map(|(risk, quantile, metric)| {
                let v = self.values(risk, quantile, metric);
                let count = v.len();
                let mean = if count > 0 {
                    v.iter().sum::<f64>() / count as f64
                } else {
                    f64::NAN
                };
                let std = if count > 1 {
                    (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (count - 1) as f64).sqrt()
                } else {
                    0.0
                };
                MetricSummary {
                    risk,
                    quantile,
                    metric,
                    mean,
                    std,
                    count,
                }
            })
            .collect()
    }
}

/// Outer stratified folds; for each, search on the training part with inner
/// folds, refit the winner on the whole training part and score the held-out part.
#[allow(clippy::too_many_arguments)]
pub fn nested_cv(
    raw: &RawDataset,
    space: &SearchSpace,
    base: &TrainConfig,
    outer_folds: usize,
    inner_folds: usize,
    seed: u64,
    opts: &MetricOptions,
) -> Result<CvReport> {
    space.validate()?;
    run_outer(
        raw,
        outer_folds,
        seed,
        opts,
        |fold, train| {
            let space = SearchSpace {
                seed: rng::child_seed(seed, "search", fold as u64),
                ..space.clone()
            };
            let outcome = random_search(train, &space, base, inner_folds)?;
            Ok((outcome.best().clone(), Some(outcome)))
        },
        base,
    )
}

/// Outer cross-validation of one fixed configuration (no inner search).
pub fn cross_validate_fixed(
    raw: &RawDataset,
    candidate: &Candidate,
    base: &TrainConfig,
    outer_folds: usize,
    seed: u64,
    opts: &MetricOptions,
) -> Result<CvReport> {
    run_outer(raw, outer_folds, seed, opts, |_, _| Ok((candidate.clone(), None)), base)
}

fn run_outer(
    raw: &RawDataset,
    outer_folds: usize,
    seed: u64,
    opts: &MetricOptions,
    mut choose: impl FnMut(usize, &SurvivalDataset) -> Result<(Candidate, Option<SearchOutcome>)>,
    base: &TrainConfig,
) -> Result<CvReport> {
    let folds = stratified_kfold(&raw.events, outer_folds, rng::child_seed(seed, "outer-folds", 0))?;
    let mut report = CvReport::default();
    for (f, fold) in folds.iter().enumerate() {
        let train_raw = raw.subset(&fold.train);
        let test_raw = raw.subset(&fold.test);
        let preprocessor = Preprocessor::fit(&train_raw.features)?;
        let train = preprocessor.transform(&train_raw)?;
        let test = preprocessor.transform(&test_raw)?;

        let (chosen, search) = choose(f, &train)?;
        let cfg = TrainConfig {
            seed: rng::child_seed(seed, "refit", f as u64),
            ..chosen.train_config(base)
        };
        let (model, fit) = FittedModel::train_preprocessed(preprocessor, &train, &chosen.arch, &cfg)?;
        info!("outer fold {f}: best epoch {} of {}", fit.best_epoch, fit.log.len());
        let metrics = model.evaluate_preprocessed(&test, opts)?;
        report.folds.push(FoldResult {
            fold: f,
            chosen,
            search,
            report: metrics,
        });
    }
    Ok(report)
}
