//! A trained model bundled with everything needed to score new raw data.

use ndarray::Array2;

use crate::data::{Preprocessor, RawDataset, RawFeatures, SurvivalDataset};
use crate::error::Result;
use crate::hazard::{breslow, predict_cif, BaselineHazards, CifCurves};
use crate::loss::RiskWeights;
use crate::metrics::{self, EvalHorizons, MetricOptions, MetricReport};
use crate::model::{Architecture, ModelParams, RiskScores};
use crate::train::{fit, FitResult, TrainConfig};

#[derive(Debug, Clone, PartialEq)]
pub struct FittedModel {
    pub preprocessor: Preprocessor,
    pub params: ModelParams,
    pub baseline: BaselineHazards,
    /// Horizons from the training event times, reused on every test set.
    pub horizons: EvalHorizons,
    pub risk_weights: RiskWeights,
}

impl FittedModel {
    /// Fit preprocessing and the network on `raw`, then the Breslow baselines.
    pub fn train(raw: &RawDataset, arch: &Architecture, cfg: &TrainConfig) -> Result<(Self, FitResult)> {
        let preprocessor = Preprocessor::fit(&raw.features)?;
        let ds = preprocessor.transform(raw)?;
        Self::train_preprocessed(preprocessor, &ds, arch, cfg)
    }

    pub fn train_preprocessed(
        preprocessor: Preprocessor,
        ds: &SurvivalDataset,
        arch: &Architecture,
        cfg: &TrainConfig,
    ) -> Result<(Self, FitResult)> {
        let result = fit(ds, arch, cfg)?;
        let model = Self::from_params(preprocessor, result.params.clone(), result.weights.clone(), ds)?;
        Ok((model, result))
    }

    /// Attach baselines and horizons computed on the training data `ds`.
    pub fn from_params(
        preprocessor: Preprocessor,
        params: ModelParams,
        risk_weights: RiskWeights,
        ds: &SurvivalDataset,
    ) -> Result<Self> {
        let scores = params.predict(ds.features.view())?;
        let baseline = breslow(scores.eta.view(), &ds.times, &ds.events)?;
        let horizons = metrics::horizons(&ds.times, &ds.events, ds.num_risks);
        Ok(Self {
            preprocessor,
            params,
            baseline,
            horizons,
            risk_weights,
        })
    }

    pub fn num_risks(&self) -> usize {
        self.params.num_risks
    }

    pub fn transform(&self, features: &RawFeatures) -> Result<Array2<f64>> {
        self.preprocessor.transform_features(features)
    }

    pub fn scores(&self, features: &RawFeatures) -> Result<RiskScores> {
        self.params.predict(self.transform(features)?.view())
    }

    /// CIF curves per subject up to `horizon`.
    pub fn predict_cif(&self, features: &RawFeatures, horizon: f64) -> Result<Vec<CifCurves>> {
        let scores = self.scores(features)?;
        scores
            .eta
            .rows()
            .into_iter()
            .map(|row| predict_cif(&self.baseline, row, horizon))
            .collect()
    }

    pub fn evaluate(&self, raw: &RawDataset, opts: &MetricOptions) -> Result<MetricReport> {
        let ds = self.preprocessor.transform(raw)?;
        self.evaluate_preprocessed(&ds, opts)
    }

    pub fn evaluate_preprocessed(&self, ds: &SurvivalDataset, opts: &MetricOptions) -> Result<MetricReport> {
        let scores = self.params.predict(ds.features.view())?;
        metrics::evaluate(
            &self.baseline,
            scores.eta.view(),
            &ds.times,
            &ds.events,
            &self.horizons,
            opts,
        )
    }
}
