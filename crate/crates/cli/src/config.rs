//! The JSON run configuration shared by `train` and `cv`.

use std::path::{Path, PathBuf};

use crisp_nam::data::Schema;
use crisp_nam::metrics::MetricOptions;
use crisp_nam::model::Architecture;
use crisp_nam::train::{SearchSpace, TrainConfig};
use crisp_nam::{Error, Result};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    pub train: Option<PathBuf>,
    pub test: Option<PathBuf>,
    pub time_col: String,
    pub event_col: String,
    /// Empty means every other column is continuous.
    pub schema: Schema,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            train: None,
            test: None,
            time_col: "time".into(),
            event_col: "event".into(),
            schema: Schema::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CvConfig {
    pub outer_folds: usize,
    pub inner_folds: usize,
    /// Without search, every outer fold trains `model` with `train`.
    pub search: bool,
}

impl Default for CvConfig {
    fn default() -> Self {
        Self {
            outer_folds: 5,
            inner_folds: 5,
            search: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub data: DataConfig,
    pub model: Architecture,
    pub train: TrainConfig,
    pub search: SearchSpace,
    pub cv: CvConfig,
    pub metrics: MetricOptions,
    pub output_dir: PathBuf,
    pub seed: u64,
}

impl RunConfig {
    /// Parse and validate; relative data paths and `output_dir` resolve
    /// against the config file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        let mut cfg: RunConfig =
            serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new(""));
        for p in [&mut cfg.data.train, &mut cfg.data.test].into_iter().flatten() {
            *p = base.join(&*p);
        }
        if cfg.output_dir.as_os_str().is_empty() {
            cfg.output_dir = PathBuf::from(".");
        }
        cfg.output_dir = base.join(&cfg.output_dir);
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.train.validate()?;
        self.search.validate()?;
        if self.cv.outer_folds < 2 || self.cv.inner_folds < 2 {
            return Err(Error::Config("cv.outer_folds and cv.inner_folds must be >= 2".into()));
        }
        Ok(())
    }

    /// Training settings with the run seed applied.
    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            seed: self.seed,
            ..self.train.clone()
        }
    }

    pub fn train_path(&self) -> Result<&Path> {
        self.data
            .train
            .as_deref()
            .ok_or_else(|| Error::Config("data.train is required (or pass --data)".into()))
    }
}
