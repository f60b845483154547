//! Survival datasets, CSV ingestion, preprocessing and stratified splitting.
//!
//! Event labels follow the usual competing-risks coding: `0` is censored and
//! `1..=K` names the cause that was observed.

use std::collections::BTreeMap;
use std::io::Read;
use std::path::Path;

use log::warn;
use ndarray::{Array2, Axis};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;

/// A fully numeric survival dataset, ready for the model.
#[derive(Debug, Clone, PartialEq)]
pub struct SurvivalDataset {
    pub features: Array2<f64>,
    pub times: Vec<f64>,
    pub events: Vec<usize>,
    pub feature_names: Vec<String>,
    pub num_risks: usize,
}

impl SurvivalDataset {
    pub fn new(
        features: Array2<f64>,
        times: Vec<f64>,
        events: Vec<usize>,
        feature_names: Vec<String>,
        num_risks: usize,
    ) -> Result<Self> {
        let n = features.nrows();
        if times.len() != n || events.len() != n {
            return Err(Error::Shape(format!(
                "{} feature rows, {} times, {} events",
                n,
                times.len(),
                events.len()
            )));
        }
        if feature_names.len() != features.ncols() {
            return Err(Error::Shape(format!(
                "{} feature names for {} columns",
                feature_names.len(),
                features.ncols()
            )));
        }
        validate_outcomes(&times, &events, num_risks)?;
        Ok(Self {
            features,
            times,
            events,
            feature_names,
            num_risks,
        })
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn num_features(&self) -> usize {
        self.features.ncols()
    }

    /// Rows at `indices`, in that order.
    pub fn subset(&self, indices: &[usize]) -> Self {
        Self {
            features: self.features.select(Axis(0), indices),
            times: indices.iter().map(|&i| self.times[i]).collect(),
            events: indices.iter().map(|&i| self.events[i]).collect(),
            feature_names: self.feature_names.clone(),
            num_risks: self.num_risks,
        }
    }

    /// Counts per label, index 0 being censored.
    pub fn event_counts(&self) -> Vec<usize> {
        event_counts(&self.events, self.num_risks)
    }

    /// Fails unless every cause `1..=K` occurs at least once.
    pub fn require_all_risks(&self, hint: &str) -> Result<()> {
        let counts = self.event_counts();
        match (1..=self.num_risks).find(|&k| counts[k] == 0) {
            Some(risk) => Err(Error::MissingRisk {
                risk,
                hint: hint.to_string(),
            }),
            None => Ok(()),
        }
    }
}

pub(crate) fn event_counts(events: &[usize], num_risks: usize) -> Vec<usize> {
    let mut counts = vec![0; num_risks + 1];
    for &e in events {
        if e <= num_risks {
            counts[e] += 1;
        }
    }
    counts
}

fn validate_outcomes(times: &[f64], events: &[usize], num_risks: usize) -> Result<()> {
    for (row, (&t, &e)) in times.iter().zip(events).enumerate() {
        if !t.is_finite() || t < 0.0 {
            return Err(Error::validation(format!(
                "row {row}: observed time {t} must be finite and >= 0"
            )));
        }
        if e > num_risks {
            return Err(Error::validation(format!(
                "row {row}: event label {e} outside 0..={num_risks}"
            )));
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ColumnKind {
    Continuous,
    Categorical,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ColumnSpec {
    pub name: String,
    pub kind: ColumnKind,
}

/// Ordered covariate columns and their kinds.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Schema {
    pub columns: Vec<ColumnSpec>,
}

impl Schema {
    pub fn new(columns: impl IntoIterator<Item = (impl Into<String>, ColumnKind)>) -> Self {
        Self {
            columns: columns
                .into_iter()
                .map(|(name, kind)| ColumnSpec {
                    name: name.into(),
                    kind,
                })
                .collect(),
        }
    }

    /// Every header except the excluded ones, as continuous columns.
    pub fn all_continuous<'a>(headers: impl IntoIterator<Item = &'a str>, exclude: &[&str]) -> Self {
        Self::new(
            headers
                .into_iter()
                .filter(|h| !exclude.contains(h))
                .map(|h| (h.to_string(), ColumnKind::Continuous)),
        )
    }

    pub fn is_empty(&self) -> bool {
        self.columns.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum RawColumn {
    Continuous(Vec<Option<f64>>),
    Categorical(Vec<Option<String>>),
}

impl RawColumn {
    pub fn kind(&self) -> ColumnKind {
        match self {
            RawColumn::Continuous(_) => ColumnKind::Continuous,
            RawColumn::Categorical(_) => ColumnKind::Categorical,
        }
    }

    pub fn len(&self) -> usize {
        match self {
            RawColumn::Continuous(v) => v.len(),
            RawColumn::Categorical(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn is_missing(&self, row: usize) -> bool {
        match self {
            RawColumn::Continuous(v) => v[row].is_none(),
            RawColumn::Categorical(v) => v[row].is_none(),
        }
    }
}

/// Covariates before imputation and encoding. Missing cells are `None`.
#[derive(Debug, Clone, PartialEq)]
pub struct RawFeatures {
    pub names: Vec<String>,
    pub columns: Vec<RawColumn>,
}

impl RawFeatures {
    pub fn num_rows(&self) -> usize {
        self.columns.first().map_or(0, RawColumn::len)
    }

    pub fn column(&self, name: &str) -> Option<&RawColumn> {
        self.names.iter().position(|n| n == name).map(|i| &self.columns[i])
    }

    /// Wrap an already numeric matrix; every column becomes continuous.
    pub fn from_matrix(features: &Array2<f64>, names: &[String]) -> Self {
        Self {
            names: names.to_vec(),
            columns: features
                .columns()
                .into_iter()
                .map(|c| RawColumn::Continuous(c.iter().map(|&v| Some(v)).collect()))
                .collect(),
        }
    }

    pub fn subset(&self, indices: &[usize]) -> Self {
        let columns = self
            .columns
            .iter()
            .map(|c| match c {
                RawColumn::Continuous(v) => RawColumn::Continuous(indices.iter().map(|&i| v[i]).collect()),
                RawColumn::Categorical(v) => RawColumn::Categorical(indices.iter().map(|&i| v[i].clone()).collect()),
            })
            .collect();
        Self {
            names: self.names.clone(),
            columns,
        }
    }

    pub fn schema(&self) -> Schema {
        Schema::new(self.names.iter().zip(&self.columns).map(|(n, c)| (n.clone(), c.kind())))
    }
}

/// A dataset as read from disk: raw covariates plus outcomes.
#[derive(Debug, Clone, PartialEq)]
pub struct RawDataset {
    pub features: RawFeatures,
    pub times: Vec<f64>,
    pub events: Vec<usize>,
    pub num_risks: usize,
}

impl RawDataset {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn from_dataset(ds: &SurvivalDataset) -> Self {
        Self {
            features: RawFeatures::from_matrix(&ds.features, &ds.feature_names),
            times: ds.times.clone(),
            events: ds.events.clone(),
            num_risks: ds.num_risks,
        }
    }

    pub fn subset(&self, indices: &[usize]) -> Self {
        Self {
            features: self.features.subset(indices),
            times: indices.iter().map(|&i| self.times[i]).collect(),
            events: indices.iter().map(|&i| self.events[i]).collect(),
            num_risks: self.num_risks,
        }
    }

    /// Replace the inferred risk count, e.g. with the one a model was trained on.
    pub fn with_num_risks(mut self, num_risks: usize) -> Result<Self> {
        validate_outcomes(&self.times, &self.events, num_risks)?;
        self.num_risks = num_risks;
        Ok(self)
    }
}

/// Read a survival CSV. The number of risks is the largest event label seen.
pub fn load_csv(path: impl AsRef<Path>, time_col: &str, event_col: &str, schema: &Schema) -> Result<RawDataset> {
    let file = std::fs::File::open(path.as_ref()).map_err(|e| {
        Error::Io(std::io::Error::new(
            e.kind(),
            format!("{}: {e}", path.as_ref().display()),
        ))
    })?;
    read_csv(file, time_col, event_col, schema)
}

pub fn read_csv(reader: impl Read, time_col: &str, event_col: &str, schema: &Schema) -> Result<RawDataset> {
    let table = Table::read(reader)?;
    let time_idx = table.index_of(time_col)?;
    let event_idx = table.index_of(event_col)?;
    let schema = if schema.is_empty() {
        Schema::all_continuous(table.headers.iter().map(String::as_str), &[time_col, event_col])
    } else {
        schema.clone()
    };

    let mut times = Vec::with_capacity(table.rows.len());
    let mut events = Vec::with_capacity(table.rows.len());
    for (r, row) in table.rows.iter().enumerate() {
        let line = r + 1;
        let t = parse_number(&row[time_idx], line, time_col)?
            .ok_or_else(|| Error::validation(format!("row {line}: missing value in time column '{time_col}'")))?;
        if !t.is_finite() || t < 0.0 {
            return Err(Error::validation(format!(
                "row {line}: time {t} in column '{time_col}' must be finite and >= 0"
            )));
        }
        let raw_event = row[event_idx].trim();
        let e: i64 = raw_event.parse().map_err(|_| Error::Parse {
            row: line,
            column: event_col.to_string(),
            value: raw_event.to_string(),
        })?;
        if e < 0 {
            return Err(Error::validation(format!(
                "row {line}: event label {e} in column '{event_col}' must be >= 0"
            )));
        }
        times.push(t);
        events.push(e as usize);
    }
    let num_risks = events.iter().copied().max().unwrap_or(0);
    let features = table.features(&schema)?;
    Ok(RawDataset {
        features,
        times,
        events,
        num_risks,
    })
}

/// Read a covariate-only CSV (no outcome columns), e.g. for prediction.
pub fn load_features_csv(path: impl AsRef<Path>, schema: &Schema) -> Result<RawFeatures> {
    let table = Table::read(std::fs::File::open(path.as_ref())?)?;
    let schema = if schema.is_empty() {
        Schema::all_continuous(table.headers.iter().map(String::as_str), &[])
    } else {
        schema.clone()
    };
    table.features(&schema)
}

struct Table {
    headers: Vec<String>,
    rows: Vec<Vec<String>>,
}

impl Table {
    fn read(reader: impl Read) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new()
            .has_headers(true)
            .comment(Some(b'#'))
            .from_reader(reader);
        let headers = rdr.headers()?.iter().map(|h| h.trim().to_string()).collect();
        let mut rows = Vec::new();
        for record in rdr.records() {
            rows.push(record?.iter().map(str::to_string).collect());
        }
        Ok(Self { headers, rows })
    }

    fn index_of(&self, name: &str) -> Result<usize> {
        self.headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::MissingColumn(name.to_string()))
    }

    fn features(&self, schema: &Schema) -> Result<RawFeatures> {
        let mut names = Vec::with_capacity(schema.columns.len());
        let mut columns = Vec::with_capacity(schema.columns.len());
        for spec in &schema.columns {
            let idx = self.index_of(&spec.name)?;
            let column = match spec.kind {
                ColumnKind::Continuous => RawColumn::Continuous(
                    self.rows
                        .iter()
                        .enumerate()
                        .map(|(r, row)| parse_number(&row[idx], r + 1, &spec.name))
                        .collect::<Result<_>>()?,
                ),
                ColumnKind::Categorical => RawColumn::Categorical(
                    self.rows
                        .iter()
                        .map(|row| {
                            let v = row[idx].trim();
                            (!v.is_empty()).then(|| v.to_string())
                        })
                        .collect(),
                ),
            };
            names.push(spec.name.clone());
            columns.push(column);
        }
        Ok(RawFeatures { names, columns })
    }
}

fn parse_number(cell: &str, row: usize, column: &str) -> Result<Option<f64>> {
    let v = cell.trim();
    if v.is_empty() {
        return Ok(None);
    }
    v.parse::<f64>().map(Some).map_err(|_| Error::Parse {
        row,
        column: column.to_string(),
        value: v.to_string(),
    })
}

/// Per-column scaling, encoding and imputation state fitted on training data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Preprocessor {
    pub columns: Vec<FittedColumn>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum FittedColumn {
    Continuous {
        name: String,
        mean: f64,
        /// Population standard deviation; 1 for constant columns.
        std: f64,
    },
    Categorical {
        name: String,
        /// Sorted observed categories; defines the one-hot block order.
        vocabulary: Vec<String>,
        mode: String,
    },
}

impl FittedColumn {
    pub fn name(&self) -> &str {
        match self {
            FittedColumn::Continuous { name, .. } | FittedColumn::Categorical { name, .. } => name,
        }
    }

    fn kind(&self) -> ColumnKind {
        match self {
            FittedColumn::Continuous { .. } => ColumnKind::Continuous,
            FittedColumn::Categorical { .. } => ColumnKind::Categorical,
        }
    }
}

/// Where a model input column came from.
#[derive(Debug, Clone, PartialEq)]
pub enum OutputColumn {
    Scaled {
        name: String,
        mean: f64,
        std: f64,
    },
    OneHot {
        name: String,
        source: String,
        category: String,
    },
}

impl OutputColumn {
    pub fn name(&self) -> &str {
        match self {
            OutputColumn::Scaled { name, .. } | OutputColumn::OneHot { name, .. } => name,
        }
    }

    /// Map a preprocessed value back to the original scale.
    pub fn to_original(&self, x: f64) -> f64 {
        match self {
            OutputColumn::Scaled { mean, std, .. } => x * std + mean,
            OutputColumn::OneHot { .. } => x,
        }
    }

    pub fn is_binary(&self) -> bool {
        matches!(self, OutputColumn::OneHot { .. })
    }
}

impl Preprocessor {
    pub fn fit(raw: &RawFeatures) -> Result<Self> {
        if raw.num_rows() == 0 {
            return Err(Error::validation("cannot fit a preprocessor on an empty dataset"));
        }
        let mut columns = Vec::with_capacity(raw.columns.len());
        for (name, column) in raw.names.iter().zip(&raw.columns) {
            let fitted = match column {
                RawColumn::Continuous(values) => {
                    let observed: Vec<f64> = values.iter().flatten().copied().collect();
                    if observed.is_empty() {
                        return Err(Error::validation(format!("column '{name}' has no observed values")));
                    }
                    let n = observed.len() as f64;
                    let mean = observed.iter().sum::<f64>() / n;
                    let var = observed.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
                    let std = if var > 0.0 { var.sqrt() } else { 1.0 };
                    FittedColumn::Continuous {
                        name: name.clone(),
                        mean,
                        std,
                    }
                }
                RawColumn::Categorical(values) => {
                    let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
                    for v in values.iter().flatten() {
                        *counts.entry(v.as_str()).or_default() += 1;
                    }
                    // BTreeMap iterates in sorted order, so ties resolve to the smallest label.
                    let mode = counts
                        .iter()
                        .fold(None::<(&str, usize)>, |best, (&c, &n)| match best {
                            Some((_, bn)) if bn >= n => best,
                            _ => Some((c, n)),
                        })
                        .map(|(c, _)| c.to_string())
                        .ok_or_else(|| Error::validation(format!("column '{name}' has no observed values")))?;
                    FittedColumn::Categorical {
                        name: name.clone(),
                        vocabulary: counts.keys().map(|c| c.to_string()).collect(),
                        mode,
                    }
                }
            };
            columns.push(fitted);
        }
        Ok(Self { columns })
    }

    /// Output columns: scaled continuous columns first, then one-hot blocks.
    pub fn output_columns(&self) -> Vec<OutputColumn> {
        let mut out = Vec::new();
        for c in &self.columns {
            if let FittedColumn::Continuous { name, mean, std } = c {
                out.push(OutputColumn::Scaled {
                    name: name.clone(),
                    mean: *mean,
                    std: *std,
                });
            }
        }
        for c in &self.columns {
            if let FittedColumn::Categorical { name, vocabulary, .. } = c {
                for cat in vocabulary {
                    out.push(OutputColumn::OneHot {
                        name: format!("{name}={cat}"),
                        source: name.clone(),
                        category: cat.clone(),
                    });
                }
            }
        }
        out
    }

    /// The raw columns this preprocessor reads.
    pub fn schema(&self) -> Schema {
        Schema::new(self.columns.iter().map(|c| (c.name().to_string(), c.kind())))
    }

    pub fn feature_names(&self) -> Vec<String> {
        self.output_columns().iter().map(|c| c.name().to_string()).collect()
    }

    pub fn transform_features(&self, raw: &RawFeatures) -> Result<Array2<f64>> {
        let n = raw.num_rows();
        let mut sources = Vec::with_capacity(self.columns.len());
        for fitted in &self.columns {
            let column = raw
                .column(fitted.name())
                .ok_or_else(|| Error::MissingColumn(fitted.name().to_string()))?;
            if column.kind() != fitted.kind() {
                return Err(Error::validation(format!(
                    "column '{}' is {:?} but the preprocessor expects {:?}",
                    fitted.name(),
                    column.kind(),
                    fitted.kind()
                )));
            }
            sources.push(column);
        }

        let width = self.output_columns().len();
        let mut out = Array2::zeros((n, width));
        let mut col = 0;
        for (fitted, column) in self.columns.iter().zip(&sources) {
            if let (FittedColumn::Continuous { mean, std, .. }, RawColumn::Continuous(values)) = (fitted, column) {
                for (r, v) in values.iter().enumerate() {
                    out[[r, col]] = (v.unwrap_or(*mean) - mean) / std;
                }
                col += 1;
            }
        }
        for (fitted, column) in self.columns.iter().zip(&sources) {
            if let (FittedColumn::Categorical { vocabulary, mode, .. }, RawColumn::Categorical(values)) =
                (fitted, column)
            {
                for (r, v) in values.iter().enumerate() {
                    let v = v.as_deref().unwrap_or(mode);
                    // Unseen categories leave the block all-zero.
                    if let Ok(j) = vocabulary.binary_search_by(|c| c.as_str().cmp(v)) {
                        out[[r, col + j]] = 1.0;
                    }
                }
                col += vocabulary.len();
            }
        }
        Ok(out)
    }

    pub fn transform(&self, raw: &RawDataset) -> Result<SurvivalDataset> {
        SurvivalDataset::new(
            self.transform_features(&raw.features)?,
            raw.times.clone(),
            raw.events.clone(),
            self.feature_names(),
            raw.num_risks,
        )
    }
}

/// One train/test partition of a cross-validation split.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Fold {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

/// Stratified k-fold split on event labels.
///
/// Each class is shuffled and dealt round-robin across the folds, continuing
/// from where the previous class stopped, so per-class fold sizes differ by at
/// most one and overall fold sizes stay balanced.
pub fn stratified_kfold(events: &[usize], folds: usize, seed: u64) -> Result<Vec<Fold>> {
    let n = events.len();
    if folds < 2 {
        return Err(Error::validation(format!("need at least 2 folds, got {folds}")));
    }
    if folds > n {
        return Err(Error::validation(format!(
            "{folds} folds requested for only {n} subjects"
        )));
    }
    let mut rng = rng::stream(seed, rng::DATA_SPLIT);
    let mut assignment = vec![0usize; n];
    let mut offset = 0;
    for (label, mut members) in group_by_label(events) {
        if members.len() < folds {
            warn!(
                "event class {label} has {} members for {folds} folds; stratification is best-effort",
                members.len()
            );
        }
        members.shuffle(&mut rng);
        for (j, &i) in members.iter().enumerate() {
            assignment[i] = (offset + j) % folds;
        }
        offset += members.len();
    }
    Ok((0..folds)
        .map(|f| {
            let (test, train): (Vec<usize>, Vec<usize>) = (0..n).partition(|&i| assignment[i] == f);
            Fold { train, test }
        })
        .collect())
}

/// Stratified holdout: returns (kept, held_out) index sets with roughly
/// `fraction` of each event class held out. Classes with at least two members
/// contribute to both sides.
pub fn stratified_split(events: &[usize], fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut rng = rng::stream(seed, rng::DATA_SPLIT);
    let mut kept = Vec::new();
    let mut held = Vec::new();
    for (_, mut members) in group_by_label(events) {
        members.shuffle(&mut rng);
        let m = members.len();
        let mut take = (fraction * m as f64).round() as usize;
        if m >= 2 {
            take = take.clamp(1, m - 1);
        }
        held.extend_from_slice(&members[..take.min(m)]);
        kept.extend_from_slice(&members[take.min(m)..]);
    }
    kept.sort_unstable();
    held.sort_unstable();
    (kept, held)
}

fn group_by_label(events: &[usize]) -> BTreeMap<usize, Vec<usize>> {
    let mut groups: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, &e) in events.iter().enumerate() {
        groups.entry(e).or_default().push(i);
    }
    groups
}
