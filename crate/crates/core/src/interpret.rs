//! Shape functions and feature importances.

use ndarray::{Array2, ArrayView2};

use crate::data::OutputColumn;
use crate::error::{Error, Result};
use crate::metrics::quantile;
use crate::model::ModelParams;

pub const DEFAULT_GRID_SIZE: usize = 256;
pub const DEFAULT_TOP_N: usize = 10;

/// `s_ik` evaluated on a grid, plus the observed values for a rug plot.
#[derive(Debug, Clone, PartialEq)]
pub struct ShapeCurve {
    pub feature: usize,
    pub feature_name: String,
    /// 0-based risk index.
    pub risk: usize,
    pub x_preprocessed: Vec<f64>,
    pub x_original: Vec<f64>,
    pub contribution: Vec<f64>,
    /// Observed preprocessed values of the feature.
    pub rug: Vec<f64>,
    pub rug_original: Vec<f64>,
}

/// Evaluate feature `i`'s contribution to risk index `k` over a grid spanning
/// the observed values: `grid_size` uniform points plus the observed deciles.
/// One-hot columns are evaluated only at 0 and 1.
pub fn shape_function(
    model: &ModelParams,
    columns: &[OutputColumn],
    x: ArrayView2<f64>,
    i: usize,
    k: usize,
    grid_size: usize,
) -> Result<ShapeCurve> {
    if i >= model.num_features() || i >= columns.len() {
        return Err(Error::validation(format!("feature index {i} out of range")));
    }
    if k >= model.num_risks {
        return Err(Error::validation(format!("risk index {k} out of range")));
    }
    if x.nrows() == 0 {
        return Err(Error::validation("shape functions need observed data"));
    }
    let column = &columns[i];
    let rug: Vec<f64> = x.column(i).to_vec();
    let grid = if column.is_binary() {
        vec![0.0, 1.0]
    } else {
        let mut sorted = rug.clone();
        sorted.sort_by(f64::total_cmp);
        let (lo, hi) = (sorted[0], sorted[sorted.len() - 1]);
        let mut grid: Vec<f64> = match grid_size {
            0 => Vec::new(),
            1 => vec![lo],
            g => (0..g).map(|j| lo + (hi - lo) * j as f64 / (g - 1) as f64).collect(),
        };
        if grid_size > 1 {
            grid[grid_size - 1] = hi;
        }
        grid.extend((1..10).map(|d| quantile(&sorted, d as f64 / 10.0)));
        grid.sort_by(f64::total_cmp);
        grid.dedup();
        grid
    };
    let contribution = model.feature_contributions(i, &grid)?.column(k).to_vec();
    Ok(ShapeCurve {
        feature: i,
        feature_name: column.name().to_string(),
        risk: k,
        x_original: grid.iter().map(|&x| column.to_original(x)).collect(),
        x_preprocessed: grid,
        contribution,
        rug_original: rug.iter().map(|&x| column.to_original(x)).collect(),
        rug,
    })
}

/// [`shape_function`] addressed by feature name.
pub fn shape_function_by_name(
    model: &ModelParams,
    columns: &[OutputColumn],
    x: ArrayView2<f64>,
    name: &str,
    k: usize,
    grid_size: usize,
) -> Result<ShapeCurve> {
    let i = columns
        .iter()
        .position(|c| c.name() == name)
        .ok_or_else(|| Error::validation(format!("unknown feature '{name}'")))?;
    shape_function(model, columns, x, i, k, grid_size)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ImportanceTable {
    pub feature_names: Vec<String>,
    /// `p x K` mean absolute contribution.
    pub importance: Array2<f64>,
    /// `p x K` mean signed contribution.
    pub signed_mean: Array2<f64>,
    /// Per risk, feature indices by decreasing importance.
    pub rankings: Vec<Vec<usize>>,
}

impl ImportanceTable {
    pub fn top(&self, k: usize, n: usize) -> &[usize] {
        &self.rankings[k][..n.min(self.rankings[k].len())]
    }

    /// 1-based rank of feature `i` for risk index `k`.
    pub fn rank_of(&self, i: usize, k: usize) -> usize {
        self.rankings[k]
            .iter()
            .position(|&j| j == i)
            .expect("ranking is a permutation")
            + 1
    }
}

/// Mean absolute (and signed) per-feature contribution over the rows of `x`.
pub fn importance(model: &ModelParams, x: ArrayView2<f64>, feature_names: &[String]) -> Result<ImportanceTable> {
    if x.nrows() == 0 {
        return Err(Error::validation("importance needs at least one row"));
    }
    if feature_names.len() != x.ncols() {
        return Err(Error::Shape(format!(
            "{} names for {} features",
            feature_names.len(),
            x.ncols()
        )));
    }
    let scores = model.predict(x)?;
    let n = x.nrows() as f64;
    let (_, p, k_risks) = scores.contributions.dim();
    let mut importance = Array2::zeros((p, k_risks));
    let mut signed_mean = Array2::zeros((p, k_risks));
    for i in 0..p {
        for k in 0..k_risks {
            let lane = scores.contributions.slice(ndarray::s![.., i, k]);
            importance[[i, k]] = lane.iter().map(|v| v.abs()).sum::<f64>() / n;
            signed_mean[[i, k]] = lane.sum() / n;
        }
    }
    let rankings = (0..k_risks)
        .map(|k| {
            let mut idx: Vec<usize> = (0..p).collect();
            idx.sort_by(|&a, &b| importance[[b, k]].total_cmp(&importance[[a, k]]).then(a.cmp(&b)));
            idx
        })
        .collect();
    Ok(ImportanceTable {
        feature_names: feature_names.to_vec(),
        importance,
        signed_mean,
        rankings,
    })
}
