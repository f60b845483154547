//! Time-dependent discrimination and calibration metrics for competing risks.
//!
//! * **TD-AUC** (cumulative/dynamic): cases are subjects with `T <= t` and
//!   `E = k`; controls are subjects still event-free at `t` plus subjects who
//!   had a competing event by `t`. Subjects censored before `t` are dropped.
//!   Score ties count one half. With IPCW, cases and competing-event controls
//!   are weighted by `1 / G(T-)` and survivors by `1 / G(t)`, where `G` is the
//!   Kaplan-Meier estimate of the censoring survival function.
//! * **TD-CI** (Antolini): pairs `(a, b)` with `E_a = k` and either
//!   `T_a < T_b` or `T_a == T_b` with `b` not a cause-`k` event. The pair is
//!   concordant when `F_k(T_a | x_a) > F_k(T_a | x_b)`. When a horizon is
//!   given only cases with `T_a <= horizon` are used.
//! * **Brier**: mean of `(1{T <= t, E = k} - F_k(t | x))^2`. With IPCW,
//!   subjects censored before `t` get weight 0, observed events `1 / G(T-)`
//!   and survivors `1 / G(t)`.
//!
//! Risks are passed as 1-based event labels throughout this module.

use ndarray::ArrayView2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hazard::{cif_matrix, BaselineHazards};

pub const HORIZON_QUANTILES: [f64; 3] = [0.25, 0.5, 0.75];

/// Kaplan-Meier estimate of the censoring survival function `G(t) = P(C > t)`.
#[derive(Debug, Clone, PartialEq)]
pub struct CensoringKm {
    times: Vec<f64>,
    /// `G` just after each censoring time.
    survival: Vec<f64>,
}

impl CensoringKm {
    pub fn fit(times: &[f64], events: &[usize]) -> Self {
        let mut order: Vec<usize> = (0..times.len()).collect();
        order.sort_by(|&a, &b| times[a].total_cmp(&times[b]));
        let mut out_t = Vec::new();
        let mut out_s = Vec::new();
        let mut g = 1.0;
        let mut at_risk = times.len();
        let mut pos = 0;
        while pos < order.len() {
            let t = times[order[pos]];
            let mut end = pos;
            let mut censored = 0;
            while end < order.len() && times[order[end]] == t {
                if events[order[end]] == 0 {
                    censored += 1;
                }
                end += 1;
            }
            if censored > 0 {
                g *= 1.0 - censored as f64 / at_risk as f64;
                out_t.push(t);
                out_s.push(g);
            }
            at_risk -= end - pos;
            pos = end;
        }
        Self {
            times: out_t,
            survival: out_s,
        }
    }

    /// `G(t)`
    pub fn at(&self, t: f64) -> f64 {
        match self.times.partition_point(|&c| c <= t) {
            0 => 1.0,
            m => self.survival[m - 1],
        }
    }

    /// `G(t-)`
    pub fn before(&self, t: f64) -> f64 {
        match self.times.partition_point(|&c| c < t) {
            0 => 1.0,
            m => self.survival[m - 1],
        }
    }
}

fn inverse(g: f64) -> f64 {
    if g > 0.0 {
        1.0 / g
    } else {
        0.0
    }
}

fn check_lengths(n: usize, times: &[f64], events: &[usize]) -> Result<()> {
    if times.len() != n || events.len() != n {
        return Err(Error::Shape(format!(
            "{n} scores, {} times, {} events",
            times.len(),
            events.len()
        )));
    }
    Ok(())
}

/// Cumulative/dynamic AUC at `t` for cause `risk`. `None` without a case or a control.
pub fn td_auc(scores: &[f64], times: &[f64], events: &[usize], t: f64, risk: usize, ipcw: bool) -> Result<Option<f64>> {
    check_lengths(scores.len(), times, events)?;
    let km = ipcw.then(|| CensoringKm::fit(times, events));
    let weight_at = |g: Option<f64>| g.map_or(1.0, inverse);

    let mut cases = Vec::new();
    let mut controls = Vec::new();
    for n in 0..scores.len() {
        if times[n] > t {
            controls.push((scores[n], weight_at(km.as_ref().map(|k| k.at(t)))));
        } else if events[n] == risk {
            cases.push((scores[n], weight_at(km.as_ref().map(|k| k.before(times[n])))));
        } else if events[n] != 0 {
            controls.push((scores[n], weight_at(km.as_ref().map(|k| k.before(times[n])))));
        }
    }
    if cases.is_empty() || controls.is_empty() {
        return Ok(None);
    }

    // Weighted Mann-Whitney: controls sorted by score with cumulative weights.
    controls.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut cum = Vec::with_capacity(controls.len() + 1);
    cum.push(0.0);
    for &(_, w) in &controls {
        cum.push(cum.last().copied().unwrap_or(0.0) + w);
    }
    let control_total = cum[controls.len()];
    let mut num = 0.0;
    let mut case_total = 0.0;
    for &(s, w) in &cases {
        let below = controls.partition_point(|c| c.0 < s);
        let not_above = controls.partition_point(|c| c.0 <= s);
        num += w * (cum[below] + 0.5 * (cum[not_above] - cum[below]));
        case_total += w;
    }
    let denom = case_total * control_total;
    Ok((denom > 0.0).then(|| num / denom))
}

/// Antolini time-dependent concordance for cause `risk`.
///
/// `cif` is `N x M`: subject `n`'s cumulative incidence at each time of
/// `grid` (right-continuous, zero before `grid[0]`).
pub fn td_concordance(
    cif: ArrayView2<f64>,
    grid: &[f64],
    times: &[f64],
    events: &[usize],
    risk: usize,
    horizon: Option<f64>,
) -> Result<Option<f64>> {
    let n = cif.nrows();
    check_lengths(n, times, events)?;
    if cif.ncols() != grid.len() {
        return Err(Error::Shape(format!(
            "{} CIF columns for a grid of {}",
            cif.ncols(),
            grid.len()
        )));
    }
    let limit = horizon.unwrap_or(f64::INFINITY);
    let mut concordant = 0.0;
    let mut comparable = 0usize;
    for a in 0..n {
        if events[a] != risk || times[a] > limit {
            continue;
        }
        let ta = times[a];
        let col = grid.partition_point(|&g| g <= ta);
        let score = |s: usize| if col == 0 { 0.0 } else { cif[[s, col - 1]] };
        let sa = score(a);
        for b in 0..n {
            if b == a {
                continue;
            }
            let tb = times[b];
            if ta < tb || (ta == tb && events[b] != risk) {
                comparable += 1;
                let sb = score(b);
                if sa > sb {
                    concordant += 1.0;
                } else if sa == sb {
                    concordant += 0.5;
                }
            }
        }
    }
    Ok((comparable > 0).then(|| concordant / comparable as f64))
}

/// Brier score at `t` for cause `risk`.
pub fn brier(scores: &[f64], times: &[f64], events: &[usize], t: f64, risk: usize, ipcw: bool) -> Result<f64> {
    let n = scores.len();
    check_lengths(n, times, events)?;
    if n == 0 {
        return Err(Error::validation("brier score of an empty set"));
    }
    let km = ipcw.then(|| CensoringKm::fit(times, events));
    let mut total = 0.0;
    for i in 0..n {
        let happened = times[i] <= t;
        let outcome = if happened && events[i] == risk { 1.0 } else { 0.0 };
        let w = match &km {
            None => 1.0,
            Some(_) if happened && events[i] == 0 => 0.0,
            Some(km) if happened => inverse(km.before(times[i])),
            Some(km) => inverse(km.at(t)),
        };
        total += w * (outcome - scores[i]).powi(2);
    }
    Ok(total / n as f64)
}

/// Quantile with linear interpolation between order statistics.
pub fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

/// Evaluation times per risk.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalHorizons {
    pub quantiles: Vec<f64>,
    /// Entry `k` holds risk `k + 1`'s horizons, or `None` without events.
    pub per_risk: Vec<Option<Vec<f64>>>,
}

impl EvalHorizons {
    pub fn get(&self, risk: usize) -> Option<&[f64]> {
        self.per_risk.get(risk - 1)?.as_deref()
    }
}

/// The 25th/50th/75th percentiles of each risk's observed event times.
pub fn horizons(times: &[f64], events: &[usize], num_risks: usize) -> EvalHorizons {
    horizons_at(times, events, num_risks, &HORIZON_QUANTILES)
}

pub fn horizons_at(times: &[f64], events: &[usize], num_risks: usize, quantiles: &[f64]) -> EvalHorizons {
    let per_risk = (1..=num_risks)
        .map(|k| {
            let mut ts: Vec<f64> = times
                .iter()
                .zip(events)
                .filter(|(_, &e)| e == k)
                .map(|(&t, _)| t)
                .collect();
            if ts.is_empty() {
                return None;
            }
            ts.sort_by(f64::total_cmp);
            Some(quantiles.iter().map(|&q| quantile(&ts, q)).collect())
        })
        .collect();
    EvalHorizons {
        quantiles: quantiles.to_vec(),
        per_risk,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MetricKind {
    TdAuc,
    TdCi,
    Brier,
}

impl MetricKind {
    pub fn as_str(self) -> &'static str {
        match self {
            MetricKind::TdAuc => "td_auc",
            MetricKind::TdCi => "td_ci",
            MetricKind::Brier => "brier",
        }
    }

    pub const ALL: [MetricKind; 3] = [MetricKind::TdAuc, MetricKind::TdCi, MetricKind::Brier];
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub risk: usize,
    pub quantile: f64,
    pub horizon: f64,
    pub metric: MetricKind,
    /// `None` when undefined, e.g. no cases at this horizon.
    pub value: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub rows: Vec<MetricRow>,
}

impl MetricReport {
    pub fn get(&self, risk: usize, quantile: f64, metric: MetricKind) -> Option<f64> {
        self.rows
            .iter()
            .find(|r| r.risk == risk && r.quantile == quantile && r.metric == metric)
            .and_then(|r| r.value)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MetricOptions {
    pub ipcw_auc: bool,
    pub ipcw_brier: bool,
}

impl Default for MetricOptions {
    fn default() -> Self {
        Self {
            ipcw_auc: true,
            ipcw_brier: true,
        }
    }
}

/// All three metrics for every risk and horizon on a held-out set.
pub fn evaluate(
    baseline: &BaselineHazards,
    eta: ArrayView2<f64>,
    times: &[f64],
    events: &[usize],
    horizons: &EvalHorizons,
    opts: &MetricOptions,
) -> Result<MetricReport> {
    let mut rows = Vec::new();
    for risk in 1..=baseline.num_risks() {
        let Some(hs) = horizons.get(risk) else { continue };
        let cif = cif_matrix(baseline, eta, risk - 1)?;
        for (&q, &t) in horizons.quantiles.iter().zip(hs) {
            let col = baseline.grid_end(t);
            let scores: Vec<f64> = (0..eta.nrows())
                .map(|n| if col == 0 { 0.0 } else { cif[[n, col - 1]] })
                .collect();
            let mut push = |metric, value| {
                rows.push(MetricRow {
                    risk,
                    quantile: q,
                    horizon: t,
                    metric,
                    value,
                })
            };
            push(
                MetricKind::TdAuc,
                td_auc(&scores, times, events, t, risk, opts.ipcw_auc)?,
            );
            push(
                MetricKind::TdCi,
                td_concordance(cif.view(), &baseline.times, times, events, risk, Some(t))?,
            );
            push(
                MetricKind::Brier,
                Some(brier(&scores, times, events, t, risk, opts.ipcw_brier)?),
            );
        }
    }
    Ok(MetricReport { rows })
}
