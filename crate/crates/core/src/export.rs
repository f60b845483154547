//! CSV and JSON-lines writers for every artifact.
//!
//! Each file starts with a `# config_fingerprint: <hex>` line. The CSV reader
//! in [`crate::data`] treats `#` lines as comments, so written datasets load
//! back unchanged.

use std::io::Write;

use crate::data::SurvivalDataset;
use crate::error::Result;
use crate::hazard::CifCurves;
use crate::interpret::{ImportanceTable, ShapeCurve};
use crate::metrics::MetricReport;
use crate::train::{EpochRecord, MetricSummary, Trial};

pub const FINGERPRINT_PREFIX: &str = "# config_fingerprint: ";

fn csv_writer<W: Write>(mut w: W, fingerprint: &str) -> Result<csv::Writer<W>> {
    writeln!(w, "{FINGERPRINT_PREFIX}{fingerprint}")?;
    Ok(csv::Writer::from_writer(w))
}

/// Shortest round-trip representation, empty for missing values.
fn num(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// The fingerprint recorded on an artifact's first line, if any.
pub fn read_fingerprint(text: &str) -> Option<&str> {
    text.lines().next()?.strip_prefix(FINGERPRINT_PREFIX)
}

/// Features, `time` and `event` columns in the layout [`crate::data::load_csv`] reads.
pub fn write_dataset<W: Write>(w: W, fingerprint: &str, ds: &SurvivalDataset) -> Result<()> {
    let mut out = csv_writer(w, fingerprint)?;
    let mut header = ds.feature_names.clone();
    header.extend(["time".to_string(), "event".to_string()]);
    out.write_record(&header)?;
    for (n, row) in ds.features.rows().into_iter().enumerate() {
        let mut rec: Vec<String> = row.iter().map(|v| v.to_string()).collect();
        rec.push(ds.times[n].to_string());
        rec.push(ds.events[n].to_string());
        out.write_record(&rec)?;
    }
    out.flush()?;
    Ok(())
}

/// One row per subject, grid time and risk, plus a closing row at `horizon`.
pub fn write_cif<W: Write>(w: W, fingerprint: &str, curves: &[CifCurves], horizon: f64) -> Result<()> {
    let mut out = csv_writer(w, fingerprint)?;
    out.write_record(["subject", "time", "risk", "cif", "survival"])?;
    for (subject, c) in curves.iter().enumerate() {
        let mut times = c.times.clone();
        if times.last() != Some(&horizon) {
            times.push(horizon);
        }
        for &t in &times {
            for k in 0..c.cif.nrows() {
                out.write_record([
                    subject.to_string(),
                    t.to_string(),
                    (k + 1).to_string(),
                    c.cif_at(k, t).to_string(),
                    c.survival_at(t).to_string(),
                ])?;
            }
        }
    }
    out.flush()?;
    Ok(())
}

/// Metric rows; `fold` is left empty for a single evaluation.
pub fn write_metrics<'a, W: Write>(
    w: W,
    fingerprint: &str,
    reports: impl IntoIterator<Item = (Option<usize>, &'a MetricReport)>,
) -> Result<()> {
    let mut out = csv_writer(w, fingerprint)?;
    out.write_record(["fold", "risk", "horizon_quantile", "horizon", "metric", "value"])?;
    for (fold, report) in reports {
        for r in &report.rows {
            out.write_record([
                fold.map(|f| f.to_string()).unwrap_or_default(),
                r.risk.to_string(),
                r.quantile.to_string(),
                r.horizon.to_string(),
                r.metric.as_str().to_string(),
                num(r.value),
            ])?;
        }
    }
    out.flush()?;
    Ok(())
}

/// Cross-fold mean and sample standard deviation per metric cell.
pub fn write_summary<W: Write>(w: W, fingerprint: &str, summary: &[MetricSummary]) -> Result<()> {
    let mut out = csv_writer(w, fingerprint)?;
    out.write_record(["risk", "horizon_quantile", "metric", "mean", "std", "folds"])?;
    for s in summary {
        out.write_record([
            s.risk.to_string(),
            s.quantile.to_string(),
            s.metric.as_str().to_string(),
            s.mean.to_string(),
            s.std.to_string(),
            s.count.to_string(),
        ])?;
    }
    out.flush()?;
    Ok(())
}

/// Search trials, one row each, tagged with their outer fold.
pub fn write_trials<'a, W: Write>(
    w: W,
    fingerprint: &str,
    trials: impl IntoIterator<Item = (usize, &'a Trial)>,
) -> Result<()> {
    let mut out = csv_writer(w, fingerprint)?;
    out.write_record([
        "fold",
        "trial",
        "learning_rate",
        "weight_decay",
        "hidden",
        "batch_norm",
        "dropout",
        "feature_dropout",
        "mean_loss",
        "error",
    ])?;
    for (fold, t) in trials {
        let c = &t.candidate;
        let hidden: Vec<String> = c.arch.hidden.iter().map(|h| h.to_string()).collect();
        out.write_record([
            fold.to_string(),
            t.index.to_string(),
            c.learning_rate.to_string(),
            c.weight_decay.to_string(),
            hidden.join(" "),
            c.arch.batch_norm.to_string(),
            c.arch.dropout.to_string(),
            c.arch.feature_dropout.to_string(),
            t.mean_loss.to_string(),
            t.error.clone().unwrap_or_default(),
        ])?;
    }
    out.flush()?;
    Ok(())
}

pub fn write_shapes<W: Write>(w: W, fingerprint: &str, curves: &[ShapeCurve]) -> Result<()> {
    let mut out = csv_writer(w, fingerprint)?;
    out.write_record(["feature", "risk", "x_original", "x_preprocessed", "contribution"])?;
    for c in curves {
        for ((xo, xp), s) in c.x_original.iter().zip(&c.x_preprocessed).zip(&c.contribution) {
            out.write_record([
                c.feature_name.clone(),
                (c.risk + 1).to_string(),
                xo.to_string(),
                xp.to_string(),
                s.to_string(),
            ])?;
        }
    }
    out.flush()?;
    Ok(())
}

/// Observed values per feature, written once per feature.
pub fn write_rug<W: Write>(w: W, fingerprint: &str, curves: &[ShapeCurve]) -> Result<()> {
    let mut out = csv_writer(w, fingerprint)?;
    out.write_record(["feature", "x_original", "x_preprocessed"])?;
    let mut seen = Vec::new();
    for c in curves {
        if seen.contains(&c.feature) {
            continue;
        }
        seen.push(c.feature);
        for (xo, xp) in c.rug_original.iter().zip(&c.rug) {
            out.write_record([c.feature_name.clone(), xo.to_string(), xp.to_string()])?;
        }
    }
    out.flush()?;
    Ok(())
}

pub fn write_importance<W: Write>(w: W, fingerprint: &str, table: &ImportanceTable) -> Result<()> {
    let mut out = csv_writer(w, fingerprint)?;
    out.write_record(["feature", "risk", "importance", "signed_mean", "rank"])?;
    for k in 0..table.importance.ncols() {
        for &i in &table.rankings[k] {
            out.write_record([
                table.feature_names[i].clone(),
                (k + 1).to_string(),
                table.importance[[i, k]].to_string(),
                table.signed_mean[[i, k]].to_string(),
                table.rank_of(i, k).to_string(),
            ])?;
        }
    }
    out.flush()?;
    Ok(())
}

/// JSON lines: a header object with the fingerprint, then one record per epoch.
pub fn write_training_log<W: Write>(mut w: W, fingerprint: &str, log: &[EpochRecord]) -> Result<()> {
    serde_json::to_writer(&mut w, &serde_json::json!({ "config_fingerprint": fingerprint }))?;
    writeln!(w)?;
    for rec in log {
        serde_json::to_writer(&mut w, rec)?;
        writeln!(w)?;
    }
    Ok(())
}
