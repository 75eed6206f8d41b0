//! Per-seed reports, training metrics, split manifests and results tables.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use transduct_core::evaluation::mean_std;
use transduct_core::split::NoveltySplit;
use transduct_core::training::{EpochMetrics, Phase};

use crate::config::Mode;
use crate::datasets::Dataset;
use crate::error::{Error, IoContext, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub dataset: Dataset,
    pub novel_class: u8,
    pub mode: Mode,
    pub pi_requested: f64,
    pub pi_actual: f64,
    pub seed: u64,
    pub auroc: f64,
    /// Mean loss per phase over the final epoch.
    pub final_losses: BTreeMap<String, f64>,
    pub non_finite_iterations: usize,
    pub artifacts: Vec<PathBuf>,
}

/// `{dataset}_{class}_{pi}_{seed}_{kind}.{ext}`.
pub fn artifact_name(dataset: Dataset, novel_class: u8, pi: f64, seed: u64, kind: &str, ext: &str) -> String {
    format!(
        "{}_{}_{}_{}_{}.{}",
        dataset.name(),
        novel_class,
        format_pi(pi),
        seed,
        kind,
        ext
    )
}

/// Two decimals, as in `0.05`, `0.10`, `0.30`.
pub fn format_pi(pi: f64) -> String {
    format!("{pi:.2}")
}

/// CSV with one row per iteration and one column per phase; phases the
/// procedure does not run are left out.
pub fn write_metrics_csv(path: &Path, epochs: &[EpochMetrics]) -> Result<()> {
    let phases: Vec<Phase> = Phase::ALL
        .into_iter()
        .filter(|&p| epochs.iter().flat_map(|e| &e.records).any(|r| r.loss(p).is_some()))
        .collect();
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec!["epoch".to_string(), "iteration".to_string()];
    header.extend(phases.iter().map(|p| p.name().to_string()));
    header.push("non_finite".into());
    w.write_record(&header)?;
    for e in epochs {
        for r in &e.records {
            let mut row = vec![e.epoch.to_string(), r.iteration.to_string()];
            row.extend(
                phases
                    .iter()
                    .map(|&p| r.loss(p).map(|v| v.to_string()).unwrap_or_default()),
            );
            row.push(r.non_finite.map(|p| p.name().to_string()).unwrap_or_default());
            w.write_record(&row)?;
        }
    }
    w.flush().at(path)?;
    Ok(())
}

/// Mean per phase over one epoch, keyed by phase name.
pub fn phase_summary(metrics: &EpochMetrics) -> BTreeMap<String, f64> {
    Phase::ALL
        .into_iter()
        .filter_map(|p| metrics.phase_mean(p).map(|v| (p.name().to_string(), v)))
        .collect()
}

/// Text manifest of which source samples form each subset, in order.
pub fn split_manifest(split: &NoveltySplit) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "novel_class {}", split.novel_class());
    let _ = writeln!(out, "pi_requested {}", split.pi_requested());
    let _ = writeln!(out, "pi_actual {}", split.pi_actual());
    for (name, refs) in [("x_n", split.negative_refs()), ("x_u", split.unlabeled_refs())] {
        let source = refs.first().map(|r| r.source.name()).unwrap_or("none");
        let _ = writeln!(out, "{name} {} {source}", refs.len());
        let line: Vec<String> = refs.iter().map(|r| r.index.to_string()).collect();
        let _ = writeln!(out, "{}", line.join(" "));
    }
    out
}

/// Per-phase means and the non-finite count of the last epoch in a metrics
/// CSV written by [`write_metrics_csv`].
#[derive(Clone, Debug, Default, PartialEq)]
pub struct EpochSummary {
    pub losses: BTreeMap<String, f64>,
    pub non_finite_iterations: usize,
}

impl EpochSummary {
    pub fn of(metrics: &EpochMetrics) -> Self {
        EpochSummary {
            losses: phase_summary(metrics),
            non_finite_iterations: metrics.non_finite_iterations(),
        }
    }
}

pub fn read_last_epoch(path: &Path) -> Result<EpochSummary> {
    let mut r = csv::Reader::from_path(path)?;
    let header = r.headers()?.clone();
    let bad = |what: &str| Error::Format(format!("{}: {what}", path.display()));
    if header.get(0) != Some("epoch") || header.iter().last() != Some("non_finite") {
        return Err(bad("not a metrics file"));
    }
    let mut rows: Vec<csv::StringRecord> = Vec::new();
    let mut last_epoch = None;
    for rec in r.records() {
        let rec = rec?;
        let epoch = rec
            .get(0)
            .and_then(|s| s.parse::<usize>().ok())
            .ok_or_else(|| bad("bad epoch"))?;
        if last_epoch != Some(epoch) {
            rows.clear();
            last_epoch = Some(epoch);
        }
        rows.push(rec);
    }
    let mut summary = EpochSummary::default();
    let phases = header.len() - 1;
    for col in 2..phases {
        let vals: Vec<f64> = rows
            .iter()
            .filter_map(|r| r.get(col).filter(|s| !s.is_empty()))
            .map(|s| s.parse::<f64>().map_err(|_| bad("bad loss")))
            .collect::<Result<_>>()?;
        if !vals.is_empty() {
            summary
                .losses
                .insert(header[col].to_string(), vals.iter().sum::<f64>() / vals.len() as f64);
        }
    }
    summary.non_finite_iterations = rows
        .iter()
        .filter(|r| r.get(phases).is_some_and(|s| !s.is_empty()))
        .count();
    Ok(summary)
}

pub fn write_scores_csv(path: &Path, scores: &[f64]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["index", "score"])?;
    for (i, s) in scores.iter().enumerate() {
        w.write_record([i.to_string(), s.to_string()])?;
    }
    w.flush().at(path)?;
    Ok(())
}

pub fn read_scores_csv(path: &Path) -> Result<Vec<f64>> {
    let mut r = csv::Reader::from_path(path)?;
    let mut out = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let v = rec
            .get(1)
            .and_then(|s| s.parse::<f64>().ok())
            .ok_or_else(|| Error::Format(format!("{}: bad score row {:?}", path.display(), rec)))?;
        out.push(v);
    }
    Ok(out)
}

pub fn write_report(path: &Path, report: &EvalReport) -> Result<()> {
    let text = serde_json::to_string_pretty(report)?;
    fs::write(path, text + "\n").at(path)
}

pub fn read_report(path: &Path) -> Result<EvalReport> {
    Ok(serde_json::from_str(&fs::read_to_string(path).at(path)?)?)
}

/// One aggregated (class, method, pi) cell.
#[derive(Clone, Debug, PartialEq)]
pub struct TableRow {
    pub novel_class: String,
    pub method: Mode,
    pub pi: f64,
    pub seeds: usize,
    pub mean: f64,
    pub std: f64,
}

impl TableRow {
    /// `mean(std)` with three decimals, e.g. `0.991(0.002)`.
    pub fn formatted(&self) -> String {
        format!("{:.3}({:.3})", self.mean, self.std)
    }
}

/// Aggregates reports into per-cell rows (mean and population standard
/// deviation over seeds) followed by one `mean` row per (method, pi)
/// averaging the class rows.
pub fn results_table(reports: &[EvalReport]) -> Result<Vec<TableRow>> {
    let first = reports
        .first()
        .ok_or_else(|| Error::Format("no reports to tabulate".into()))?;
    if let Some(r) = reports.iter().find(|r| r.dataset != first.dataset) {
        return Err(Error::Format(format!(
            "reports mix datasets {} and {}",
            first.dataset.name(),
            r.dataset.name()
        )));
    }
    // key ordering: class, method, pi
    let mut cells: BTreeMap<(u8, u8, String), Vec<&EvalReport>> = BTreeMap::new();
    for r in reports {
        let key = (r.novel_class, r.mode as u8, format_pi(r.pi_requested));
        cells.entry(key).or_default().push(r);
    }
    let mut rows = Vec::new();
    for cell in cells.values() {
        let aurocs: Vec<f64> = cell.iter().map(|r| r.auroc).collect();
        let (mean, std) = mean_std(&aurocs).expect("non-empty cell");
        rows.push(TableRow {
            novel_class: first.dataset.class_name(cell[0].novel_class),
            method: cell[0].mode,
            pi: cell[0].pi_requested,
            seeds: cell.len(),
            mean,
            std,
        });
    }
    let mut columns: BTreeMap<(u8, String), Vec<&TableRow>> = BTreeMap::new();
    for row in &rows {
        columns
            .entry((row.method as u8, format_pi(row.pi)))
            .or_default()
            .push(row);
    }
    let mut summary = Vec::new();
    for col in columns.values() {
        let means: Vec<f64> = col.iter().map(|r| r.mean).collect();
        let (mean, std) = mean_std(&means).expect("non-empty column");
        summary.push(TableRow {
            novel_class: "mean".into(),
            method: col[0].method,
            pi: col[0].pi,
            seeds: col.iter().map(|r| r.seeds).sum(),
            mean,
            std,
        });
    }
    rows.extend(summary);
    Ok(rows)
}

pub fn export_results_table(reports: &[EvalReport], path: &Path) -> Result<Vec<TableRow>> {
    let rows = results_table(reports)?;
    let mut w = csv::Writer::from_path(path)?;
    w.write_record([
        "novel_class",
        "method",
        "pi",
        "seeds",
        "mean_auroc",
        "std_auroc",
        "auroc",
    ])?;
    for r in &rows {
        w.write_record([
            r.novel_class.clone(),
            r.method.name().to_string(),
            format_pi(r.pi),
            r.seeds.to_string(),
            format!("{:.6}", r.mean),
            format!("{:.6}", r.std),
            r.formatted(),
        ])?;
    }
    w.flush().at(path)?;
    Ok(rows)
}
