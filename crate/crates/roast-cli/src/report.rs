//! Report rendering and persistence.
//!
//! A benchmark produces three artifacts in the output directory, all of
//! them deterministic functions of the run results:
//!
//! - `results.json` — every run's metrics and per-split breakdown
//! - `report.json`  — aggregates per method (means, stds, delta, ranks)
//! - `report.csv`   — one row per method in registry order
//!
//! plus `trainlogs/<method>-seed<k>.jsonl` with one record per epoch.

use std::fmt::Write as _;
use std::path::Path;

use roast_core::metrics::{self, MetricVector};
use serde::{Deserialize, Serialize};

use crate::experiment::{ExperimentOutcome, MetricsRow, RunRecord};
use crate::CliError;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MethodSummary {
    pub method: String,
    pub seeds: Vec<u64>,
    pub mean: MetricsRow,
    pub std: MetricsRow,
    pub delta_avg_mean: f64,
    pub delta_avg_std: f64,
    pub rank_avg: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Report {
    pub methods: Vec<MethodSummary>,
    /// Raw per-run rows backing the summary, in run order.
    pub runs: Vec<RunRecord>,
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

fn column<F: Fn(&RunRecord) -> f64>(runs: &[&RunRecord], f: F) -> (f64, f64) {
    let values: Vec<f64> = runs.iter().map(|r| f(r)).collect();
    mean_std(&values)
}

/// Aggregates runs into the per-method summary. Method order follows the
/// outcome's registry order; ranks are computed over the method means.
pub fn summarize(outcome: &ExperimentOutcome) -> Result<Report, CliError> {
    if outcome.runs.is_empty() {
        return Err(CliError::Validation("no successful runs to report".into()));
    }
    let mut summaries = Vec::new();
    for name in &outcome.methods {
        let runs: Vec<&RunRecord> = outcome.runs.iter().filter(|r| &r.method == name).collect();
        if runs.is_empty() {
            continue;
        }
        let (acc_in, acc_in_std) = column(&runs, |r| r.metrics.acc_in);
        let (acc_shift, acc_shift_std) = column(&runs, |r| r.metrics.acc_shift);
        let (acc_adv, acc_adv_std) = column(&runs, |r| r.metrics.acc_adv);
        let (ece, ece_std) = column(&runs, |r| r.metrics.ece);
        let (auroc, auroc_std) = column(&runs, |r| r.metrics.auroc);
        let deltas: Vec<f64> = runs.iter().filter_map(|r| r.delta_avg).collect();
        let (delta_mean, delta_std) = mean_std(&deltas);
        summaries.push(MethodSummary {
            method: name.clone(),
            seeds: runs.iter().map(|r| r.seed).collect(),
            mean: MetricsRow {
                acc_in,
                acc_shift,
                acc_adv,
                ece,
                auroc,
            },
            std: MetricsRow {
                acc_in: acc_in_std,
                acc_shift: acc_shift_std,
                acc_adv: acc_adv_std,
                ece: ece_std,
                auroc: auroc_std,
            },
            delta_avg_mean: delta_mean,
            delta_avg_std: delta_std,
            rank_avg: 0.0,
        });
    }

    if summaries.len() >= 2 {
        let vectors: Vec<MetricVector> = summaries.iter().map(|s| s.mean.into()).collect();
        let ranks = metrics::average_rank(&vectors)?;
        for (s, r) in summaries.iter_mut().zip(ranks) {
            s.rank_avg = r;
        }
    } else {
        for s in &mut summaries {
            s.rank_avg = 1.0;
        }
    }

    Ok(Report {
        methods: summaries,
        runs: outcome.runs.clone(),
    })
}

/// CSV rendering: fixed column order, two decimals, AUROC scaled by 100.
pub fn render_csv(report: &Report) -> String {
    let mut out = String::from(
        "method,acc_in,acc_shift,acc_adv,ece,auroc_x100,delta_avg,rank_avg,\
         acc_in_std,acc_shift_std,acc_adv_std,ece_std,auroc_x100_std,delta_avg_std\n",
    );
    for m in &report.methods {
        let _ = writeln!(
            out,
            "{},{:.2},{:.2},{:.2},{:.2},{:.2},{:.2},{:.2},{:.2},{:.2},{:.2},{:.2},{:.2},{:.2}",
            m.method,
            m.mean.acc_in,
            m.mean.acc_shift,
            m.mean.acc_adv,
            m.mean.ece,
            100.0 * m.mean.auroc,
            m.delta_avg_mean,
            m.rank_avg,
            m.std.acc_in,
            m.std.acc_shift,
            m.std.acc_adv,
            m.std.ece,
            100.0 * m.std.auroc,
            m.delta_avg_std,
        );
    }
    out
}

/// Writes `results.json`, `report.json`, `report.csv` and the train logs.
pub fn write_report(outcome: &ExperimentOutcome, dir: &Path) -> Result<Report, CliError> {
    std::fs::create_dir_all(dir)
        .map_err(|e| CliError::Io(format!("create {}: {e}", dir.display())))?;
    let report = summarize(outcome)?;

    let write = |name: &str, contents: String| -> Result<(), CliError> {
        let path = dir.join(name);
        std::fs::write(&path, contents)
            .map_err(|e| CliError::Io(format!("write {}: {e}", path.display())))
    };

    write(
        "results.json",
        serde_json::to_string_pretty(outcome)
            .map_err(|e| CliError::Io(format!("serialize results: {e}")))?,
    )?;
    write(
        "report.json",
        serde_json::to_string_pretty(&report)
            .map_err(|e| CliError::Io(format!("serialize report: {e}")))?,
    )?;
    write("report.csv", render_csv(&report))?;

    let logdir = dir.join("trainlogs");
    std::fs::create_dir_all(&logdir)
        .map_err(|e| CliError::Io(format!("create {}: {e}", logdir.display())))?;
    for run in &outcome.runs {
        let mut lines = String::new();
        for epoch in &run.epochs {
            let _ = writeln!(
                lines,
                "{}",
                serde_json::to_string(epoch)
                    .map_err(|e| CliError::Io(format!("serialize epoch: {e}")))?
            );
        }
        let path = logdir.join(format!("{}-seed{}.jsonl", run.method, run.seed));
        std::fs::write(&path, lines)
            .map_err(|e| CliError::Io(format!("write {}: {e}", path.display())))?;
    }
    Ok(report)
}

/// Reloads raw results for re-rendering.
pub fn read_results(path: &Path) -> Result<ExperimentOutcome, CliError> {
    let raw = std::fs::read_to_string(path)
        .map_err(|e| CliError::Io(format!("read {}: {e}", path.display())))?;
    serde_json::from_str(&raw)
        .map_err(|e| CliError::Validation(format!("malformed results file: {e}")))
}
