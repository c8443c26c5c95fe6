//! Report files and text tables.
//!
//! Files written here contain no timing information, so rerunning an
//! experiment with the same config and seeds rewrites them byte for byte.
//! `history.csv` is the exception: it carries a wall-clock column.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use actlab_core::analysis::{ExchangeabilityReport, InvarianceCount, RankReport};
use thiserror::Error;

use crate::runner::{ComparisonReport, RunReport};

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("cannot write {path}: {source}")]
    Write {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("cannot read {path}: {source}")]
    Read {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("malformed report {path}: {source}")]
    Parse {
        path: PathBuf,
        source: serde_json::Error,
    },
}

pub const SUMMARY_FILE: &str = "summary.json";
pub const TRIALS_FILE: &str = "trials.csv";
pub const PLOT_FILE: &str = "plot.csv";

fn write(path: PathBuf, contents: &str) -> Result<PathBuf, ReportError> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|source| ReportError::Write {
            path: parent.to_path_buf(),
            source,
        })?;
    }
    std::fs::write(&path, contents).map_err(|source| ReportError::Write {
        path: path.clone(),
        source,
    })?;
    Ok(path)
}

pub fn to_json<T: serde::Serialize>(value: &T) -> String {
    serde_json::to_string_pretty(value).expect("report serializes") + "\n"
}

pub fn write_json<T: serde::Serialize>(path: PathBuf, value: &T) -> Result<PathBuf, ReportError> {
    write(path, &to_json(value))
}

/// One row per trial and arm.
pub fn trials_csv(report: &ComparisonReport) -> String {
    let mut out = String::from("seed,arm,activations,lr,test_mae,test_mse\n");
    for t in &report.trials {
        for (arm, r) in [("baseline", &t.baseline), ("substituted", &t.substituted)] {
            let _ = writeln!(
                out,
                "{},{arm},{},{:?},{:?},{:?}",
                t.seed,
                r.activations.join("|"),
                r.lr,
                r.test_mae,
                r.test_mse
            );
        }
    }
    out
}

/// Bar-chart data: task x activation x arm -> median MAE.
pub fn plot_csv(reports: &[ComparisonReport]) -> String {
    let mut out = String::from("task,activation,layer_index,arm,median_mae\n");
    for r in reports {
        for (arm, v) in [
            ("baseline", r.median_baseline_mae),
            ("substituted", r.median_substituted_mae),
        ] {
            let _ = writeln!(
                out,
                "{},{},{},{arm},{v:?}",
                r.task, r.baseline_activation, r.layer_index
            );
        }
    }
    out
}

/// Write `summary.json`, `trials.csv` and `plot.csv` into `dir`.
pub fn emit_report(report: &ComparisonReport, dir: &Path) -> Result<Vec<PathBuf>, ReportError> {
    Ok(vec![
        write_json(dir.join(SUMMARY_FILE), report)?,
        write(dir.join(TRIALS_FILE), &trials_csv(report))?,
        write(dir.join(PLOT_FILE), &plot_csv(std::slice::from_ref(report)))?,
    ])
}

/// Each layer's report in `layer_<k>/` plus `sweep.csv` and `plot.csv` in
/// `dir`.
pub fn emit_sweep(reports: &[ComparisonReport], dir: &Path) -> Result<Vec<PathBuf>, ReportError> {
    let mut paths = Vec::new();
    for r in reports {
        paths.extend(emit_report(r, &dir.join(format!("layer_{}", r.layer_index)))?);
    }
    let mut sweep = String::from("layer_index,median_baseline_mae,median_substituted_mae,improvement_ratio\n");
    for r in reports {
        let _ = writeln!(
            sweep,
            "{},{:?},{:?},{:?}",
            r.layer_index, r.median_baseline_mae, r.median_substituted_mae, r.improvement_ratio
        );
    }
    paths.push(write(dir.join("sweep.csv"), &sweep)?);
    paths.push(write(dir.join(PLOT_FILE), &plot_csv(reports))?);
    Ok(paths)
}

/// `run.json` (no timing) and `history.csv` (with timing).
pub fn emit_run(report: &RunReport, dir: &Path) -> Result<Vec<PathBuf>, ReportError> {
    Ok(vec![
        write_json(dir.join("run.json"), report)?,
        write(dir.join("history.csv"), &report.history.to_csv())?,
    ])
}

pub fn read_report(dir: &Path) -> Result<ComparisonReport, ReportError> {
    let path = dir.join(SUMMARY_FILE);
    let text = std::fs::read_to_string(&path).map_err(|source| ReportError::Read {
        path: path.clone(),
        source,
    })?;
    serde_json::from_str(&text).map_err(|source| ReportError::Parse { path, source })
}

/// Left-aligned first column, right-aligned rest.
pub fn render_table(header: &[&str], rows: &[Vec<String>]) -> String {
    let mut widths: Vec<usize> = header.iter().map(|h| h.len()).collect();
    for row in rows {
        for (w, cell) in widths.iter_mut().zip(row) {
            *w = (*w).max(cell.len());
        }
    }
    let line = |cells: Vec<&str>| {
        let mut s = String::new();
        for (i, (c, w)) in cells.iter().zip(&widths).enumerate() {
            if i == 0 {
                let _ = write!(s, "{c:<w$}");
            } else {
                let _ = write!(s, "  {c:>w$}");
            }
        }
        s.trim_end().to_string() + "\n"
    };
    let mut out = line(header.to_vec());
    let rule: Vec<String> = widths.iter().map(|w| "-".repeat(*w)).collect();
    out.push_str(&rule.join("  "));
    out.push('\n');
    for row in rows {
        out.push_str(&line(row.iter().map(String::as_str).collect()));
    }
    out
}

pub fn comparison_table(reports: &[ComparisonReport]) -> String {
    let rows: Vec<Vec<String>> = reports
        .iter()
        .map(|r| {
            vec![
                r.task.clone(),
                r.baseline_activation.clone(),
                format!("{}@{}", r.substituted_activation, r.layer_index),
                format!("{:.5}", r.median_baseline_mae),
                format!("{:.5}", r.median_substituted_mae),
                format!("{:.3}", r.improvement_ratio),
            ]
        })
        .collect();
    render_table(
        &["task", "baseline", "substitute", "base MAE", "sub MAE", "ratio"],
        &rows,
    )
}

pub fn rank_table(reports: &[RankReport]) -> String {
    let rows: Vec<Vec<String>> = reports
        .iter()
        .map(|r| {
            vec![
                r.activation.clone(),
                serde_json::to_value(r.construction)
                    .ok()
                    .and_then(|v| v.as_str().map(String::from))
                    .unwrap_or_default(),
                r.d.to_string(),
                r.n.to_string(),
                r.m.to_string(),
                r.achieved_rank.to_string(),
                r.theoretical_bound.map_or("-".into(), |b| b.to_string()),
            ]
        })
        .collect();
    render_table(&["activation", "construction", "d", "N", "m", "rank", "bound"], &rows)
}

pub fn exchange_table(net: &ExchangeabilityReport, counts: Option<&InvarianceCount>) -> String {
    let mut rows = vec![
        vec!["swap_gap".to_string(), format!("{:.3e}", net.swap_gap)],
        vec!["antisym_gap".to_string(), format!("{:.3e}", net.antisym_gap)],
        vec!["samples".to_string(), net.n_samples.to_string()],
    ];
    if let Some(c) = counts {
        rows.push(vec!["invariant permutations".to_string(), c.count.to_string()]);
    }
    render_table(&["quantity", "value"], &rows)
}
