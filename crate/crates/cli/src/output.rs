//! Report files: per-epoch CSVs, `summary.csv` and `metadata.json`.
//!
//! Everything is first written under a `.partial` name and renamed once the
//! whole set is on disk, so an interrupted or failed run never leaves files
//! that look complete.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use enckf::filters::{FilterDiagnostics, FilterMode};
use enckf::harness::{compare_report, win_fraction, ReportMetadata, RmseReport, RmseSeries};
use enckf::scenarios::{ScenarioKind, ScenarioParams};
use serde::{Deserialize, Serialize};

use crate::config::CliConfig;
use crate::CliError;

pub const SERIES_HEADER: [&str; 3] = ["epoch", "component", "rmse"];
pub const SUMMARY_HEADER: [&str; 5] = ["mode", "m", "mean_rmse", "win_fraction", "repair_count"];
pub const METADATA_FILE: &str = "metadata.json";
pub const SUMMARY_FILE: &str = "summary.csv";
pub const PARTIAL_SUFFIX: &str = ".partial";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeriesRecord {
    pub mode: FilterMode,
    pub m: usize,
    pub file: String,
    pub mean_rmse: f64,
    pub component_means: Vec<f64>,
    pub diagnostics: FilterDiagnostics,
    pub invariant_violations: usize,
}

/// The JSON sidecar.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metadata {
    pub config: CliConfig,
    pub scenario_params: ScenarioParams,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub report: Option<ReportMetadata>,
    #[serde(default)]
    pub series: Vec<SeriesRecord>,
    /// Set when the campaign failed.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

pub fn series_file_name(kind: ScenarioKind, mode: FilterMode, m: usize) -> String {
    format!("{kind}_{mode}_m{m}.csv")
}

fn partial(path: &Path) -> PathBuf {
    let mut name = path.as_os_str().to_owned();
    name.push(PARTIAL_SUFFIX);
    PathBuf::from(name)
}

fn io_err(path: &Path, e: impl std::fmt::Display) -> CliError {
    CliError::Runtime(format!("{}: {e}", path.display()))
}

fn write_series(path: &Path, series: &RmseSeries) -> Result<(), CliError> {
    let mut w = csv::Writer::from_path(path).map_err(|e| io_err(path, e))?;
    w.write_record(SERIES_HEADER).map_err(|e| io_err(path, e))?;
    for (k, row) in series.per_epoch.iter().enumerate() {
        for (c, rmse) in row.iter().enumerate() {
            w.write_record([(k + 1).to_string(), c.to_string(), rmse.to_string()])
                .map_err(|e| io_err(path, e))?;
        }
    }
    w.flush().map_err(|e| io_err(path, e))
}

/// Share of cells in which `series` beats the other mode at the same m.
fn summary_win_fraction(report: &RmseReport, series: &RmseSeries) -> Option<f64> {
    let other = match series.mode {
        FilterMode::Enkf => FilterMode::Enckf,
        FilterMode::Enckf => FilterMode::Enkf,
    };
    report
        .get(other, series.ensemble_size)
        .map(|o| win_fraction(&series.per_epoch, &o.per_epoch))
}

fn write_summary(path: &Path, report: &RmseReport) -> Result<(), CliError> {
    let mut w = csv::Writer::from_path(path).map_err(|e| io_err(path, e))?;
    w.write_record(SUMMARY_HEADER)
        .map_err(|e| io_err(path, e))?;
    for s in &report.series {
        let win = summary_win_fraction(report, s).map_or_else(String::new, |v| v.to_string());
        w.write_record([
            s.mode.to_string(),
            s.ensemble_size.to_string(),
            s.mean_rmse.to_string(),
            win,
            s.diagnostics.covariance_repairs.to_string(),
        ])
        .map_err(|e| io_err(path, e))?;
    }
    w.flush().map_err(|e| io_err(path, e))
}

fn write_json(path: &Path, meta: &Metadata) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(meta).map_err(|e| io_err(path, e))?;
    fs::write(path, text + "\n").map_err(|e| io_err(path, e))
}

/// Writes the complete output set of a successful campaign.
pub fn write_report(
    cfg: &CliConfig,
    params: &ScenarioParams,
    report: &RmseReport,
) -> Result<Vec<PathBuf>, CliError> {
    let dir = &cfg.out;
    fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    let kind = cfg.spec.name;

    let mut staged = Vec::new();
    let mut records = Vec::new();
    for s in &report.series {
        let name = series_file_name(kind, s.mode, s.ensemble_size);
        let path = dir.join(&name);
        write_series(&partial(&path), s)?;
        staged.push(path);
        records.push(SeriesRecord {
            mode: s.mode,
            m: s.ensemble_size,
            file: name,
            mean_rmse: s.mean_rmse,
            component_means: s.component_means.clone(),
            diagnostics: s.diagnostics,
            invariant_violations: s.invariant_violations,
        });
    }
    let summary = dir.join(SUMMARY_FILE);
    write_summary(&partial(&summary), report)?;
    staged.push(summary);

    let metadata = dir.join(METADATA_FILE);
    let meta = Metadata {
        config: cfg.clone(),
        scenario_params: params.clone(),
        report: Some(report.metadata.clone()),
        series: records,
        error: None,
    };
    write_json(&partial(&metadata), &meta)?;
    staged.push(metadata);

    for path in &staged {
        fs::rename(partial(path), path).map_err(|e| io_err(path, e))?;
    }
    Ok(staged)
}

/// Records a failed campaign as `metadata.json.partial`.
pub fn write_failure(
    cfg: &CliConfig,
    params: &ScenarioParams,
    error: &str,
) -> Result<PathBuf, CliError> {
    fs::create_dir_all(&cfg.out).map_err(|e| io_err(&cfg.out, e))?;
    let path = partial(&cfg.out.join(METADATA_FILE));
    let meta = Metadata {
        config: cfg.clone(),
        scenario_params: params.clone(),
        report: None,
        series: Vec::new(),
        error: Some(error.to_string()),
    };
    write_json(&path, &meta)?;
    Ok(path)
}

fn parse_err(path: &Path, line: u64, msg: impl std::fmt::Display) -> CliError {
    CliError::Usage(format!("{}:{line}: {msg}", path.display()))
}

fn read_series(path: &Path, mode: FilterMode, m: usize) -> Result<RmseSeries, CliError> {
    let mut r = csv::Reader::from_path(path).map_err(|e| io_err(path, e))?;
    let header = r.headers().map_err(|e| parse_err(path, 1, e))?.clone();
    if header.iter().ne(SERIES_HEADER) {
        return Err(parse_err(
            path,
            1,
            format!(
                "expected header `{}`, found `{}`",
                SERIES_HEADER.join(","),
                header.iter().collect::<Vec<_>>().join(",")
            ),
        ));
    }
    let mut rows: BTreeMap<usize, BTreeMap<usize, f64>> = BTreeMap::new();
    for record in r.records() {
        let record = record.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            parse_err(path, line, e)
        })?;
        let line = record.position().map_or(0, |p| p.line());
        let field = |i: usize| record.get(i).unwrap_or("");
        let epoch: usize = field(0).parse().map_err(|_| {
            parse_err(
                path,
                line,
                format!("column `epoch`: `{}` is not an integer", field(0)),
            )
        })?;
        let comp: usize = field(1).parse().map_err(|_| {
            parse_err(
                path,
                line,
                format!("column `component`: `{}` is not an integer", field(1)),
            )
        })?;
        let rmse: f64 = field(2).parse().map_err(|_| {
            parse_err(
                path,
                line,
                format!("column `rmse`: `{}` is not a number", field(2)),
            )
        })?;
        rows.entry(epoch).or_default().insert(comp, rmse);
    }
    let comps = rows.values().next().map_or(0, BTreeMap::len);
    let mut per_epoch = Vec::with_capacity(rows.len());
    for (i, (epoch, row)) in rows.into_iter().enumerate() {
        if epoch != i + 1 || row.len() != comps || row.keys().copied().ne(0..comps) {
            return Err(parse_err(
                path,
                0,
                format!("epoch {epoch}: incomplete or out-of-order rows"),
            ));
        }
        per_epoch.push(row.into_values().collect());
    }
    Ok(RmseSeries::from_per_epoch(mode, m, per_epoch))
}

/// Rebuilds a report from a directory written by [`write_report`].
pub fn read_report(dir: &Path) -> Result<RmseReport, CliError> {
    let meta_path = dir.join(METADATA_FILE);
    if !meta_path.is_file() {
        let hint = if partial(&meta_path).is_file() {
            " (only a .partial result from a failed run is present)"
        } else {
            ""
        };
        return Err(CliError::Runtime(format!(
            "{}: not found{hint}",
            meta_path.display()
        )));
    }
    let text = fs::read_to_string(&meta_path).map_err(|e| io_err(&meta_path, e))?;
    let meta: Metadata = serde_json::from_str(&text).map_err(|e| {
        CliError::Usage(format!(
            "{}:{}:{}: {e}",
            meta_path.display(),
            e.line(),
            e.column()
        ))
    })?;
    let report_meta = meta
        .report
        .ok_or_else(|| CliError::Usage(format!("{}: no report section", meta_path.display())))?;
    let series = meta
        .series
        .iter()
        .map(|rec| {
            let path = dir.join(&rec.file);
            if !path.is_file() {
                return Err(CliError::Runtime(format!("{}: not found", path.display())));
            }
            let mut s = read_series(&path, rec.mode, rec.m)?;
            s.diagnostics = rec.diagnostics;
            s.invariant_violations = rec.invariant_violations;
            Ok(s)
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(RmseReport {
        series,
        metadata: report_meta,
    })
}

pub fn comparison_table(report: &RmseReport) -> Result<String, CliError> {
    let rows = compare_report(report).map_err(|e| CliError::Usage(e.to_string()))?;
    let mut out = format!(
        "{:>5}  {:>12}  {:>12}  {:>12}  {}\n",
        "m", "enkf_rmse", "enckf_rmse", "win_fraction", "component_wins"
    );
    for c in rows {
        let comps: Vec<String> = c
            .component_win_fractions
            .iter()
            .map(|v| format!("{v:.3}"))
            .collect();
        out += &format!(
            "{:>5}  {:>12.4}  {:>12.4}  {:>12.3}  [{}]\n",
            c.ensemble_size,
            c.enkf_mean_rmse,
            c.enckf_mean_rmse,
            c.win_fraction,
            comps.join(", ")
        );
    }
    Ok(out)
}
