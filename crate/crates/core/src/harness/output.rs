//! Result files: an RMSE table, a metadata sidecar and a timing table.
//!
//! The RMSE table and the metadata depend only on the configuration and
//! seeds, so reruns reproduce them byte for byte. Wall-clock timings go to a
//! separate file.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::Serialize;

use super::config::ExperimentConfig;
use super::experiment::ExperimentRecord;
use crate::error::{Error, Result};

/// Paths written by [`emit_results`].
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct OutputPaths {
    pub table: PathBuf,
    pub metadata: PathBuf,
    pub timing: PathBuf,
}

impl OutputPaths {
    /// `<stem>.csv`, `<stem>.meta.toml` and `<stem>.timing.csv`.
    pub fn for_stem(stem: &Path) -> Self {
        let with = |suffix: &str| {
            let mut s = stem.as_os_str().to_owned();
            s.push(suffix);
            PathBuf::from(s)
        };
        Self {
            table: with(".csv"),
            metadata: with(".meta.toml"),
            timing: with(".timing.csv"),
        }
    }
}

fn number(x: f64) -> String {
    x.to_string()
}

/// RMSE table averaged over realizations: one row per cycle and filter.
/// With an empty roster only the free-run columns are written.
pub fn rmse_table(rec: &ExperimentRecord) -> Result<String> {
    let cfg = &rec.config;
    let names = cfg.variable_names();
    let mut w = csv::Writer::from_writer(Vec::new());
    let columns = |prefix: &str| -> Vec<String> { names.iter().map(|v| format!("{prefix}_{v}")).collect() };
    if cfg.roster.is_empty() {
        let header: Vec<String> = std::iter::once("cycle".to_string())
            .chain(columns("free_rmse"))
            .collect();
        w.write_record(&header)?;
        for c in 0..cfg.cycles {
            let mut row = vec![(c + 1).to_string()];
            row.extend((0..names.len()).map(|v| number(rec.free_rmse(c, v).0)));
            w.write_record(&row)?;
        }
    } else {
        let mut header = vec!["cycle".to_string(), "filter".to_string()];
        header.extend(columns("forecast_rmse"));
        header.extend(columns("analysis_rmse"));
        header.extend(columns("analysis_se"));
        header.extend(columns("free_rmse"));
        header.push("diverged".into());
        w.write_record(&header)?;
        for c in 0..cfg.cycles {
            for filter in &cfg.roster {
                let label = filter.to_string();
                let mut row = vec![(c + 1).to_string(), label.clone()];
                row.extend((0..names.len()).map(|v| number(rec.forecast_rmse(&label, c, v).0)));
                let analysis: Vec<(f64, f64)> = (0..names.len()).map(|v| rec.analysis_rmse(&label, c, v)).collect();
                row.extend(analysis.iter().map(|a| number(a.0)));
                row.extend(analysis.iter().map(|a| number(a.1)));
                row.extend((0..names.len()).map(|v| number(rec.free_rmse(c, v).0)));
                row.push(rec.diverged_count(&label, c).to_string());
                w.write_record(&row)?;
            }
        }
    }
    let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
    Ok(String::from_utf8(bytes).expect("CSV output is UTF-8"))
}

#[derive(Serialize)]
struct Divergence {
    filter: String,
    realizations: usize,
}

#[derive(Serialize)]
struct Summary {
    variables: Vec<String>,
    filters: Vec<String>,
    realizations: usize,
    diverged: Vec<Divergence>,
    #[serde(skip_serializing_if = "Option::is_none")]
    free_mass_drift: Option<f64>,
}

#[derive(Serialize)]
struct Metadata<'a> {
    generator: String,
    summary: Summary,
    config: &'a ExperimentConfig,
}

/// Resolved configuration, seeds and a short summary as TOML.
pub fn metadata(rec: &ExperimentRecord) -> Result<String> {
    let cfg = &rec.config;
    let last = cfg.cycles - 1;
    let meta = Metadata {
        generator: format!("{} {}", env!("CARGO_PKG_NAME"), env!("CARGO_PKG_VERSION")),
        summary: Summary {
            variables: cfg.variable_names().iter().map(|s| s.to_string()).collect(),
            filters: cfg.roster.iter().map(|f| f.to_string()).collect(),
            realizations: rec.realizations.len(),
            diverged: cfg
                .roster
                .iter()
                .map(|f| Divergence {
                    filter: f.to_string(),
                    realizations: rec.diverged_count(&f.to_string(), last),
                })
                .collect(),
            free_mass_drift: rec.max_free_mass_drift(),
        },
        config: cfg,
    };
    toml::to_string(&meta).map_err(|e| Error::Config(e.to_string()))
}

/// Mean wall-clock seconds per analysis for each filter.
pub fn timing_table(rec: &ExperimentRecord) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["filter", "analyses", "mean_seconds"])?;
    for (f, filter) in rec.config.roster.iter().enumerate() {
        let times: Vec<f64> = rec
            .realizations
            .iter()
            .flat_map(|r| r.filters[f].analysis_seconds.iter().copied())
            .collect();
        let mean = if times.is_empty() {
            0.0
        } else {
            times.iter().sum::<f64>() / times.len() as f64
        };
        w.write_record([filter.to_string(), times.len().to_string(), format!("{mean:.6e}")])?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
    Ok(String::from_utf8(bytes).expect("CSV output is UTF-8"))
}

/// Write the three result files next to `stem`, creating parent directories.
pub fn emit_results(rec: &ExperimentRecord, stem: &Path) -> Result<OutputPaths> {
    let paths = OutputPaths::for_stem(stem);
    if let Some(parent) = paths.table.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent)?;
    }
    std::fs::write(&paths.table, rmse_table(rec)?)?;
    std::fs::write(&paths.metadata, metadata(rec)?)?;
    std::fs::write(&paths.timing, timing_table(rec)?)?;
    Ok(paths)
}

/// Human-readable last-cycle summary.
pub fn summary_text(rec: &ExperimentRecord) -> String {
    let cfg = &rec.config;
    let last = cfg.cycles - 1;
    let names = cfg.variable_names();
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{}: {} realization(s), N = {}, {} cycles; mean RMSE at the last cycle",
        cfg.name,
        rec.realizations.len(),
        cfg.ensemble_size,
        cfg.cycles
    );
    let _ = write!(out, "{:<8}", "filter");
    for v in &names {
        let _ = write!(out, " {:>14} {:>14}", format!("forecast {v}"), format!("analysis {v}"));
    }
    let _ = writeln!(out, " {:>9}", "diverged");
    let _ = write!(out, "{:<8}", "Free");
    for v in 0..names.len() {
        let free = rec.free_rmse(last, v).0;
        let _ = write!(out, " {free:>14.6} {free:>14.6}");
    }
    let _ = writeln!(out, " {:>9}", "-");
    for filter in &cfg.roster {
        let label = filter.to_string();
        let _ = write!(out, "{label:<8}");
        for v in 0..names.len() {
            let _ = write!(
                out,
                " {:>14.6} {:>14.6}",
                rec.forecast_rmse(&label, last, v).0,
                rec.analysis_rmse(&label, last, v).0
            );
        }
        let _ = writeln!(out, " {:>9}", rec.diverged_count(&label, last));
    }
    if let Some(drift) = rec.max_free_mass_drift() {
        let _ = writeln!(out, "free-run relative mass drift: {drift:.3e}");
    }
    out
}
