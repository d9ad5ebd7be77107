//! Run reports: a per-worker CSV table and a JSON summary.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::{PartitionMethod, RunConfig};
use super::RunError;
use crate::models::ModelMetrics;
use crate::qsm::QsmStats;
use crate::sync::LookaheadMode;

pub const REPORT_FORMAT: u32 = 1;
pub const WORKERS_FILE: &str = "workers.csv";
pub const SUMMARY_FILE: &str = "summary.json";

/// One CSV row. Times are wall-clock seconds.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct WorkerReport {
    pub format_version: u32,
    pub worker: usize,
    pub executed_events: u64,
    pub windows: u64,
    pub computing_time: f64,
    pub communicating_time: f64,
    pub waiting_time: f64,
    pub socket_time: f64,
    pub total_time: f64,
    pub events_sent: u64,
    pub events_received: u64,
    pub event_bytes_sent: u64,
    pub messages_to_server: u64,
    pub server_requests: u64,
    pub qsm_requests: u64,
    pub qsm_local: u64,
    pub qsm_forwarded: u64,
    /// Share of this worker's QSM requests handled by the global QSM.
    pub server_request_fraction: f64,
    pub max_lag_ps: u64,
}

impl WorkerReport {
    pub fn accounted_time(&self) -> f64 {
        self.computing_time + self.communicating_time + self.waiting_time + self.socket_time
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ServerSummary {
    pub frames: u64,
    pub requests: u64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct AuditSummary {
    pub checks: u64,
    pub violations: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub format_version: u32,
    pub config_hash: String,
    pub workers: usize,
    pub partition: PartitionMethod,
    pub lookahead_mode: LookaheadMode,
    pub lookahead_ps: u64,
    pub end_time_ps: u64,
    pub wall_time: f64,
    pub executed_events: u64,
    pub windows: u64,
    pub event_bytes_sent: u64,
    pub messages_to_server: u64,
    pub per_worker: Vec<WorkerReport>,
    pub metrics: ModelMetrics,
    pub qsm: QsmStats,
    pub server: Option<ServerSummary>,
    pub audit: Option<AuditSummary>,
    pub speedup: Option<f64>,
    pub efficiency: Option<f64>,
    pub config: RunConfig,
}

impl RunReport {
    /// Fraction of all QSM requests handled by the local QSMs.
    pub fn local_fraction(&self) -> f64 {
        self.qsm.local_fraction()
    }

    /// Compares wall time against a sequential run of the same config.
    pub fn apply_baseline(&mut self, baseline: &RunReport) -> Result<(), RunError> {
        if baseline.config_hash != self.config_hash {
            return Err(RunError::MismatchedConfig {
                report: self.config_hash.clone(),
                baseline: baseline.config_hash.clone(),
            });
        }
        let (s, e) = speedup(baseline.wall_time, self.wall_time, self.workers);
        self.speedup = Some(s);
        self.efficiency = Some(e);
        Ok(())
    }
}

/// `(T_s / T_p, speedup / p)`.
pub fn speedup(sequential: f64, parallel: f64, workers: usize) -> (f64, f64) {
    let s = sequential / parallel;
    (s, s / workers as f64)
}

fn io(path: &Path) -> impl FnOnce(std::io::Error) -> RunError + '_ {
    move |source| RunError::Io {
        path: path.display().to_string(),
        source,
    }
}

pub fn write_report(report: &RunReport, dir: impl AsRef<Path>) -> Result<(), RunError> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(io(dir))?;
    let csv_path = dir.join(WORKERS_FILE);
    let mut w = csv::Writer::from_path(&csv_path).map_err(|e| RunError::Report(e.to_string()))?;
    for row in &report.per_worker {
        w.serialize(row).map_err(|e| RunError::Report(e.to_string()))?;
    }
    w.flush().map_err(io(&csv_path))?;
    let json_path = dir.join(SUMMARY_FILE);
    let json = serde_json::to_string_pretty(report).map_err(|e| RunError::Report(e.to_string()))?;
    fs::write(&json_path, json + "\n").map_err(io(&json_path))?;
    Ok(())
}

pub fn read_report(dir: impl AsRef<Path>) -> Result<RunReport, RunError> {
    let path = dir.as_ref().join(SUMMARY_FILE);
    let text = fs::read_to_string(&path).map_err(io(&path))?;
    let report: RunReport = serde_json::from_str(&text).map_err(|e| RunError::Report(format!("{}: {e}", path.display())))?;
    if report.format_version != REPORT_FORMAT {
        return Err(RunError::Report(format!(
            "{}: format version {} is not {REPORT_FORMAT}",
            path.display(),
            report.format_version
        )));
    }
    Ok(report)
}

/// Adds speedup and efficiency against `baseline_dir` to the report in
/// `dir` and rewrites its files.
pub fn report(dir: impl AsRef<Path>, baseline_dir: impl AsRef<Path>) -> Result<RunReport, RunError> {
    let mut r = read_report(&dir)?;
    let base = read_report(baseline_dir)?;
    r.apply_baseline(&base)?;
    write_report(&r, dir)?;
    Ok(r)
}
