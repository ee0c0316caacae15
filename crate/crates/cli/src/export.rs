//! Trace, event-log and metrics files.

use std::fs::File;
use std::io::Write;
use std::path::Path;

use gpfl_core::Trace64;
use serde::{Deserialize, Serialize};

use crate::error::CliError;

pub const TRACE_FILE: &str = "trace.csv";
pub const EVENTS_FILE: &str = "events.csv";
pub const BUDGET_FILE: &str = "budget.csv";
pub const METRICS_FILE: &str = "metrics.toml";

/// Decimal rendering with 12 significant digits.
pub fn fmt_value(v: f64) -> String {
    format!("{v:.11e}")
}

/// Column names for an order-`n` plant.
pub fn trace_header(n: usize) -> Vec<String> {
    let mut h = vec!["t".to_owned()];
    h.extend((1..=n).map(|i| format!("x_{i}")));
    h.extend((1..=n).map(|i| format!("xd_{i}")));
    for c in [
        "e_norm", "r", "u", "sigma", "f_hat", "g_hat", "kappa", "event",
    ] {
        h.push(c.to_owned());
    }
    h
}

fn csv_writer(path: &Path) -> Result<csv::Writer<File>, CliError> {
    let file = File::create(path).map_err(|e| CliError::io(path, e))?;
    Ok(csv::Writer::from_writer(file))
}

fn csv_err(path: &Path, e: csv::Error) -> CliError {
    CliError::io(path, std::io::Error::other(e))
}

/// One row per integrator step, header first.
pub fn export_trace(trace: &Trace64, path: &Path) -> Result<(), CliError> {
    let n = trace.rows.first().map_or(0, |r| r.x.len());
    let mut w = csv_writer(path)?;
    w.write_record(trace_header(n))
        .map_err(|e| csv_err(path, e))?;
    for row in &trace.rows {
        let mut rec: Vec<String> = Vec::with_capacity(2 * n + 9);
        rec.push(fmt_value(row.t));
        rec.extend(row.x.iter().map(|&v| fmt_value(v)));
        rec.extend(row.x_d.iter().map(|&v| fmt_value(v)));
        for v in [row.e_norm, row.r, row.u, row.sigma, row.f_hat, row.g_hat] {
            rec.push(fmt_value(v));
        }
        rec.push(row.kappa.to_string());
        rec.push(u8::from(row.event).to_string());
        w.write_record(&rec).map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| CliError::io(path, e))
}

/// A trace file read back: column names and numeric rows.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceTable {
    pub header: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl TraceTable {
    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        let i = self.header.iter().position(|h| h == name)?;
        Some(self.rows.iter().map(|r| r[i]).collect())
    }
}

pub fn read_trace(path: &Path) -> Result<TraceTable, CliError> {
    let mut r = csv::Reader::from_path(path).map_err(|e| csv_err(path, e))?;
    let header = r
        .headers()
        .map_err(|e| csv_err(path, e))?
        .iter()
        .map(str::to_owned)
        .collect();
    let mut rows = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(|e| csv_err(path, e))?;
        let row = rec
            .iter()
            .map(|v| v.parse::<f64>())
            .collect::<Result<Vec<_>, _>>()
            .map_err(|e| {
                CliError::io(
                    path,
                    std::io::Error::new(std::io::ErrorKind::InvalidData, e),
                )
            })?;
        rows.push(row);
    }
    Ok(TraceTable { header, rows })
}

pub fn export_events(trace: &Trace64, path: &Path) -> Result<(), CliError> {
    let mut w = csv_writer(path)?;
    w.write_record(["index", "time", "step", "kind", "dataset_size"])
        .map_err(|e| csv_err(path, e))?;
    for (i, ev) in trace.events.events().iter().enumerate() {
        w.write_record([
            i.to_string(),
            fmt_value(ev.time),
            ev.step.to_string(),
            ev.kind.to_string(),
            ev.dataset_size.to_string(),
        ])
        .map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| CliError::io(path, e))
}

/// Budget-reduction checks, one row per event of a budget run.
pub fn export_budget_checks(trace: &Trace64, path: &Path) -> Result<(), CliError> {
    let mut w = csv_writer(path)?;
    w.write_record([
        "time",
        "dataset_size",
        "sigma_after",
        "threshold",
        "condition_holds",
        "fallback",
    ])
    .map_err(|e| csv_err(path, e))?;
    for c in &trace.budget_checks {
        w.write_record([
            fmt_value(c.time),
            c.dataset_size.to_string(),
            fmt_value(c.sigma_after),
            fmt_value(c.threshold),
            u8::from(c.condition_holds).to_string(),
            u8::from(c.fallback).to_string(),
        ])
        .map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| CliError::io(path, e))
}

/// Headline numbers of one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsSummary {
    pub scenario: String,
    pub completed: bool,
    pub event_count: usize,
    pub final_dataset_size: usize,
    pub max_dataset_size: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub min_inter_event_time: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mean_inter_event_time: Option<f64>,
    pub final_error_norm: f64,
    /// Largest `‖e‖` over the second half of the horizon.
    pub max_error_norm_second_half: f64,
    pub floor_hits: usize,
    pub wall_clock_seconds: f64,
}

impl MetricsSummary {
    pub fn from_trace(scenario: &str, trace: &Trace64, horizon: f64, completed: bool) -> Self {
        let half = 0.5 * horizon;
        Self {
            scenario: scenario.to_owned(),
            completed,
            event_count: trace.events.len(),
            final_dataset_size: trace.final_model.len(),
            max_dataset_size: trace.peak_dataset_size,
            min_inter_event_time: trace.events.min_gap(),
            mean_inter_event_time: trace.events.mean_gap(),
            final_error_norm: trace.rows.last().map_or(f64::NAN, |r| r.e_norm),
            max_error_norm_second_half: trace
                .rows
                .iter()
                .filter(|r| r.t >= half)
                .map(|r| r.e_norm)
                .fold(0.0, f64::max),
            floor_hits: trace.floor_hits,
            wall_clock_seconds: trace.wall_clock_seconds,
        }
    }

    pub fn write(&self, path: &Path) -> Result<(), CliError> {
        let text = toml::to_string(self).expect("metrics serialize");
        let mut f = File::create(path).map_err(|e| CliError::io(path, e))?;
        f.write_all(text.as_bytes())
            .map_err(|e| CliError::io(path, e))
    }
}

impl std::fmt::Display for MetricsSummary {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let opt = |v: Option<f64>| v.map_or("-".to_owned(), |v| format!("{v:.6e}"));
        writeln!(f, "scenario            {}", self.scenario)?;
        writeln!(f, "completed           {}", self.completed)?;
        writeln!(f, "events              {}", self.event_count)?;
        writeln!(f, "final dataset size  {}", self.final_dataset_size)?;
        writeln!(f, "max dataset size    {}", self.max_dataset_size)?;
        writeln!(f, "min inter-event     {}", opt(self.min_inter_event_time))?;
        writeln!(f, "mean inter-event    {}", opt(self.mean_inter_event_time))?;
        writeln!(f, "final |e|           {:.6e}", self.final_error_norm)?;
        writeln!(
            f,
            "max |e|, 2nd half   {:.6e}",
            self.max_error_norm_second_half
        )?;
        writeln!(f, "g floor hits        {}", self.floor_hits)?;
        write!(f, "wall clock          {:.3} s", self.wall_clock_seconds)
    }
}
