//! Run artifacts on disk and the export step derived from them.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use chrono::{Duration, NaiveDateTime};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::devices::EnergyTotals;
use crate::sim::SimTime;

pub const MANIFEST: &str = "manifest.json";
pub const TICKS: &str = "ticks.csv";
pub const SERIES_DIR: &str = "series";
pub const DATAPOINTS: &str = "datapoints.csv";
pub const SUMMARY: &str = "summary.csv";
pub const EVENTS: &str = "events.log";
pub const COUNTERS: &str = "counters.json";
pub const ENDPOINTS: &str = "endpoints.json";

pub const TICKS_HEADER: &str = "timestamp,window_s,consumption_kw,solar_kw,charge_kw,discharge_kw,turbine_kw,grid_kw,dissipated_kw,deficit_kw,residual_kw,storage_level,storage_mode,turbine_running";
pub const SUMMARY_HEADER: &str = "day,date,consumption_kwh,solar_kwh,storage_in_kwh,storage_out_kwh,turbine_kwh,grid_kwh,dissipated_kwh,deficit_kwh,ems_ticks,max_abs_residual_kw";

#[derive(Debug, Error)]
pub enum ExportError {
    #[error("{path}: {message}")]
    Io { path: String, message: String },
    #[error("{path}:{line}: {message}")]
    Malformed { path: String, line: usize, message: String },
}

fn io_err(path: &Path, e: impl std::fmt::Display) -> ExportError {
    ExportError::Io { path: path.display().to_string(), message: e.to_string() }
}

fn malformed(path: &Path, line: usize, message: impl Into<String>) -> ExportError {
    ExportError::Malformed { path: path.display().to_string(), line, message: message.into() }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestPoint {
    pub xid: String,
    pub name: String,
    pub poll_period: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub scenario: String,
    pub start: NaiveDateTime,
    pub duration: f64,
    pub seed: u64,
    /// In registration order; the export's tie-break within one timestamp.
    pub datapoints: Vec<ManifestPoint>,
}

impl Manifest {
    pub fn load(run_dir: &Path) -> Result<Self, ExportError> {
        let path = run_dir.join(MANIFEST);
        let text = fs::read_to_string(&path).map_err(|e| io_err(&path, e))?;
        serde_json::from_str(&text).map_err(|e| malformed(&path, e.line(), e.to_string()))
    }

    pub fn write(&self, run_dir: &Path) -> Result<(), ExportError> {
        let path = run_dir.join(MANIFEST);
        let text = serde_json::to_string_pretty(self).expect("manifest serializes");
        fs::write(&path, text + "\n").map_err(|e| io_err(&path, e))
    }
}

/// One row of `ticks.csv`: mean bus powers over the window ending at `timestamp`.
#[derive(Debug, Clone, PartialEq)]
pub struct TickRow {
    pub timestamp: SimTime,
    pub window_s: f64,
    pub consumption_kw: f64,
    pub solar_kw: f64,
    pub charge_kw: f64,
    pub discharge_kw: f64,
    pub turbine_kw: f64,
    pub grid_kw: f64,
    pub dissipated_kw: f64,
    pub deficit_kw: f64,
    pub residual_kw: f64,
    pub storage_level: f64,
    pub storage_mode: String,
    pub turbine_running: bool,
}

impl TickRow {
    pub fn from_window(timestamp: SimTime, w: &EnergyTotals, level: f64, mode: &str, running: bool) -> Self {
        let k = if w.seconds > 0.0 { 3600.0 / w.seconds } else { 0.0 };
        TickRow {
            timestamp,
            window_s: w.seconds,
            consumption_kw: w.consumption * k,
            solar_kw: w.solar * k,
            charge_kw: w.charge * k,
            discharge_kw: w.discharge * k,
            turbine_kw: w.turbine * k,
            grid_kw: w.grid * k,
            dissipated_kw: w.dissipated * k,
            deficit_kw: w.deficit * k,
            residual_kw: w.mean_residual_kw(),
            storage_level: level,
            storage_mode: mode.to_string(),
            turbine_running: running,
        }
    }

    pub fn to_csv(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
            self.timestamp,
            self.window_s,
            self.consumption_kw,
            self.solar_kw,
            self.charge_kw,
            self.discharge_kw,
            self.turbine_kw,
            self.grid_kw,
            self.dissipated_kw,
            self.deficit_kw,
            self.residual_kw,
            self.storage_level,
            self.storage_mode,
            self.turbine_running
        )
    }

    pub fn parse(line: &str) -> Result<Self, String> {
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 14 {
            return Err(format!("expected 14 fields, found {}", f.len()));
        }
        let num = |i: usize| f[i].parse::<f64>().map_err(|e| format!("field {}: {e}", i + 1));
        Ok(TickRow {
            timestamp: SimTime::from_secs_f64(num(0)?),
            window_s: num(1)?,
            consumption_kw: num(2)?,
            solar_kw: num(3)?,
            charge_kw: num(4)?,
            discharge_kw: num(5)?,
            turbine_kw: num(6)?,
            grid_kw: num(7)?,
            dissipated_kw: num(8)?,
            deficit_kw: num(9)?,
            residual_kw: num(10)?,
            storage_level: num(11)?,
            storage_mode: f[12].to_string(),
            turbine_running: f[13].parse().map_err(|e| format!("field 14: {e}"))?,
        })
    }
}

pub fn read_ticks(run_dir: &Path) -> Result<Vec<TickRow>, ExportError> {
    let path = run_dir.join(TICKS);
    let text = fs::read_to_string(&path).map_err(|e| io_err(&path, e))?;
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h == TICKS_HEADER => {}
        _ => return Err(malformed(&path, 1, "unexpected header")),
    }
    lines
        .filter(|(_, l)| !l.is_empty())
        .map(|(i, l)| TickRow::parse(l).map_err(|m| malformed(&path, i + 1, m)))
        .collect()
}

/// Per-day energy totals, kWh.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct DaySummary {
    pub day: u64,
    pub totals: EnergyTotals,
    pub ticks: u64,
    pub max_abs_residual_kw: f64,
}

/// Groups tick windows by the day their window starts in.
pub fn summarize(ticks: &[TickRow]) -> Vec<DaySummary> {
    let mut days: BTreeMap<u64, DaySummary> = BTreeMap::new();
    for t in ticks {
        let start = (t.timestamp.as_secs_f64() - t.window_s).max(0.0);
        let day = (start / 86400.0).floor() as u64;
        let d = days.entry(day).or_insert_with(|| DaySummary { day, ..Default::default() });
        let h = t.window_s / 3600.0;
        d.totals.merge(&EnergyTotals {
            consumption: t.consumption_kw * h,
            solar: t.solar_kw * h,
            charge: t.charge_kw * h,
            discharge: t.discharge_kw * h,
            turbine: t.turbine_kw * h,
            grid: t.grid_kw * h,
            dissipated: t.dissipated_kw * h,
            deficit: t.deficit_kw * h,
            seconds: t.window_s,
        });
        d.ticks += 1;
        d.max_abs_residual_kw = d.max_abs_residual_kw.max(t.residual_kw.abs());
    }
    days.into_values().collect()
}

pub fn summary_csv(days: &[DaySummary], start: NaiveDateTime) -> String {
    let mut out = String::from(SUMMARY_HEADER);
    out.push('\n');
    for d in days {
        let date = (start + Duration::days(d.day as i64)).date();
        let t = &d.totals;
        let _ = writeln!(
            out,
            "{},{},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{},{:.9}",
            d.day,
            date,
            t.consumption,
            t.solar,
            t.charge,
            t.discharge,
            t.turbine,
            t.grid,
            t.dissipated,
            t.deficit,
            d.ticks,
            d.max_abs_residual_kw
        );
    }
    out
}

/// Merges `series/*.csv` into `timestamp,xid,value` rows ordered by time, then registration order.
pub fn datapoints_csv(run_dir: &Path, manifest: &Manifest) -> Result<String, ExportError> {
    let mut rows: Vec<(u64, usize, String, String)> = Vec::new();
    for (idx, p) in manifest.datapoints.iter().enumerate() {
        let path = run_dir.join(SERIES_DIR).join(format!("{}.csv", p.xid));
        let text = match fs::read_to_string(&path) {
            Ok(t) => t,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => continue,
            Err(e) => return Err(io_err(&path, e)),
        };
        for (i, line) in text.lines().enumerate().skip(1) {
            if line.is_empty() {
                continue;
            }
            let (ts, value) = line.split_once(',').ok_or_else(|| malformed(&path, i + 1, "missing comma"))?;
            let secs: f64 = ts.parse().map_err(|e| malformed(&path, i + 1, format!("timestamp: {e}")))?;
            rows.push((SimTime::from_secs_f64(secs).as_millis(), idx, ts.to_string(), value.to_string()));
        }
    }
    rows.sort_by_key(|r| (r.0, r.1));
    let mut out = String::with_capacity(rows.len() * 32 + 32);
    out.push_str("timestamp,xid,value\n");
    for (_, idx, ts, value) in rows {
        let _ = writeln!(out, "{ts},{},{value}", manifest.datapoints[idx].xid);
    }
    Ok(out)
}

/// Writes `datapoints.csv` and `summary.csv` into `out_dir`; a pure function of the run's
/// series, manifest and ticks.
pub fn export(run_dir: &Path, out_dir: &Path) -> Result<Vec<PathBuf>, ExportError> {
    let manifest = Manifest::load(run_dir)?;
    let datapoints = datapoints_csv(run_dir, &manifest)?;
    let summary = summary_csv(&summarize(&read_ticks(run_dir)?), manifest.start);
    fs::create_dir_all(out_dir).map_err(|e| io_err(out_dir, e))?;
    let mut written = Vec::new();
    for (name, body) in [(DATAPOINTS, datapoints), (SUMMARY, summary)] {
        let path = out_dir.join(name);
        fs::write(&path, body).map_err(|e| io_err(&path, e))?;
        written.push(path);
    }
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(ts: u64, window: f64, load: f64, grid: f64) -> TickRow {
        TickRow {
            timestamp: SimTime::from_secs(ts),
            window_s: window,
            consumption_kw: load,
            solar_kw: 0.0,
            charge_kw: 0.0,
            discharge_kw: 0.0,
            turbine_kw: 0.0,
            grid_kw: grid,
            dissipated_kw: 0.0,
            deficit_kw: load,
            residual_kw: load - grid,
            storage_level: 50.0,
            storage_mode: "idle".into(),
            turbine_running: false,
        }
    }

    #[test]
    fn tick_rows_round_trip() {
        let r = row(60, 60.0, 12.5, 12.5);
        assert_eq!(TickRow::parse(&r.to_csv()).unwrap(), r);
        assert_eq!(TICKS_HEADER.split(',').count(), 14);
    }

    #[test]
    fn summary_assigns_windows_to_their_start_day() {
        let rows = vec![row(86400, 60.0, 60.0, 60.0), row(86460, 60.0, 30.0, 30.0)];
        let days = summarize(&rows);
        assert_eq!(days.len(), 2);
        assert_eq!(days[0].day, 0);
        assert!((days[0].totals.consumption - 1.0).abs() < 1e-12);
        assert!((days[1].totals.grid - 0.5).abs() < 1e-12);
    }
}
