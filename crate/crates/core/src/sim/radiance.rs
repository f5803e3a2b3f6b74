//! Hourly radiance tables (`timestamp,watt_per_msq`).

use std::fmt::Write as _;
use std::path::Path;

use chrono::NaiveDateTime;

use super::{InterpolationMode, InterpolationTable, SimError};

const FORMATS: &[&str] = &["%Y-%m-%dT%H:%M:%S", "%Y-%m-%dT%H:%M", "%Y-%m-%d %H:%M:%S", "%Y-%m-%d %H:%M"];

fn parse_timestamp(raw: &str) -> Option<NaiveDateTime> {
    let raw = raw.trim().trim_end_matches('Z');
    FORMATS.iter().find_map(|f| NaiveDateTime::parse_from_str(raw, f).ok())
}

/// Radiance lookup keyed by calendar time; returns the temporally closest record.
#[derive(Debug, Clone)]
pub struct RadianceTable {
    table: InterpolationTable,
}

impl RadianceTable {
    pub fn from_records(records: &[(NaiveDateTime, f64)]) -> Result<Self, SimError> {
        let mut points: Vec<(f64, f64)> = records.iter().map(|(t, w)| (t.and_utc().timestamp() as f64, *w)).collect();
        points.sort_by(|a, b| a.0.total_cmp(&b.0));
        let table = InterpolationTable::new(points, InterpolationMode::NearestRecord)?;
        Ok(RadianceTable { table })
    }

    /// W/m² at `at`.
    pub fn at(&self, at: NaiveDateTime) -> f64 {
        self.table.interpolate(at.and_utc().timestamp() as f64)
    }

    pub fn len(&self) -> usize {
        self.table.points().len()
    }

    pub fn is_empty(&self) -> bool {
        self.table.points().is_empty()
    }

    pub fn table(&self) -> &InterpolationTable {
        &self.table
    }
}

pub fn parse_radiance_csv(text: &str) -> Result<RadianceTable, SimError> {
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    match lines.next() {
        Some((_, header)) if header.trim() == "timestamp,watt_per_msq" => {}
        Some((_, header)) => {
            return Err(SimError::Config(format!(
                "radiance csv: expected header `timestamp,watt_per_msq`, got `{}`",
                header.trim()
            )))
        }
        None => return Err(SimError::Config("radiance csv is empty".into())),
    }
    let mut records = Vec::new();
    for (i, line) in lines {
        let (ts, w) = line
            .split_once(',')
            .ok_or_else(|| SimError::Config(format!("radiance csv line {}: expected two columns", i + 1)))?;
        let ts = parse_timestamp(ts)
            .ok_or_else(|| SimError::Config(format!("radiance csv line {}: bad timestamp `{ts}`", i + 1)))?;
        let w: f64 = w
            .trim()
            .parse()
            .map_err(|_| SimError::Config(format!("radiance csv line {}: bad value `{}`", i + 1, w.trim())))?;
        records.push((ts, w));
    }
    RadianceTable::from_records(&records)
}

pub fn load_radiance_csv(path: &Path) -> Result<RadianceTable, SimError> {
    let text =
        std::fs::read_to_string(path).map_err(|e| SimError::Config(format!("cannot read {}: {e}", path.display())))?;
    parse_radiance_csv(&text)
}

pub fn write_radiance_csv(records: &[(NaiveDateTime, f64)]) -> String {
    let mut out = String::from("timestamp,watt_per_msq\n");
    for (t, w) in records {
        let _ = writeln!(out, "{},{}", t.format("%Y-%m-%dT%H:%M:%S"), w);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use chrono::NaiveDate;

    #[test]
    fn nearest_record_lookup() {
        let csv = "timestamp,watt_per_msq\n2016-06-06T11:00:00,700\n2016-06-06T12:00:00,900\n";
        let t = parse_radiance_csv(csv).unwrap();
        let d = NaiveDate::from_ymd_opt(2016, 6, 6).unwrap();
        assert_eq!(t.at(d.and_hms_opt(11, 20, 0).unwrap()), 700.0);
        assert_eq!(t.at(d.and_hms_opt(11, 40, 0).unwrap()), 900.0);
        assert_eq!(t.at(d.and_hms_opt(23, 0, 0).unwrap()), 900.0);
    }

    #[test]
    fn rejects_bad_header_and_rows() {
        assert!(parse_radiance_csv("time,value\n").is_err());
        assert!(parse_radiance_csv("timestamp,watt_per_msq\nyesterday,3\n").is_err());
        assert!(parse_radiance_csv("timestamp,watt_per_msq\n").is_err());
    }

    #[test]
    fn write_then_parse() {
        let d = NaiveDate::from_ymd_opt(2016, 1, 1).unwrap();
        let recs = vec![(d.and_hms_opt(0, 0, 0).unwrap(), 0.0), (d.and_hms_opt(1, 0, 0).unwrap(), 12.5)];
        let t = parse_radiance_csv(&write_radiance_csv(&recs)).unwrap();
        assert_eq!(t.len(), 2);
        assert_eq!(t.at(d.and_hms_opt(1, 0, 0).unwrap()), 12.5);
    }
}
