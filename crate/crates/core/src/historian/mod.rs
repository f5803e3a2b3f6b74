//! Mini SCADA historian: named datapoints polled from Modbus devices and the
//! broker, the datapoint API consumed by the EMS, and command routing back to the field.

mod client;
mod command;
mod http;
mod poll;

use std::collections::{BTreeMap, VecDeque};
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex, RwLock};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::modbus::Table;
use crate::sim::SimTime;

pub use client::ScadaClient;
pub use command::{CommandRequest, CommandRouter, CommandTarget};
pub use http::router;
pub use poll::{HostPoller, PollLink};

/// Samples kept in memory per datapoint; the CSV stream keeps the full series.
pub const RING_CAPACITY: usize = 8192;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum HistorianError {
    #[error("datapoint `{0}` not found")]
    NotFound(String),
    #[error("datapoint `{0}` has no data")]
    NoData(String),
    #[error("datapoint `{0}` already registered")]
    Duplicate(String),
    #[error("sample at {at} is not after {last} for `{xid}`")]
    OutOfOrder { xid: String, at: SimTime, last: SimTime },
    #[error("unknown command target `{0}`")]
    UnknownTarget(String),
    #[error("bad command value: {0}")]
    BadValue(String),
    #[error("command failed: {0}")]
    CommandFailed(String),
    #[error("blocked by {0}")]
    Blocked(String),
    #[error("transport: {0}")]
    Transport(String),
    #[error("i/o: {0}")]
    Io(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Source {
    Modbus {
        host: String,
        unit: u8,
        table: Table,
        address: u16,
    },
    Broker {
        thing: String,
        feature: String,
        property: String,
    },
    /// Sum of other datapoints sampled at the same instant.
    Derived {
        sum_of: Vec<String>,
    },
}

impl Source {
    /// Poller grouping key; derived points have none.
    pub fn host(&self) -> Option<&str> {
        match self {
            Source::Modbus { host, .. } => Some(host),
            Source::Broker { .. } => Some("broker"),
            Source::Derived { .. } => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatapointSpec {
    pub xid: String,
    pub name: String,
    pub source: Source,
    /// Simulated seconds.
    pub poll_period: f64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatapointInfo {
    pub name: String,
    pub xid: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub timestamp: SimTime,
    pub value: f64,
}

#[derive(Debug)]
struct Series {
    ring: VecDeque<Sample>,
    last: Option<Sample>,
    count: u64,
    csv: Option<BufWriter<File>>,
}

#[derive(Debug)]
struct Datapoint {
    spec: DatapointSpec,
    series: Mutex<Series>,
    gaps: AtomicU64,
}

#[derive(Debug, Default)]
pub struct Historian {
    points: RwLock<Vec<Arc<Datapoint>>>,
    index: RwLock<BTreeMap<String, usize>>,
    series_dir: Option<PathBuf>,
    errors: AtomicU64,
    served: AtomicU64,
}

impl Historian {
    pub fn new() -> Self {
        Self::default()
    }

    /// Streams every series to `dir/<xid>.csv` as `timestamp,value`.
    pub fn with_series_dir(dir: &Path) -> Result<Self, HistorianError> {
        std::fs::create_dir_all(dir).map_err(|e| HistorianError::Io(format!("{}: {e}", dir.display())))?;
        Ok(Historian { series_dir: Some(dir.to_path_buf()), ..Default::default() })
    }

    pub fn register(&self, spec: DatapointSpec) -> Result<(), HistorianError> {
        let mut index = self.index.write().unwrap();
        if index.contains_key(&spec.xid) {
            return Err(HistorianError::Duplicate(spec.xid));
        }
        let csv = match &self.series_dir {
            Some(dir) => {
                let path = dir.join(format!("{}.csv", spec.xid));
                let mut w = BufWriter::new(
                    File::create(&path).map_err(|e| HistorianError::Io(format!("{}: {e}", path.display())))?,
                );
                writeln!(w, "timestamp,value").map_err(|e| HistorianError::Io(e.to_string()))?;
                Some(w)
            }
            None => None,
        };
        let mut points = self.points.write().unwrap();
        index.insert(spec.xid.clone(), points.len());
        points.push(Arc::new(Datapoint {
            spec,
            series: Mutex::new(Series { ring: VecDeque::new(), last: None, count: 0, csv }),
            gaps: AtomicU64::new(0),
        }));
        Ok(())
    }

    fn point(&self, xid: &str) -> Result<Arc<Datapoint>, HistorianError> {
        let i = *self.index.read().unwrap().get(xid).ok_or_else(|| HistorianError::NotFound(xid.to_string()))?;
        Ok(self.points.read().unwrap()[i].clone())
    }

    pub fn specs(&self) -> Vec<DatapointSpec> {
        self.points.read().unwrap().iter().map(|p| p.spec.clone()).collect()
    }

    /// Every datapoint once, in registration order.
    pub fn get_all(&self) -> Vec<DatapointInfo> {
        self.points
            .read()
            .unwrap()
            .iter()
            .map(|p| DatapointInfo { name: p.spec.name.clone(), xid: p.spec.xid.clone() })
            .collect()
    }

    pub fn get_latest(&self, xid: &str) -> Result<Sample, HistorianError> {
        let p = self.point(xid)?;
        let s = p.series.lock().unwrap();
        s.last.ok_or_else(|| HistorianError::NoData(xid.to_string()))
    }

    /// Samples still held in memory, oldest first.
    pub fn recent(&self, xid: &str) -> Result<Vec<Sample>, HistorianError> {
        Ok(self.point(xid)?.series.lock().unwrap().ring.iter().copied().collect())
    }

    pub fn sample_count(&self, xid: &str) -> Result<u64, HistorianError> {
        Ok(self.point(xid)?.series.lock().unwrap().count)
    }

    pub fn gap_count(&self, xid: &str) -> Result<u64, HistorianError> {
        Ok(self.point(xid)?.gaps.load(Ordering::Relaxed))
    }

    /// Appends a sample; timestamps must strictly increase per datapoint.
    pub fn append(&self, xid: &str, sample: Sample) -> Result<(), HistorianError> {
        let p = self.point(xid)?;
        let mut s = p.series.lock().unwrap();
        if let Some(last) = s.last {
            if sample.timestamp <= last.timestamp {
                return Err(HistorianError::OutOfOrder {
                    xid: xid.to_string(),
                    at: sample.timestamp,
                    last: last.timestamp,
                });
            }
        }
        if s.ring.len() == RING_CAPACITY {
            s.ring.pop_front();
        }
        s.ring.push_back(sample);
        s.last = Some(sample);
        s.count += 1;
        if let Some(w) = &mut s.csv {
            writeln!(w, "{},{}", sample.timestamp, sample.value).map_err(|e| HistorianError::Io(e.to_string()))?;
        }
        Ok(())
    }

    /// A poll that produced no sample.
    pub fn record_gap(&self, xid: &str, at: SimTime, reason: &str) {
        self.errors.fetch_add(1, Ordering::Relaxed);
        if let Ok(p) = self.point(xid) {
            p.gaps.fetch_add(1, Ordering::Relaxed);
        }
        log::warn!("t={at}: no sample for {xid}: {reason}");
    }

    pub fn error_count(&self) -> u64 {
        self.errors.load(Ordering::Relaxed)
    }

    /// Samples derived points from their inputs' samples taken exactly at `now`.
    pub fn sample_derived(&self, now: SimTime) {
        let derived: Vec<(String, Vec<String>)> = self
            .specs()
            .into_iter()
            .filter_map(|s| match s.source {
                Source::Derived { sum_of } => Some((s.xid, sum_of)),
                _ => None,
            })
            .collect();
        for (xid, inputs) in derived {
            let mut total = 0.0;
            let mut missing = None;
            for i in &inputs {
                match self.get_latest(i) {
                    Ok(s) if s.timestamp == now => total += s.value,
                    _ => {
                        missing = Some(i.clone());
                        break;
                    }
                }
            }
            match missing {
                None => {
                    if let Err(e) = self.append(&xid, Sample { timestamp: now, value: total }) {
                        self.record_gap(&xid, now, &e.to_string());
                    }
                }
                Some(i) => self.record_gap(&xid, now, &format!("input {i} has no sample at this instant")),
            }
        }
    }

    pub fn flush(&self) -> Result<(), HistorianError> {
        for p in self.points.read().unwrap().iter() {
            if let Some(w) = &mut p.series.lock().unwrap().csv {
                w.flush().map_err(|e| HistorianError::Io(e.to_string()))?;
            }
        }
        Ok(())
    }

    pub(crate) fn note_served(&self) {
        self.served.fetch_add(1, Ordering::Relaxed);
    }

    /// API requests handled (HTTP or in-process).
    pub fn served(&self) -> u64 {
        self.served.load(Ordering::Relaxed)
    }
}

/// The historian's store plus the links it uses to command the field.
#[derive(Debug)]
pub struct HistorianService {
    pub store: Arc<Historian>,
    pub commands: CommandRouter,
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(xid: &str) -> DatapointSpec {
        DatapointSpec {
            xid: xid.into(),
            name: xid.to_lowercase(),
            source: Source::Broker { thing: "FDT:x".into(), feature: "f".into(), property: "p".into() },
            poll_period: 10.0,
        }
    }

    #[test]
    fn latest_and_errors() {
        let h = Historian::new();
        assert!(h.get_all().is_empty());
        h.register(spec("DP_A")).unwrap();
        h.register(spec("DP_B")).unwrap();
        h.register(spec("DP_C")).unwrap();
        assert_eq!(h.get_all().len(), 3);
        assert_eq!(h.register(spec("DP_A")), Err(HistorianError::Duplicate("DP_A".into())));
        assert_eq!(h.get_latest("DP_A"), Err(HistorianError::NoData("DP_A".into())));
        assert_eq!(h.get_latest("DP_Z"), Err(HistorianError::NotFound("DP_Z".into())));
        h.append("DP_A", Sample { timestamp: SimTime::from_secs(1), value: 10.0 }).unwrap();
        h.append("DP_A", Sample { timestamp: SimTime::from_secs(2), value: 20.0 }).unwrap();
        assert_eq!(h.get_latest("DP_A").unwrap(), Sample { timestamp: SimTime::from_secs(2), value: 20.0 });
        assert!(h.append("DP_A", Sample { timestamp: SimTime::from_secs(2), value: 1.0 }).is_err());
    }

    #[test]
    fn derived_sum_requires_all_inputs() {
        let h = Historian::new();
        h.register(spec("DP_A")).unwrap();
        h.register(spec("DP_B")).unwrap();
        h.register(DatapointSpec {
            xid: "DP_SUM".into(),
            name: "sum".into(),
            source: Source::Derived { sum_of: vec!["DP_A".into(), "DP_B".into()] },
            poll_period: 10.0,
        })
        .unwrap();
        let t = SimTime::from_secs(10);
        h.append("DP_A", Sample { timestamp: t, value: 1500.0 }).unwrap();
        h.sample_derived(t);
        assert_eq!(h.gap_count("DP_SUM").unwrap(), 1);
        h.append("DP_B", Sample { timestamp: t, value: 2000.0 }).unwrap();
        let t2 = SimTime::from_secs(20);
        h.append("DP_A", Sample { timestamp: t2, value: 1.0 }).unwrap();
        h.append("DP_B", Sample { timestamp: t2, value: 2.0 }).unwrap();
        h.sample_derived(t2);
        assert_eq!(h.get_latest("DP_SUM").unwrap().value, 3.0);
    }

    #[test]
    fn streams_series_csv() {
        let dir = tempfile::tempdir().unwrap();
        let h = Historian::with_series_dir(dir.path()).unwrap();
        h.register(spec("DP_A")).unwrap();
        h.append("DP_A", Sample { timestamp: SimTime::from_millis(100), value: 2.5 }).unwrap();
        h.flush().unwrap();
        let text = std::fs::read_to_string(dir.path().join("DP_A.csv")).unwrap();
        assert_eq!(text, "timestamp,value\n0.1,2.5\n");
    }
}
