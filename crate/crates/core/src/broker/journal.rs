//! Append-only JSON-lines journal of broker mutations.

use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use super::{BrokerError, ChangeEvent, ThingState};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum JournalEntry {
    Created { state: ThingState },
    Write { event: ChangeEvent },
}

pub(super) struct Journal(Mutex<BufWriter<File>>);

impl Journal {
    pub(super) fn create(path: &Path) -> Result<Self, BrokerError> {
        let f = OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .map_err(|e| BrokerError::Journal(format!("{}: {e}", path.display())))?;
        Ok(Journal(Mutex::new(BufWriter::new(f))))
    }

    pub(super) fn append(&self, entry: &JournalEntry) -> Result<(), BrokerError> {
        let line = serde_json::to_string(entry).map_err(|e| BrokerError::Journal(e.to_string()))?;
        let mut w = self.0.lock().unwrap();
        writeln!(w, "{line}").and_then(|_| w.flush()).map_err(|e| BrokerError::Journal(e.to_string()))
    }
}

/// Final thing states recorded in a journal, in creation order.
pub fn replay(path: &Path) -> Result<Vec<ThingState>, BrokerError> {
    let f = File::open(path).map_err(|e| BrokerError::Journal(format!("{}: {e}", path.display())))?;
    let mut states: Vec<ThingState> = Vec::new();
    for (n, line) in BufReader::new(f).lines().enumerate() {
        let line = line.map_err(|e| BrokerError::Journal(e.to_string()))?;
        if line.trim().is_empty() {
            continue;
        }
        let entry: JournalEntry =
            serde_json::from_str(&line).map_err(|e| BrokerError::Journal(format!("line {}: {e}", n + 1)))?;
        match entry {
            JournalEntry::Created { state } => states.push(state),
            JournalEntry::Write { event } => {
                let st = states
                    .iter_mut()
                    .find(|s| s.thing_id == event.thing_id)
                    .ok_or_else(|| BrokerError::Journal(format!("line {}: write before creation", n + 1)))?;
                st.features.entry(event.feature).or_default().insert(event.property, event.new);
                st.revision = event.revision;
                st.last_modified = event.timestamp;
            }
        }
    }
    Ok(states)
}

#[cfg(test)]
mod tests {
    use super::super::Broker;
    use crate::sim::SimNow;
    use std::collections::BTreeMap;

    #[test]
    fn replay_restores_latest_state() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("broker.jsonl");
        let b = Broker::new(SimNow::default()).with_journal(&path).unwrap();
        b.create_thing("FDT:gas-turbine-1", BTreeMap::from([("turbine".to_string(), BTreeMap::new())])).unwrap();
        b.put_property("FDT:gas-turbine-1", "turbine", "command", "start".into()).unwrap();
        b.put_property("FDT:gas-turbine-1", "turbine", "rpm", 1200.0.into()).unwrap();
        let restored = Broker::from_journal(&path, SimNow::default()).unwrap();
        assert_eq!(restored.thing("FDT:gas-turbine-1").unwrap(), b.thing("FDT:gas-turbine-1").unwrap());
    }
}
