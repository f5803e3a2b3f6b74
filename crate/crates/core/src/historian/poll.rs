//! Per-host pollers: one task and one connection per source host.

use std::sync::Arc;

use super::{DatapointSpec, Historian, Sample, Source};
use crate::broker::BrokerClient;
use crate::modbus::{ModbusClient, Table};
use crate::sim::SimTime;

#[derive(Debug, Clone)]
pub enum PollLink {
    Modbus(Arc<ModbusClient>),
    Broker(BrokerClient),
}

#[derive(Debug)]
pub struct HostPoller {
    host: String,
    points: Vec<DatapointSpec>,
    link: PollLink,
}

impl HostPoller {
    pub fn new(host: &str, points: Vec<DatapointSpec>, link: PollLink) -> Self {
        HostPoller { host: host.to_string(), points, link }
    }

    pub fn host(&self) -> &str {
        &self.host
    }

    pub fn points(&self) -> &[DatapointSpec] {
        &self.points
    }

    async fn read(&self, source: &Source) -> Result<f64, String> {
        match (source, &self.link) {
            (Source::Modbus { table, address, .. }, PollLink::Modbus(c)) => match table {
                Table::InputRegisters => c.read_input_registers(*address, 1).await.map(|v| v[0] as f64),
                Table::HoldingRegisters => c.read_holding_registers(*address, 1).await.map(|v| v[0] as f64),
                Table::Coils => c.read_coils(*address, 1).await.map(|v| if v[0] { 1.0 } else { 0.0 }),
                Table::DiscreteInputs => return Err("discrete inputs are not polled".into()),
            }
            .map_err(|e| e.to_string()),
            (Source::Broker { thing, feature, property }, PollLink::Broker(c)) => {
                let v = c.get_property(thing, feature, property).await.map_err(|e| e.to_string())?;
                v.as_f64().ok_or_else(|| format!("non-numeric value {v}"))
            }
            _ => Err(format!("source {source:?} does not belong to host {}", self.host)),
        }
    }

    /// Polls every point due at `now`; failures become gaps.
    pub async fn poll(&self, store: &Historian, now: SimTime) -> usize {
        let mut sampled = 0;
        for p in &self.points {
            let period = SimTime::from_secs_f64(p.poll_period).as_millis().max(1);
            if !now.as_millis().is_multiple_of(period) {
                continue;
            }
            match self.read(&p.source).await {
                Ok(value) => match store.append(&p.xid, Sample { timestamp: now, value }) {
                    Ok(()) => sampled += 1,
                    Err(e) => store.record_gap(&p.xid, now, &e.to_string()),
                },
                Err(reason) => store.record_gap(&p.xid, now, &reason),
            }
        }
        sampled
    }
}
