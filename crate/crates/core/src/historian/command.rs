//! Operator and EMS commands routed to broker properties or Modbus outputs.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::HistorianError;
use crate::broker::{BrokerClient, BrokerError};
use crate::modbus::{ModbusClient, ModbusError};
use crate::Scalar;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CommandRequest {
    pub target: String,
    pub value: Scalar,
}

/// `thing/feature/property`, `modbus:<host>/coil/<addr>` or `modbus:<host>/holding/<addr>`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum CommandTarget {
    Broker { thing: String, feature: String, property: String },
    Coil { host: String, address: u16 },
    Holding { host: String, address: u16 },
}

impl FromStr for CommandTarget {
    type Err = HistorianError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || HistorianError::UnknownTarget(s.to_string());
        if let Some(rest) = s.strip_prefix("modbus:") {
            let parts: Vec<&str> = rest.split('/').collect();
            let [host, table, addr] = parts.as_slice() else { return Err(bad()) };
            let address: u16 = addr.parse().map_err(|_| bad())?;
            let host = host.to_string();
            return match *table {
                "coil" => Ok(CommandTarget::Coil { host, address }),
                "holding" => Ok(CommandTarget::Holding { host, address }),
                _ => Err(bad()),
            };
        }
        let parts: Vec<&str> = s.split('/').collect();
        match parts.as_slice() {
            [thing, feature, property] if thing.contains(':') && !feature.is_empty() && !property.is_empty() => {
                Ok(CommandTarget::Broker {
                    thing: thing.to_string(),
                    feature: feature.to_string(),
                    property: property.to_string(),
                })
            }
            _ => Err(bad()),
        }
    }
}

impl fmt::Display for CommandTarget {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CommandTarget::Broker { thing, feature, property } => write!(f, "{thing}/{feature}/{property}"),
            CommandTarget::Coil { host, address } => write!(f, "modbus:{host}/coil/{address}"),
            CommandTarget::Holding { host, address } => write!(f, "modbus:{host}/holding/{address}"),
        }
    }
}

fn coil_value(v: &Scalar) -> Result<bool, HistorianError> {
    match v {
        Scalar::Text(t) => match t.as_str() {
            "on" | "true" => Ok(true),
            "off" | "false" => Ok(false),
            _ => Err(HistorianError::BadValue(format!("coil value `{t}`"))),
        },
        other => other.as_bool().ok_or_else(|| HistorianError::BadValue(other.to_string())),
    }
}

fn from_modbus(target: &CommandTarget, e: ModbusError) -> HistorianError {
    match e {
        ModbusError::Blocked(r) => HistorianError::Blocked(r),
        ModbusError::Exception { code: 2, .. } => HistorianError::UnknownTarget(target.to_string()),
        other => HistorianError::CommandFailed(format!("{target}: {other}")),
    }
}

/// Links the historian uses to reach writable endpoints.
#[derive(Debug, Default)]
pub struct CommandRouter {
    broker: Option<BrokerClient>,
    modbus: BTreeMap<String, Arc<ModbusClient>>,
}

impl CommandRouter {
    pub fn new(broker: Option<BrokerClient>, modbus: BTreeMap<String, Arc<ModbusClient>>) -> Self {
        CommandRouter { broker, modbus }
    }

    /// Returns the broker revision for broker targets.
    pub async fn issue(&self, cmd: &CommandRequest) -> Result<Option<u64>, HistorianError> {
        let target: CommandTarget = cmd.target.parse()?;
        match &target {
            CommandTarget::Broker { thing, feature, property } => {
                let broker = self.broker.as_ref().ok_or_else(|| HistorianError::UnknownTarget(cmd.target.clone()))?;
                match broker.put_property(thing, feature, property, cmd.value.clone()).await {
                    Ok(rev) => Ok(Some(rev)),
                    Err(BrokerError::NotFound(_)) => Err(HistorianError::UnknownTarget(cmd.target.clone())),
                    Err(BrokerError::Blocked(r)) => Err(HistorianError::Blocked(r)),
                    Err(e) => Err(HistorianError::CommandFailed(format!("{target}: {e}"))),
                }
            }
            CommandTarget::Coil { host, address } => {
                let c = self.modbus.get(host).ok_or_else(|| HistorianError::UnknownTarget(cmd.target.clone()))?;
                let on = coil_value(&cmd.value)?;
                c.write_single_coil(*address, on).await.map_err(|e| from_modbus(&target, e))?;
                Ok(None)
            }
            CommandTarget::Holding { host, address } => {
                let c = self.modbus.get(host).ok_or_else(|| HistorianError::UnknownTarget(cmd.target.clone()))?;
                let v = cmd
                    .value
                    .as_f64()
                    .filter(|v| v.fract() == 0.0 && (0.0..=65535.0).contains(v))
                    .ok_or_else(|| HistorianError::BadValue(cmd.value.to_string()))?;
                c.write_single_register(*address, v as u16).await.map_err(|e| from_modbus(&target, e))?;
                Ok(None)
            }
        }
    }
}
