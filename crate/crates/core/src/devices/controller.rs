//! Field controllers: publish plant telemetry to the broker and apply commands
//! written to their command property.

use std::fmt;
use std::str::FromStr;
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::plant::Plant;
use crate::broker::{BrokerClient, BrokerError, ChangeEvent, Features, Subscription, SubscriptionError};
use crate::ems::{StorageMode, TurbineCommand};
use crate::sim::{SimError, SimTime};
use crate::Scalar;

#[derive(Debug, Error)]
pub enum PublishError {
    #[error(transparent)]
    Broker(#[from] BrokerError),
    #[error("command rejected: {0}")]
    Rejected(String),
    #[error(transparent)]
    Subscription(#[from] SubscriptionError),
    #[error(transparent)]
    Model(#[from] SimError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ControllerKind {
    Sun,
    Solar,
    Storage,
    Turbine,
}

impl ControllerKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ControllerKind::Sun => "sun",
            ControllerKind::Solar => "solar",
            ControllerKind::Storage => "storage",
            ControllerKind::Turbine => "turbine",
        }
    }

    /// Property whose writes are commands, if any.
    pub fn command_property(self) -> Option<&'static str> {
        match self {
            ControllerKind::Storage => Some("mode"),
            ControllerKind::Turbine => Some("command"),
            _ => None,
        }
    }
}

impl FromStr for ControllerKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "sun" => Ok(ControllerKind::Sun),
            "solar" => Ok(ControllerKind::Solar),
            "storage" => Ok(ControllerKind::Storage),
            "turbine" => Ok(ControllerKind::Turbine),
            other => Err(format!("unknown controller kind `{other}`")),
        }
    }
}

impl fmt::Display for ControllerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

type Reading = (String, String, String, Scalar);

fn telemetry(kind: ControllerKind, plant: &Plant) -> Vec<Reading> {
    let cfg = plant.config();
    let r = |thing: &str, feature: &str, prop: &str, v: Scalar| {
        (thing.to_string(), feature.to_string(), prop.to_string(), v)
    };
    match kind {
        ControllerKind::Sun => vec![r(&cfg.sun.thing, &cfg.sun.feature, &cfg.sun.property, plant.irradiance().into())],
        ControllerKind::Solar => {
            vec![r(&cfg.solar.thing, &cfg.solar.feature, &cfg.solar.property, plant.solar_power_w().into())]
        }
        ControllerKind::Storage => {
            let s = &cfg.storage;
            vec![
                r(&s.thing, &s.feature, &s.level_output, plant.storage_level().into()),
                r(&s.thing, &s.feature, "active-mode", plant.storage_mode().as_str().into()),
            ]
        }
        ControllerKind::Turbine => {
            let t = &cfg.turbine;
            vec![
                r(&t.thing, &t.feature, &t.rpm_output, plant.turbine_rpm().into()),
                r(&t.thing, &t.feature, &t.temperature_output, plant.turbine_temperature().into()),
                r(&t.thing, &t.feature, "power", (plant.turbine_power_kw() * 1000.0).into()),
                r(&t.thing, &t.feature, "running", plant.turbine_running().into()),
            ]
        }
    }
}

/// `(thing, feature)` a controller kind reports under.
fn home(kind: ControllerKind, plant: &Plant) -> (String, String) {
    let cfg = plant.config();
    match kind {
        ControllerKind::Sun => (cfg.sun.thing.clone(), cfg.sun.feature.clone()),
        ControllerKind::Solar => (cfg.solar.thing.clone(), cfg.solar.feature.clone()),
        ControllerKind::Storage => (cfg.storage.thing.clone(), cfg.storage.feature.clone()),
        ControllerKind::Turbine => (cfg.turbine.thing.clone(), cfg.turbine.feature.clone()),
    }
}

/// Applies one command value to the plant; unknown values leave it untouched.
pub fn apply_command(kind: ControllerKind, plant: &mut Plant, value: &Scalar) -> Result<String, PublishError> {
    let text = value.as_str().ok_or_else(|| PublishError::Rejected(format!("non-text command {value}")))?;
    match kind {
        ControllerKind::Storage => {
            let mode =
                StorageMode::from_str(text).map_err(|_| PublishError::Rejected(format!("storage mode `{text}`")))?;
            let applied = plant.set_storage_mode(mode)?;
            Ok(applied.as_str().to_string())
        }
        ControllerKind::Turbine => {
            let on = match TurbineCommand::from_str(text) {
                Ok(TurbineCommand::Start) => true,
                Ok(TurbineCommand::Stop) => false,
                _ => return Err(PublishError::Rejected(format!("turbine command `{text}`"))),
            };
            plant.set_turbine(on)?;
            Ok(text.to_string())
        }
        k => Err(PublishError::Rejected(format!("{k} controller takes no commands"))),
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct ControllerStats {
    pub publishes: u64,
    pub publish_errors: u64,
    pub applied: u64,
    pub rejected: u64,
}

/// One field controller attached to the shared plant.
#[derive(Debug)]
pub struct FieldController {
    pub node: String,
    pub kind: ControllerKind,
    pub publish_period: SimTime,
    plant: Arc<Mutex<Plant>>,
    client: BrokerClient,
    commands: Option<Subscription>,
    stats: ControllerStats,
}

impl FieldController {
    pub fn new(node: &str, kind: ControllerKind, plant: Arc<Mutex<Plant>>, client: BrokerClient) -> Self {
        FieldController {
            node: node.to_string(),
            kind,
            publish_period: SimTime::from_secs(10),
            plant,
            client,
            commands: None,
            stats: ControllerStats::default(),
        }
    }

    pub fn with_period(mut self, period: SimTime) -> Self {
        self.publish_period = period;
        self
    }

    /// Filter of the command property, e.g. `FDT:energy-store-1/battery-pack/mode`.
    pub fn command_filter(&self) -> Option<String> {
        let prop = self.kind.command_property()?;
        let (thing, feature) = home(self.kind, &self.plant.lock().unwrap());
        Some(format!("{thing}/{feature}/{prop}"))
    }

    pub fn with_commands(mut self, sub: Subscription) -> Self {
        self.commands = Some(sub);
        self
    }

    /// Thing and features this controller owns, seeded with current telemetry.
    pub fn initial_state(&self) -> (String, Features) {
        let plant = self.plant.lock().unwrap();
        let (thing, home_feature) = home(self.kind, &plant);
        let mut features = Features::new();
        for (_, feature, prop, v) in telemetry(self.kind, &plant) {
            features.entry(feature).or_default().insert(prop, v);
        }
        let command = match self.kind {
            ControllerKind::Storage => Some(plant.storage_mode().as_str()),
            ControllerKind::Turbine => Some(if plant.turbine_running() { "start" } else { "stop" }),
            _ => None,
        };
        if let (Some(prop), Some(v)) = (self.kind.command_property(), command) {
            features.entry(home_feature).or_default().insert(prop.to_string(), v.into());
        }
        (thing, features)
    }

    pub fn stats(&self) -> ControllerStats {
        self.stats
    }

    /// PUTs the current telemetry; returns the last broker revision.
    pub async fn publish(&mut self, now: SimTime) -> Result<u64, PublishError> {
        let readings = telemetry(self.kind, &self.plant.lock().unwrap());
        let mut rev = 0;
        for (thing, feature, prop, v) in readings {
            match self.client.put_property(&thing, &feature, &prop, v).await {
                Ok(r) => rev = r,
                Err(e) => {
                    self.stats.publish_errors += 1;
                    log::warn!("t={now}: {} publish {thing}/{feature}/{prop} failed: {e}", self.node);
                    return Err(e.into());
                }
            }
        }
        self.stats.publishes += 1;
        Ok(rev)
    }

    /// Applies one command event.
    pub fn apply(&mut self, ev: &ChangeEvent) -> Result<String, PublishError> {
        let res = apply_command(self.kind, &mut self.plant.lock().unwrap(), &ev.new);
        match &res {
            Ok(v) => {
                self.stats.applied += 1;
                log::info!("t={}: {} applied {}/{} = {v}", ev.timestamp, self.node, ev.feature, ev.property);
            }
            Err(e) => {
                self.stats.rejected += 1;
                log::warn!("t={}: {} {e}", ev.timestamp, self.node);
            }
        }
        res
    }

    /// Drains buffered command events; returns how many were applied.
    pub fn apply_pending(&mut self) -> Result<usize, PublishError> {
        let mut n = 0;
        loop {
            let ev = match self.commands.as_mut() {
                None => return Ok(n),
                Some(sub) => match sub.try_recv()? {
                    Some(ev) => ev,
                    None => return Ok(n),
                },
            };
            if self.apply(&ev).is_ok() {
                n += 1;
            }
        }
    }
}
