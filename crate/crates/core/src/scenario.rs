//! Scenario files: parsing with source locations, cross-validation and plant construction.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use chrono::NaiveDateTime;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::devices::{ControllerKind, Plant, PlantConfig, StorageUnit, TurbineUnit};
use crate::ems::{EmsBindings, EmsConfig};
use crate::historian::{CommandTarget, DatapointSpec, Source};
use crate::modbus::Table;
use crate::netfabric::{FabricError, Policy, Segment};
use crate::occupancy::{OccupancyError, Schedule, TurnoutModel};
use crate::sim::{
    load_radiance_csv, CallbackArg, CallbackRegistry, Component, InterpolationMode, InterpolationTable,
    LinearStateSpace, Matrix, PhysicalLayer, SignalPath, SimError, SimulatedThing, ThingModel,
};
use crate::Scalar;

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("{path}:{line}:{column}: {message}")]
    Parse { path: String, line: usize, column: usize, message: String },
    #[error("{path}: {message}")]
    Io { path: String, message: String },
    #[error("invalid scenario: {0}")]
    Invalid(String),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Occupancy(#[from] OccupancyError),
    #[error(transparent)]
    Fabric(#[from] FabricError),
}

fn invalid(msg: impl Into<String>) -> ScenarioError {
    ScenarioError::Invalid(msg.into())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct SourceRef {
    pub thing_id: String,
    pub feature: String,
    pub pointer: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct ComponentSpec {
    pub name: String,
    #[serde(default)]
    pub sources: Vec<SourceRef>,
    pub callback_name: String,
    /// Appended after the source values.
    #[serde(default)]
    pub args: Vec<CallbackArg>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub struct SystemMatrices {
    pub a: Matrix,
    pub b: Matrix,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "camelCase", deny_unknown_fields)]
pub enum FeatureSpec {
    /// Table lookup over either an inline `points` list or a `timestamp,watt_per_msq` dataset.
    #[serde(rename_all = "snake_case")]
    Interpolation {
        property: String,
        #[serde(default)]
        mode: InterpolationMode,
        #[serde(default)]
        points: Option<Vec<(f64, f64)>>,
        #[serde(default)]
        dataset: Option<String>,
        /// Table x at simulated time 0; a dataset defaults to the scenario start.
        #[serde(default)]
        origin: Option<f64>,
    },
    Scriptable {
        components: Vec<ComponentSpec>,
    },
    #[serde(rename_all = "snake_case")]
    SystemSimulator {
        system: SystemMatrices,
        x0: Vec<f64>,
        inputs: Vec<String>,
        #[serde(default)]
        u0: Option<Vec<f64>>,
        outputs: Vec<String>,
        /// Multiplies A and B; 1 when the matrices are per second.
        #[serde(default = "one")]
        time_unit_scale: f64,
        #[serde(default = "one")]
        dt: f64,
    },
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ThingSpec {
    pub name: String,
    pub features: BTreeMap<String, FeatureSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StorageSpec {
    pub thing: String,
    pub feature: String,
    #[serde(default = "level")]
    pub level_output: String,
    pub rated_kw: f64,
}

fn level() -> String {
    "level".into()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TurbineSpec {
    pub thing: String,
    pub feature: String,
    pub rpm_output: String,
    pub temperature_output: String,
    pub rated_kw: f64,
    /// Defaults to the steady-state rpm with both valves open.
    #[serde(default)]
    pub nominal_rpm: Option<f64>,
    pub ambient_c: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlantSpec {
    /// `thing/feature/property` of the irradiance signal.
    pub sun: String,
    /// `thing/feature/property` of the panel output, W.
    pub solar: String,
    pub storage: StorageSpec,
    pub turbine: TurbineSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CabinetSpec {
    pub building: String,
    pub node: String,
    pub port: u16,
    #[serde(default = "unit_one")]
    pub unit: u8,
    pub base_load_w: f64,
    pub max_consumption_w: f64,
}

fn unit_one() -> u8 {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ControllerSpec {
    pub node: String,
    pub kind: ControllerKind,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DevicesSpec {
    pub cabinets: Vec<CabinetSpec>,
    pub controllers: Vec<ControllerSpec>,
    /// Simulated seconds.
    #[serde(default = "plc_scan")]
    pub plc_scan_period: f64,
    /// Simulated seconds.
    #[serde(default = "publish")]
    pub publish_period: f64,
}

fn plc_scan() -> f64 {
    0.1
}

fn publish() -> f64 {
    10.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NodeSpec {
    pub id: String,
    pub segment: Segment,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkSpec {
    /// Policy file; the campus default when absent.
    #[serde(default)]
    pub policy: Option<String>,
    pub nodes: Vec<NodeSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ServiceSpec {
    pub node: String,
    pub port: u16,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HistorianSpec {
    pub node: String,
    pub port: u16,
    pub datapoints: Vec<DatapointSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EmsSpec {
    pub node: String,
    #[serde(default)]
    pub config: EmsConfig,
    #[serde(default)]
    pub bindings: EmsBindings,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TurnoutSpec {
    /// Node writing the persons count to the broker.
    pub publisher: String,
    /// `thing/feature/property` receiving the persons count.
    pub target: String,
    /// Simulated seconds between population syncs.
    #[serde(default = "sync_period")]
    pub period: f64,
    #[serde(default = "cluster")]
    pub cluster_size: u32,
    /// Per-person mean draw, W.
    #[serde(default = "mu")]
    pub mu_w: f64,
    #[serde(default = "sigma")]
    pub sigma_w: f64,
    /// `day_of_week,hour,persons` file; the campus default when absent.
    #[serde(default)]
    pub schedule: Option<String>,
}

fn sync_period() -> f64 {
    60.0
}

fn cluster() -> u32 {
    10
}

fn mu() -> f64 {
    25.0
}

fn sigma() -> f64 {
    5.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClockSpec {
    #[serde(default = "scale")]
    pub scale: f64,
    /// Simulated seconds.
    #[serde(default = "tick")]
    pub tick: f64,
}

impl Default for ClockSpec {
    fn default() -> Self {
        ClockSpec { scale: scale(), tick: tick() }
    }
}

fn scale() -> f64 {
    1000.0
}

fn tick() -> f64 {
    0.1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Injection {
    /// Simulated seconds.
    pub at: f64,
    pub target: String,
    pub value: Scalar,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub name: String,
    /// UTC calendar time at simulated time 0.
    pub start: NaiveDateTime,
    /// Simulated seconds.
    pub duration: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub clock: ClockSpec,
    pub things: Vec<ThingSpec>,
    pub plant: PlantSpec,
    pub devices: DevicesSpec,
    pub network: NetworkSpec,
    pub broker: ServiceSpec,
    pub historian: HistorianSpec,
    pub ems: EmsSpec,
    pub turnout: TurnoutSpec,
    /// Node scheduled injections are issued from.
    #[serde(default = "operator")]
    pub operator: String,
    #[serde(default)]
    pub injections: Vec<Injection>,
    /// Directory relative paths resolve against.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

fn operator() -> String {
    "operator-ws".into()
}

fn split_path(raw: &str) -> Result<SignalPath, ScenarioError> {
    let parts: Vec<&str> = raw.split('/').collect();
    match parts.as_slice() {
        [t, f, p] if !t.is_empty() && !f.is_empty() && !p.is_empty() => Ok(SignalPath::new(t, f, p)),
        _ => Err(invalid(format!("`{raw}` is not thing/feature/property"))),
    }
}

impl Scenario {
    pub fn parse(text: &str, origin: &str) -> Result<Self, ScenarioError> {
        serde_json::from_str(text).map_err(|e| ScenarioError::Parse {
            path: origin.to_string(),
            line: e.line(),
            column: e.column(),
            message: e.to_string(),
        })
    }

    /// Parses and validates; relative paths resolve against the file's directory.
    pub fn load(path: &Path) -> Result<Self, ScenarioError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ScenarioError::Io { path: path.display().to_string(), message: e.to_string() })?;
        let mut sc = Self::parse(&text, &path.display().to_string())?;
        sc.base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        sc.validate()?;
        Ok(sc)
    }

    pub fn resolve(&self, rel: &str) -> PathBuf {
        let p = Path::new(rel);
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    pub fn start_unix(&self) -> f64 {
        self.start.and_utc().timestamp() as f64
    }

    pub fn node_segments(&self) -> BTreeMap<&str, Segment> {
        self.network.nodes.iter().map(|n| (n.id.as_str(), n.segment)).collect()
    }

    /// Cross-checks every reference and builds the plant once to check the models.
    pub fn validate(&self) -> Result<(), ScenarioError> {
        if !(self.duration >= 0.0 && self.duration.is_finite()) {
            return Err(invalid(format!("duration must be non-negative, got {}", self.duration)));
        }
        if !(self.clock.scale >= 1.0) || !(self.clock.tick > 0.0) {
            return Err(invalid("clock scale must be >= 1 and tick > 0"));
        }
        let mut nodes = BTreeSet::new();
        for n in &self.network.nodes {
            if !nodes.insert(n.id.as_str()) {
                return Err(invalid(format!("node `{}` declared twice", n.id)));
            }
        }
        let need_node = |id: &str, role: &str| -> Result<(), ScenarioError> {
            if nodes.contains(id) {
                Ok(())
            } else {
                Err(invalid(format!("{role} references undeclared node `{id}`")))
            }
        };
        need_node(&self.broker.node, "broker")?;
        need_node(&self.historian.node, "historian")?;
        need_node(&self.ems.node, "ems")?;
        need_node(&self.turnout.publisher, "turnout publisher")?;
        need_node(&self.operator, "operator")?;
        let mut ports = BTreeSet::new();
        for p in std::iter::once(self.broker.port)
            .chain(std::iter::once(self.historian.port))
            .chain(self.devices.cabinets.iter().map(|c| c.port))
        {
            if p != 0 && !ports.insert(p) {
                return Err(invalid(format!("port {p} used twice")));
            }
        }
        let mut buildings = BTreeSet::new();
        for c in &self.devices.cabinets {
            need_node(&c.node, &format!("cabinet {}", c.building))?;
            if !buildings.insert(c.building.as_str()) {
                return Err(invalid(format!("building `{}` has two cabinets", c.building)));
            }
            if !(c.base_load_w >= 0.0) || !(c.max_consumption_w >= 0.0) {
                return Err(invalid(format!("cabinet {}: loads must be non-negative", c.building)));
            }
        }
        if buildings.is_empty() {
            return Err(invalid("no cabinets declared"));
        }
        let mut kinds = BTreeSet::new();
        for c in &self.devices.controllers {
            need_node(&c.node, &format!("{} controller", c.kind))?;
            if !kinds.insert(c.kind) {
                return Err(invalid(format!("two {} controllers", c.kind)));
            }
        }
        if !(self.devices.plc_scan_period > 0.0) || !(self.devices.publish_period > 0.0) {
            return Err(invalid("device periods must be positive"));
        }

        let plant = self.build_plant()?;
        let broker_props = self.broker_properties(&plant);
        let hosts: BTreeMap<&str, &CabinetSpec> = self.devices.cabinets.iter().map(|c| (c.node.as_str(), c)).collect();
        let mut xids = BTreeSet::new();
        for dp in &self.historian.datapoints {
            if !xids.insert(dp.xid.as_str()) {
                return Err(invalid(format!("datapoint `{}` declared twice", dp.xid)));
            }
            if !(dp.poll_period > 0.0) || (dp.poll_period * 1000.0).fract() != 0.0 {
                return Err(invalid(format!("datapoint {}: poll period must be a positive whole ms", dp.xid)));
            }
            match &dp.source {
                Source::Modbus { host, table, .. } => {
                    if !hosts.contains_key(host.as_str()) {
                        return Err(invalid(format!("datapoint {} references unknown modbus host `{host}`", dp.xid)));
                    }
                    if matches!(table, Table::DiscreteInputs) {
                        return Err(invalid(format!("datapoint {}: discrete inputs are not mapped", dp.xid)));
                    }
                }
                Source::Broker { thing, feature, property } => {
                    if !broker_props.contains(&SignalPath::new(thing, feature, property)) {
                        return Err(invalid(format!(
                            "datapoint {} references unknown broker property {thing}/{feature}/{property}",
                            dp.xid
                        )));
                    }
                }
                Source::Derived { sum_of } => {
                    if let Some(missing) = sum_of.iter().find(|x| !xids.contains(x.as_str())) {
                        return Err(invalid(format!(
                            "derived datapoint {} references `{missing}`, which must be declared before it",
                            dp.xid
                        )));
                    }
                }
            }
        }
        let b = &self.ems.bindings;
        for x in [&b.solar_xid, &b.consumption_xid, &b.storage_level_xid, &b.turbine_running_xid] {
            if !xids.contains(x.as_str()) {
                return Err(invalid(format!("ems binding references unknown datapoint `{x}`")));
            }
        }
        self.ems.config.validate().map_err(|e| invalid(e.to_string()))?;
        for t in [&b.storage_mode_target, &b.turbine_command_target] {
            self.check_target(t, &broker_props)?;
        }
        self.turnout_model()?;
        split_path(&self.turnout.target)?;
        if !(self.turnout.period > 0.0) {
            return Err(invalid("turnout period must be positive"));
        }
        for inj in &self.injections {
            if !(inj.at >= 0.0) {
                return Err(invalid(format!("injection at {} is negative", inj.at)));
            }
            self.check_target(&inj.target, &broker_props)?;
        }
        self.policy()?;
        Ok(())
    }

    fn check_target(&self, raw: &str, props: &BTreeSet<SignalPath>) -> Result<(), ScenarioError> {
        match raw.parse::<CommandTarget>().map_err(|e| invalid(format!("target `{raw}`: {e}")))? {
            CommandTarget::Broker { thing, feature, property } => {
                if !props.contains(&SignalPath::new(&thing, &feature, &property)) {
                    return Err(invalid(format!("target `{raw}` references an unknown property")));
                }
            }
            CommandTarget::Coil { host, .. } | CommandTarget::Holding { host, .. } => {
                if !self.devices.cabinets.iter().any(|c| c.node == host) {
                    return Err(invalid(format!("target `{raw}` references unknown host `{host}`")));
                }
            }
        }
        Ok(())
    }

    /// Every property the broker will hold: controller telemetry and commands, plus the turnout target.
    pub fn broker_properties(&self, plant: &Plant) -> BTreeSet<SignalPath> {
        let cfg = plant.config();
        let mut out = BTreeSet::new();
        for c in &self.devices.controllers {
            match c.kind {
                ControllerKind::Sun => {
                    out.insert(cfg.sun.clone());
                }
                ControllerKind::Solar => {
                    out.insert(cfg.solar.clone());
                }
                ControllerKind::Storage => {
                    let s = &cfg.storage;
                    for p in [s.level_output.as_str(), "active-mode", "mode"] {
                        out.insert(SignalPath::new(&s.thing, &s.feature, p));
                    }
                }
                ControllerKind::Turbine => {
                    let t = &cfg.turbine;
                    for p in [t.rpm_output.as_str(), t.temperature_output.as_str(), "power", "running", "command"] {
                        out.insert(SignalPath::new(&t.thing, &t.feature, p));
                    }
                }
            }
        }
        if let Ok(p) = split_path(&self.turnout.target) {
            out.insert(p);
        }
        out
    }

    pub fn policy(&self) -> Result<Policy, ScenarioError> {
        match &self.network.policy {
            None => Ok(Policy::campus_default()),
            Some(p) => Ok(Policy::load(&self.resolve(p))?),
        }
    }

    pub fn turnout_model(&self) -> Result<TurnoutModel, ScenarioError> {
        let t = &self.turnout;
        let schedule = match &t.schedule {
            None => Schedule::campus_default(),
            Some(p) => Schedule::load(&self.resolve(p))?,
        };
        let base_kw = self.devices.cabinets.first().map(|c| c.base_load_w / 1000.0).unwrap_or(0.0);
        let m = TurnoutModel {
            cluster_size: t.cluster_size,
            base_load_kw: base_kw,
            mu_w: t.mu_w,
            sigma_w: t.sigma_w,
            schedule,
            seed: self.seed,
        };
        m.validate()?;
        Ok(m)
    }

    fn build_thing(&self, thing: &ThingSpec, name: &str, f: &FeatureSpec) -> Result<SimulatedThing, ScenarioError> {
        let ctx = |m: String| invalid(format!("{}/{name}: {m}", thing.name));
        let model = match f {
            FeatureSpec::Interpolation { property, mode, points, dataset, origin } => {
                let (table, default_origin) = match (points, dataset) {
                    (Some(pts), None) => (InterpolationTable::new(pts.clone(), *mode)?, 0.0),
                    (None, Some(ds)) => {
                        let radiance = load_radiance_csv(&self.resolve(ds)).map_err(|e| ctx(format!("{ds}: {e}")))?;
                        (InterpolationTable::new(radiance.table().points().to_vec(), *mode)?, self.start_unix())
                    }
                    _ => return Err(ctx("exactly one of `points` and `dataset` is required".into())),
                };
                ThingModel::Interpolation {
                    table,
                    origin: origin.unwrap_or(default_origin),
                    property: property.clone(),
                }
            }
            FeatureSpec::Scriptable { components } => {
                let mut out = Vec::new();
                for c in components {
                    let sources = c
                        .sources
                        .iter()
                        .map(|s| SignalPath::from_pointer(&s.thing_id, &s.feature, &s.pointer))
                        .collect::<Result<Vec<_>, _>>()?;
                    out.push(Component {
                        property: c.name.clone(),
                        sources,
                        callback: c.callback_name.clone(),
                        extra_args: c.args.clone(),
                    });
                }
                ThingModel::Scripted { components: out }
            }
            FeatureSpec::SystemSimulator { system, x0, inputs, u0, outputs, time_unit_scale, dt } => {
                if !(time_unit_scale.is_finite() && *time_unit_scale > 0.0) {
                    return Err(ctx("time_unit_scale must be positive".into()));
                }
                if inputs.len() != system.b.cols() {
                    return Err(ctx(format!(
                        "B has {} columns but {} inputs are bound",
                        system.b.cols(),
                        inputs.len()
                    )));
                }
                let u = u0.clone().unwrap_or_else(|| vec![0.0; inputs.len()]);
                if u.len() != inputs.len() {
                    return Err(ctx(format!("u0 has {} elements for {} inputs", u.len(), inputs.len())));
                }
                let sys = LinearStateSpace::new(
                    system.a.scaled(*time_unit_scale),
                    system.b.scaled(*time_unit_scale),
                    x0.clone(),
                    *dt,
                )
                .map_err(|e| ctx(e.to_string()))?;
                ThingModel::System { system: sys, inputs: inputs.clone(), outputs: outputs.clone(), u }
            }
        };
        Ok(SimulatedThing { thing: thing.name.clone(), feature: name.to_string(), model })
    }

    pub fn physical_layer(&self) -> Result<PhysicalLayer, ScenarioError> {
        let mut things = Vec::new();
        let mut names = BTreeSet::new();
        for t in &self.things {
            if !names.insert(t.name.as_str()) {
                return Err(invalid(format!("thing `{}` declared twice", t.name)));
            }
            crate::broker::ThingId::parse(&t.name).map_err(|e| invalid(e.to_string()))?;
            for (name, f) in &t.features {
                things.push(self.build_thing(t, name, f)?);
            }
        }
        for t in &self.things {
            for f in t.features.values() {
                if let FeatureSpec::Scriptable { components } = f {
                    for c in components {
                        for s in &c.sources {
                            if !names.contains(s.thing_id.as_str()) {
                                return Err(invalid(format!(
                                    "{}: source references undeclared thing `{}`",
                                    t.name, s.thing_id
                                )));
                            }
                        }
                    }
                }
            }
        }
        Ok(PhysicalLayer::new(things, CallbackRegistry::with_builtins())?)
    }

    pub fn plant_config(&self, layer: &PhysicalLayer) -> Result<PlantConfig, ScenarioError> {
        let p = &self.plant;
        let t = &p.turbine;
        let nominal = match t.nominal_rpm {
            Some(n) => n,
            None => {
                let sys = layer
                    .system(&t.thing)
                    .ok_or_else(|| invalid(format!("turbine `{}` is not a system simulator", t.thing)))?;
                sys.steady_state(&[1.0, 1.0, t.ambient_c])?[0]
            }
        };
        Ok(PlantConfig {
            sun: split_path(&p.sun)?,
            solar: split_path(&p.solar)?,
            storage: StorageUnit {
                thing: p.storage.thing.clone(),
                feature: p.storage.feature.clone(),
                level_output: p.storage.level_output.clone(),
                rated_kw: p.storage.rated_kw,
            },
            turbine: TurbineUnit {
                thing: t.thing.clone(),
                feature: t.feature.clone(),
                rpm_output: t.rpm_output.clone(),
                temperature_output: t.temperature_output.clone(),
                rated_kw: t.rated_kw,
                nominal_rpm: nominal,
                ambient_c: t.ambient_c,
            },
        })
    }

    pub fn build_plant(&self) -> Result<Plant, ScenarioError> {
        let layer = self.physical_layer()?;
        let cfg = self.plant_config(&layer)?;
        let storage_sys = self.find_feature(&cfg.storage.thing, &cfg.storage.feature)?;
        let turbine_sys = self.find_feature(&cfg.turbine.thing, &cfg.turbine.feature)?;
        for (sys, out) in [
            (storage_sys, &cfg.storage.level_output),
            (turbine_sys, &cfg.turbine.rpm_output),
            (turbine_sys, &cfg.turbine.temperature_output),
        ] {
            match sys {
                FeatureSpec::SystemSimulator { outputs, .. } if outputs.contains(out) => {}
                _ => return Err(invalid(format!("plant references missing system output `{out}`"))),
            }
        }
        Ok(Plant::new(layer, cfg)?)
    }

    fn find_feature(&self, thing: &str, feature: &str) -> Result<&FeatureSpec, ScenarioError> {
        self.things
            .iter()
            .find(|t| t.name == thing)
            .and_then(|t| t.features.get(feature))
            .ok_or_else(|| invalid(format!("plant references undeclared {thing}/{feature}")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn split_path_requires_three_parts() {
        assert!(split_path("FDT:a/b/c").is_ok());
        assert!(split_path("FDT:a/b").is_err());
        assert!(split_path("FDT:a//c").is_err());
    }

    #[test]
    fn parse_error_has_location() {
        let err = Scenario::parse("{\n  \"name\": \"x\",\n  oops\n}", "bad.json").unwrap_err();
        match err {
            ScenarioError::Parse { line, column, .. } => {
                assert_eq!(line, 3);
                assert!(column > 0);
            }
            other => panic!("unexpected {other:?}"),
        }
    }
}
