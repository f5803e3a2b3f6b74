//! The simulated physical layer: a set of things, each driven by one of the three
//! simulation methods, exchanging values through named signals.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use super::{CallbackArg, CallbackRegistry, InterpolationTable, LinearStateSpace, SimError, SimTime};

/// `thing/feature/property` address of a physical signal.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct SignalPath {
    pub thing: String,
    pub feature: String,
    pub property: String,
}

impl SignalPath {
    pub fn new(thing: &str, feature: &str, property: &str) -> Self {
        SignalPath { thing: thing.into(), feature: feature.into(), property: property.into() }
    }

    /// Builds a path from a JSON-pointer style property reference (`/watt-per-msq`).
    pub fn from_pointer(thing: &str, feature: &str, pointer: &str) -> Result<Self, SimError> {
        let prop = pointer.strip_prefix('/').unwrap_or(pointer);
        if prop.is_empty() || prop.contains('/') {
            return Err(SimError::Config(format!("unsupported pointer `{pointer}`")));
        }
        Ok(Self::new(thing, feature, prop))
    }
}

impl fmt::Display for SignalPath {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}/{}", self.thing, self.feature, self.property)
    }
}

/// One computed property of a scripted thing.
#[derive(Debug, Clone)]
pub struct Component {
    pub property: String,
    pub sources: Vec<SignalPath>,
    pub callback: String,
    /// Appended after the source values.
    pub extra_args: Vec<CallbackArg>,
}

#[derive(Debug, Clone)]
pub enum ThingModel {
    /// `property = table(origin + t)`; `origin` shifts simulated seconds onto the table's axis.
    Interpolation {
        table: InterpolationTable,
        origin: f64,
        property: String,
    },
    Scripted {
        components: Vec<Component>,
    },
    System {
        system: LinearStateSpace,
        inputs: Vec<String>,
        outputs: Vec<String>,
        u: Vec<f64>,
    },
}

#[derive(Debug, Clone)]
pub struct SimulatedThing {
    pub thing: String,
    pub feature: String,
    pub model: ThingModel,
}

#[derive(Debug, Clone)]
pub struct PhysicalLayer {
    things: Vec<SimulatedThing>,
    registry: CallbackRegistry,
    signals: BTreeMap<SignalPath, f64>,
}

impl PhysicalLayer {
    pub fn new(things: Vec<SimulatedThing>, registry: CallbackRegistry) -> Result<Self, SimError> {
        let mut layer = PhysicalLayer { things, registry, signals: BTreeMap::new() };
        let mut seen = std::collections::BTreeSet::new();
        for t in &layer.things {
            if !seen.insert((t.thing.clone(), t.feature.clone())) {
                return Err(SimError::Config(format!("duplicate simulated feature {}/{}", t.thing, t.feature)));
            }
            match &t.model {
                ThingModel::Interpolation { property, .. } => {
                    layer.signals.insert(SignalPath::new(&t.thing, &t.feature, property), 0.0);
                }
                ThingModel::Scripted { components } => {
                    for c in components {
                        if !layer.registry.contains(&c.callback) {
                            return Err(SimError::UnknownCallback(c.callback.clone()));
                        }
                        layer.signals.insert(SignalPath::new(&t.thing, &t.feature, &c.property), 0.0);
                    }
                }
                ThingModel::System { system, inputs, outputs, u } => {
                    if inputs.len() != system.input_dim() || u.len() != system.input_dim() {
                        return Err(SimError::Dimension(format!(
                            "{}/{}: {} input bindings for a system with {} inputs",
                            t.thing,
                            t.feature,
                            inputs.len(),
                            system.input_dim()
                        )));
                    }
                    if outputs.len() != system.state_dim() {
                        return Err(SimError::Dimension(format!(
                            "{}/{}: {} output bindings for a system with {} states",
                            t.thing,
                            t.feature,
                            outputs.len(),
                            system.state_dim()
                        )));
                    }
                }
            }
        }
        for t in &layer.things {
            if let ThingModel::Scripted { components } = &t.model {
                for c in components {
                    for s in &c.sources {
                        let known = layer.signals.contains_key(s) || layer.system_output_exists(s);
                        if !known {
                            return Err(SimError::Config(format!("{}: unknown source signal {s}", t.thing)));
                        }
                    }
                }
            }
        }
        layer.publish_system_outputs();
        Ok(layer)
    }

    fn system_output_exists(&self, s: &SignalPath) -> bool {
        self.things.iter().any(|t| {
            t.thing == s.thing
                && t.feature == s.feature
                && matches!(&t.model, ThingModel::System { outputs, .. } if outputs.contains(&s.property))
        })
    }

    fn publish_system_outputs(&mut self) {
        for t in &self.things {
            if let ThingModel::System { system, outputs, .. } = &t.model {
                for (name, v) in outputs.iter().zip(system.state()) {
                    self.signals.insert(SignalPath::new(&t.thing, &t.feature, name), *v);
                }
            }
        }
    }

    /// Recomputes interpolation and scripted signals at `t`, in declaration order.
    pub fn evaluate(&mut self, t: SimTime) -> Result<(), SimError> {
        let secs = t.as_secs_f64();
        for i in 0..self.things.len() {
            let thing = &self.things[i];
            match &thing.model {
                ThingModel::Interpolation { table, origin, property } => {
                    let v = table.interpolate(origin + secs);
                    self.signals.insert(SignalPath::new(&thing.thing, &thing.feature, property), v);
                }
                ThingModel::Scripted { components } => {
                    let mut computed = Vec::with_capacity(components.len());
                    for c in components {
                        let mut args: Vec<CallbackArg> = c
                            .sources
                            .iter()
                            .map(|s| CallbackArg::Real(self.signals.get(s).copied().unwrap_or(0.0)))
                            .collect();
                        args.extend(c.extra_args.iter().cloned());
                        let v = self.registry.eval(&c.callback, &args)?;
                        computed.push((SignalPath::new(&thing.thing, &thing.feature, &c.property), v));
                    }
                    self.signals.extend(computed);
                }
                ThingModel::System { .. } => {}
            }
        }
        Ok(())
    }

    fn system_entry(&mut self, thing: &str) -> Result<&mut SimulatedThing, SimError> {
        self.things
            .iter_mut()
            .find(|t| t.thing == thing && matches!(t.model, ThingModel::System { .. }))
            .ok_or_else(|| SimError::Config(format!("no system simulator for {thing}")))
    }

    pub fn set_input(&mut self, thing: &str, u: &[f64]) -> Result<(), SimError> {
        let entry = self.system_entry(thing)?;
        if let ThingModel::System { u: current, system, .. } = &mut entry.model {
            if u.len() != system.input_dim() {
                return Err(SimError::Dimension(format!(
                    "{thing}: input has {} elements, expected {}",
                    u.len(),
                    system.input_dim()
                )));
            }
            current.copy_from_slice(u);
        }
        Ok(())
    }

    pub fn input(&self, thing: &str) -> Option<&[f64]> {
        self.things.iter().find_map(|t| match &t.model {
            ThingModel::System { u, .. } if t.thing == thing => Some(u.as_slice()),
            _ => None,
        })
    }

    pub fn system(&self, thing: &str) -> Option<&LinearStateSpace> {
        self.things.iter().find_map(|t| match &t.model {
            ThingModel::System { system, .. } if t.thing == thing => Some(system),
            _ => None,
        })
    }

    /// Overwrites a system's state, e.g. to enforce physical bounds.
    pub fn set_state(&mut self, thing: &str, x: Vec<f64>) -> Result<(), SimError> {
        let entry = self.system_entry(thing)?;
        if let ThingModel::System { system, .. } = &mut entry.model {
            system.set_state(x)?;
        }
        self.publish_system_outputs();
        Ok(())
    }

    /// Steps every system by `dt` seconds with its current input.
    pub fn step_systems(&mut self, dt: f64) -> Result<(), SimError> {
        for t in &mut self.things {
            if let ThingModel::System { system, u, .. } = &mut t.model {
                system.step(u, dt)?;
            }
        }
        self.publish_system_outputs();
        Ok(())
    }

    pub fn signal(&self, path: &SignalPath) -> Option<f64> {
        self.signals.get(path).copied()
    }

    pub fn signals(&self) -> &BTreeMap<SignalPath, f64> {
        &self.signals
    }

    pub fn things(&self) -> &[SimulatedThing] {
        &self.things
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::{InterpolationMode, Matrix, SOLAR_SURFACE};

    fn layer() -> PhysicalLayer {
        let sun = SimulatedThing {
            thing: "FDT:sun-simulator".into(),
            feature: "environment".into(),
            model: ThingModel::Interpolation {
                table: InterpolationTable::new(vec![(0.0, 0.0), (100.0, 1000.0)], InterpolationMode::LinearBracketing)
                    .unwrap(),
                origin: 0.0,
                property: "watt-per-msq".into(),
            },
        };
        let panel = SimulatedThing {
            thing: "FDT:solar-panel-1".into(),
            feature: "panel".into(),
            model: ThingModel::Scripted {
                components: vec![Component {
                    property: "power".into(),
                    sources: vec![SignalPath::new("FDT:sun-simulator", "environment", "watt-per-msq")],
                    callback: SOLAR_SURFACE.into(),
                    extra_args: vec![504.0.into(), 0.16.into()],
                }],
            },
        };
        let store = SimulatedThing {
            thing: "FDT:energy-store-1".into(),
            feature: "battery-pack".into(),
            model: ThingModel::System {
                system: LinearStateSpace::new(
                    Matrix::from_rows(vec![vec![0.0]]).unwrap(),
                    Matrix::from_rows(vec![vec![0.12667, -0.14]]).unwrap(),
                    vec![50.0],
                    1.0,
                )
                .unwrap(),
                inputs: vec!["recharge".into(), "discharge".into()],
                outputs: vec!["level".into()],
                u: vec![0.0, 0.0],
            },
        };
        PhysicalLayer::new(vec![sun, panel, store], CallbackRegistry::with_builtins()).unwrap()
    }

    #[test]
    fn pipeline_feeds_callback_from_source() {
        let mut l = layer();
        l.evaluate(SimTime::from_secs(100)).unwrap();
        let p = l.signal(&SignalPath::new("FDT:solar-panel-1", "panel", "power")).unwrap();
        assert!((p - 80640.0).abs() < 1e-6);
        l.evaluate(SimTime::from_secs(50)).unwrap();
        let p = l.signal(&SignalPath::new("FDT:solar-panel-1", "panel", "power")).unwrap();
        assert!((p - 40320.0).abs() < 1e-6);
    }

    #[test]
    fn systems_follow_inputs() {
        let mut l = layer();
        l.set_input("FDT:energy-store-1", &[1.0, 0.0]).unwrap();
        l.step_systems(10.0).unwrap();
        let lvl = l.signal(&SignalPath::new("FDT:energy-store-1", "battery-pack", "level")).unwrap();
        assert!((lvl - 51.2667).abs() < 1e-9);
        assert!(l.set_input("FDT:energy-store-1", &[1.0, 0.0, 0.0]).is_err());
    }

    #[test]
    fn unknown_callback_or_source_rejected() {
        let bad = SimulatedThing {
            thing: "FDT:x".into(),
            feature: "f".into(),
            model: ThingModel::Scripted {
                components: vec![Component {
                    property: "p".into(),
                    sources: vec![],
                    callback: "nope".into(),
                    extra_args: vec![],
                }],
            },
        };
        assert!(matches!(
            PhysicalLayer::new(vec![bad], CallbackRegistry::with_builtins()),
            Err(SimError::UnknownCallback(_))
        ));
        let dangling = SimulatedThing {
            thing: "FDT:x".into(),
            feature: "f".into(),
            model: ThingModel::Scripted {
                components: vec![Component {
                    property: "p".into(),
                    sources: vec![SignalPath::new("FDT:ghost", "f", "p")],
                    callback: "identity".into(),
                    extra_args: vec![],
                }],
            },
        };
        assert!(PhysicalLayer::new(vec![dangling], CallbackRegistry::with_builtins()).is_err());
    }
}
