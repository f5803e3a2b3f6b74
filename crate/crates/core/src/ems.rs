//! Energy management: a timer-driven process that reads campus measurements
//! from the historian and dispatches storage and turbine.
//!
//! Surplus (balance ≥ 0) runs Storage Charge and Turbine Stop; a deficit runs
//! Storage Discharge, falling back to Turbine Start when the deficit exceeds the
//! turbine threshold, and to the grid otherwise.

use std::fmt;
use std::str::FromStr;
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::historian::{HistorianError, ScadaClient};
use crate::sim::SimTime;
use crate::Scalar;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EmsError {
    #[error("invalid EMS configuration: {0}")]
    Config(String),
    #[error("measurement out of domain: {0}")]
    Domain(String),
    #[error("unknown command `{0}`")]
    UnknownCommand(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EmsConfig {
    /// Percent; charging only strictly below it.
    pub charge_ceiling: f64,
    /// Percent; discharging only strictly above it.
    pub discharge_floor: f64,
    /// kW; the turbine starts only for deficits strictly above it.
    pub turbine_threshold: f64,
    /// kW the turbine covers once running; used for the expected grid import.
    pub turbine_capacity: f64,
    /// Simulated seconds between ticks; also the freshness bound for measurements.
    pub timer_period: f64,
    /// kW of net export targeted; 0 minimises grid draw.
    pub setpoint: f64,
}

impl Default for EmsConfig {
    fn default() -> Self {
        EmsConfig {
            charge_ceiling: 90.0,
            discharge_floor: 10.0,
            turbine_threshold: 65.0,
            turbine_capacity: 65.0,
            timer_period: 60.0,
            setpoint: 0.0,
        }
    }
}

impl EmsConfig {
    pub fn validate(&self) -> Result<(), EmsError> {
        if !(0.0 <= self.discharge_floor && self.discharge_floor < self.charge_ceiling && self.charge_ceiling <= 100.0)
        {
            return Err(EmsError::Config("need 0 <= discharge_floor < charge_ceiling <= 100".into()));
        }
        if !(self.turbine_threshold > 0.0) || !(self.turbine_capacity >= 0.0) {
            return Err(EmsError::Config("turbine threshold must be positive".into()));
        }
        if !(self.timer_period > 0.0) {
            return Err(EmsError::Config("timer period must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Measurements {
    /// kW.
    pub solar_generation: f64,
    /// kW.
    pub total_consumption: f64,
    /// Percent.
    pub storage_level: f64,
    pub turbine_running: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum StorageMode {
    Charge,
    Discharge,
    #[default]
    Idle,
}

impl StorageMode {
    pub fn as_str(self) -> &'static str {
        match self {
            StorageMode::Charge => "charge",
            StorageMode::Discharge => "discharge",
            StorageMode::Idle => "idle",
        }
    }

    /// Storage inputs `(recharge, discharge)`; never both non-zero.
    pub fn inputs(self) -> [f64; 2] {
        match self {
            StorageMode::Charge => [1.0, 0.0],
            StorageMode::Discharge => [0.0, 1.0],
            StorageMode::Idle => [0.0, 0.0],
        }
    }
}

impl FromStr for StorageMode {
    type Err = EmsError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "charge" => Ok(StorageMode::Charge),
            "discharge" => Ok(StorageMode::Discharge),
            "idle" => Ok(StorageMode::Idle),
            other => Err(EmsError::UnknownCommand(other.to_string())),
        }
    }
}

impl fmt::Display for StorageMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TurbineCommand {
    Start,
    Stop,
    None,
}

impl TurbineCommand {
    pub fn as_str(self) -> &'static str {
        match self {
            TurbineCommand::Start => "start",
            TurbineCommand::Stop => "stop",
            TurbineCommand::None => "none",
        }
    }
}

impl FromStr for TurbineCommand {
    type Err = EmsError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "start" => Ok(TurbineCommand::Start),
            "stop" => Ok(TurbineCommand::Stop),
            other => Err(EmsError::UnknownCommand(other.to_string())),
        }
    }
}

impl fmt::Display for TurbineCommand {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ActionSet {
    pub storage_mode: StorageMode,
    pub turbine_command: TurbineCommand,
    pub dissipate_surplus: bool,
    /// kW, advisory.
    pub grid_import_expected: f64,
}

pub fn charge_viable(cfg: &EmsConfig, level: f64) -> bool {
    level < cfg.charge_ceiling
}

pub fn discharge_viable(cfg: &EmsConfig, level: f64) -> bool {
    level > cfg.discharge_floor
}

pub fn turbine_convenient(cfg: &EmsConfig, deficit: f64) -> bool {
    deficit > cfg.turbine_threshold
}

/// One pass of the EMS process over fresh measurements.
pub fn ems_tick(cfg: &EmsConfig, m: &Measurements) -> Result<ActionSet, EmsError> {
    let finite_nonneg = |v: f64| v.is_finite() && v >= 0.0;
    if !finite_nonneg(m.solar_generation) || !finite_nonneg(m.total_consumption) {
        return Err(EmsError::Domain(format!("{m:?}")));
    }
    if !(0.0..=100.0).contains(&m.storage_level) {
        return Err(EmsError::Domain(format!("storage level {}", m.storage_level)));
    }
    let balance = m.solar_generation - m.total_consumption - cfg.setpoint;
    if balance >= 0.0 {
        let charge = charge_viable(cfg, m.storage_level);
        return Ok(ActionSet {
            storage_mode: if charge { StorageMode::Charge } else { StorageMode::Idle },
            turbine_command: TurbineCommand::Stop,
            dissipate_surplus: !charge,
            grid_import_expected: 0.0,
        });
    }
    let deficit = -balance;
    if discharge_viable(cfg, m.storage_level) {
        return Ok(ActionSet {
            storage_mode: StorageMode::Discharge,
            turbine_command: TurbineCommand::None,
            dissipate_surplus: false,
            grid_import_expected: 0.0,
        });
    }
    if turbine_convenient(cfg, deficit) {
        Ok(ActionSet {
            storage_mode: StorageMode::Idle,
            turbine_command: TurbineCommand::Start,
            dissipate_surplus: false,
            grid_import_expected: (deficit - cfg.turbine_capacity).max(0.0),
        })
    } else {
        Ok(ActionSet {
            storage_mode: StorageMode::Idle,
            turbine_command: TurbineCommand::Stop,
            dissipate_surplus: false,
            grid_import_expected: deficit,
        })
    }
}

/// Where the process reads measurements and sends commands.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EmsBindings {
    /// W.
    pub solar_xid: String,
    /// W.
    pub consumption_xid: String,
    pub storage_level_xid: String,
    pub turbine_running_xid: String,
    pub storage_mode_target: String,
    pub turbine_command_target: String,
}

impl Default for EmsBindings {
    fn default() -> Self {
        EmsBindings {
            solar_xid: "DP_SOLAR_POWER".into(),
            consumption_xid: "DP_CAMPUS_CONSUMPTION".into(),
            storage_level_xid: "DP_STORAGE_LEVEL".into(),
            turbine_running_xid: "DP_TURBINE_RUNNING".into(),
            storage_mode_target: "FDT:energy-store-1/battery-pack/mode".into(),
            turbine_command_target: "FDT:gas-turbine-1/turbine/command".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum TickOutcome {
    Acted { measurements: Measurements, actions: ActionSet, failed_commands: usize },
    Skipped(String),
}

#[derive(Debug, Default)]
struct Counters {
    ticks: AtomicU64,
    skipped: AtomicU64,
    command_failures: AtomicU64,
}

/// The EMS control task. Ticks never overlap; an overlapping tick is skipped.
#[derive(Debug)]
pub struct EmsProcess {
    cfg: EmsConfig,
    bindings: EmsBindings,
    scada: ScadaClient,
    busy: AtomicBool,
    counters: Counters,
}

impl EmsProcess {
    pub fn new(cfg: EmsConfig, bindings: EmsBindings, scada: ScadaClient) -> Result<Self, EmsError> {
        cfg.validate()?;
        Ok(EmsProcess { cfg, bindings, scada, busy: AtomicBool::new(false), counters: Counters::default() })
    }

    pub fn config(&self) -> &EmsConfig {
        &self.cfg
    }

    pub async fn tick(&self, now: SimTime) -> TickOutcome {
        if self.busy.compare_exchange(false, true, Ordering::AcqRel, Ordering::Acquire).is_err() {
            self.counters.skipped.fetch_add(1, Ordering::Relaxed);
            log::warn!("t={now}: EMS tick overlaps the previous one; skipped");
            return TickOutcome::Skipped("overlap".into());
        }
        let out = self.run(now).await;
        self.busy.store(false, Ordering::Release);
        if let TickOutcome::Skipped(reason) = &out {
            self.counters.skipped.fetch_add(1, Ordering::Relaxed);
            log::warn!("t={now}: EMS tick skipped: {reason}");
        } else {
            self.counters.ticks.fetch_add(1, Ordering::Relaxed);
        }
        out
    }

    async fn measurements(&self, now: SimTime) -> Result<Measurements, String> {
        let all = self.scada.get_all().await.map_err(|e| e.to_string())?;
        let b = &self.bindings;
        let mut values = [0.0; 4];
        for (slot, xid) in
            [&b.solar_xid, &b.consumption_xid, &b.storage_level_xid, &b.turbine_running_xid].into_iter().enumerate()
        {
            if !all.iter().any(|d| &d.xid == xid) {
                return Err(format!("datapoint {xid} not registered"));
            }
            let s = self.scada.latest(xid).await.map_err(|e: HistorianError| format!("{xid}: {e}"))?;
            let age = now.saturating_sub(s.timestamp).as_secs_f64();
            if age > self.cfg.timer_period {
                return Err(format!("{xid} is stale ({age} s old)"));
            }
            values[slot] = s.value;
        }
        Ok(Measurements {
            solar_generation: values[0].max(0.0) / 1000.0,
            total_consumption: values[1].max(0.0) / 1000.0,
            storage_level: values[2].clamp(0.0, 100.0),
            turbine_running: values[3] != 0.0,
        })
    }

    async fn run(&self, now: SimTime) -> TickOutcome {
        let m = match self.measurements(now).await {
            Ok(m) => m,
            Err(reason) => return TickOutcome::Skipped(reason),
        };
        let actions = match ems_tick(&self.cfg, &m) {
            Ok(a) => a,
            Err(e) => return TickOutcome::Skipped(e.to_string()),
        };
        let mut failed = 0;
        let send = |target: String, value: &'static str| {
            let scada = &self.scada;
            async move { scada.command(&target, Scalar::from(value)).await.map_err(|e| (target, e)) }
        };
        let mut results = vec![send(self.bindings.storage_mode_target.clone(), actions.storage_mode.as_str()).await];
        if actions.turbine_command != TurbineCommand::None {
            results.push(send(self.bindings.turbine_command_target.clone(), actions.turbine_command.as_str()).await);
        }
        for r in results {
            if let Err((target, e)) = r {
                failed += 1;
                self.counters.command_failures.fetch_add(1, Ordering::Relaxed);
                log::warn!("t={now}: EMS command to {target} failed: {e}");
            }
        }
        TickOutcome::Acted { measurements: m, actions, failed_commands: failed }
    }

    pub fn ticks(&self) -> u64 {
        self.counters.ticks.load(Ordering::Relaxed)
    }

    pub fn skipped(&self) -> u64 {
        self.counters.skipped.load(Ordering::Relaxed)
    }

    pub fn command_failures(&self) -> u64 {
        self.counters.command_failures.load(Ordering::Relaxed)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn m(solar: f64, load: f64, level: f64, running: bool) -> Measurements {
        Measurements {
            solar_generation: solar,
            total_consumption: load,
            storage_level: level,
            turbine_running: running,
        }
    }

    fn act(mode: StorageMode, turbine: TurbineCommand, dissipate: bool, grid: f64) -> ActionSet {
        ActionSet {
            storage_mode: mode,
            turbine_command: turbine,
            dissipate_surplus: dissipate,
            grid_import_expected: grid,
        }
    }

    #[test]
    fn decision_table() {
        let c = EmsConfig::default();
        use StorageMode::*;
        use TurbineCommand::*;
        assert_eq!(ems_tick(&c, &m(80.0, 40.0, 50.0, true)).unwrap(), act(Charge, Stop, false, 0.0));
        assert_eq!(ems_tick(&c, &m(80.0, 40.0, 95.0, false)).unwrap(), act(Idle, Stop, true, 0.0));
        assert_eq!(ems_tick(&c, &m(10.0, 40.0, 50.0, false)).unwrap(), act(Discharge, None, false, 0.0));
        assert_eq!(ems_tick(&c, &m(10.0, 40.0, 5.0, false)).unwrap(), act(Idle, Stop, false, 30.0));
        assert_eq!(ems_tick(&c, &m(0.0, 100.0, 5.0, false)).unwrap(), act(Idle, Start, false, 35.0));
        // zero balance is a surplus
        assert_eq!(ems_tick(&c, &m(40.0, 40.0, 50.0, false)).unwrap().storage_mode, Charge);
    }

    #[test]
    fn thresholds_are_strict() {
        let c = EmsConfig::default();
        assert!(charge_viable(&c, 50.0) && !charge_viable(&c, 95.0) && !charge_viable(&c, 90.0));
        assert!(discharge_viable(&c, 50.0) && !discharge_viable(&c, 5.0) && !discharge_viable(&c, 10.0));
        assert!(turbine_convenient(&c, 100.0) && !turbine_convenient(&c, 30.0) && !turbine_convenient(&c, 65.0));
    }

    #[test]
    fn config_and_domain_checks() {
        assert!(EmsConfig { discharge_floor: 90.0, ..Default::default() }.validate().is_err());
        assert!(ems_tick(&EmsConfig::default(), &m(-1.0, 0.0, 50.0, false)).is_err());
        assert!(ems_tick(&EmsConfig::default(), &m(1.0, 0.0, 101.0, false)).is_err());
        assert_eq!("overdrive".parse::<StorageMode>(), Err(EmsError::UnknownCommand("overdrive".into())));
    }

    proptest! {
        #[test]
        fn branch_sign_is_scale_invariant(
            solar in 0.0f64..200.0, load in 0.0f64..200.0, level in 0.0f64..=100.0, k in 0.01f64..100.0,
        ) {
            let c = EmsConfig::default();
            let a = ems_tick(&c, &m(solar, load, level, false)).unwrap();
            let b = ems_tick(&c, &m(solar * k, load * k, level, false)).unwrap();
            let surplus = |x: &ActionSet| x.turbine_command == TurbineCommand::Stop
                && x.grid_import_expected == 0.0
                && x.storage_mode != StorageMode::Discharge;
            prop_assert_eq!(surplus(&a), solar >= load);
            prop_assert_eq!(surplus(&a), surplus(&b));
            prop_assert_eq!(a.storage_mode == StorageMode::Charge, b.storage_mode == StorageMode::Charge);
            prop_assert_eq!(a.storage_mode == StorageMode::Discharge, b.storage_mode == StorageMode::Discharge);
        }

        #[test]
        fn never_charge_and_start(solar in 0.0f64..500.0, load in 0.0f64..500.0, level in 0.0f64..=100.0, on in any::<bool>()) {
            let a = ems_tick(&EmsConfig::default(), &m(solar, load, level, on)).unwrap();
            prop_assert!(!(a.storage_mode == StorageMode::Charge && a.turbine_command == TurbineCommand::Start));
            prop_assert!(a.grid_import_expected >= 0.0);
        }
    }
}
