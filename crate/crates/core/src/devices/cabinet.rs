//! Building smart cabinet: sums constant and client loads into Modbus registers.

use std::sync::{Arc, Mutex};

use crate::modbus::{RegisterFile, SharedRegisters};
use crate::occupancy::Population;

/// Input register: current consumption, W.
pub const CONSUMPTION_REG: u16 = 100;
/// Input register: maximum consumption, W.
pub const MAX_CONSUMPTION_REG: u16 = 101;
/// Coil: trip switch.
pub const TRIP_COIL: u16 = 100;
/// Coil: master switch, under SCADA control.
pub const MASTER_COIL: u16 = 101;

#[derive(Debug, Clone)]
pub struct SmartCabinet {
    pub building: String,
    /// W.
    pub base_load: f64,
    /// W.
    pub max_consumption: f64,
    pub registers: SharedRegisters,
    population: Arc<Mutex<Population>>,
}

fn to_register(w: f64) -> u16 {
    w.round().clamp(0.0, u16::MAX as f64) as u16
}

impl SmartCabinet {
    pub fn new(building: &str, base_load: f64, max_consumption: f64, population: Arc<Mutex<Population>>) -> Self {
        let mut rf = RegisterFile::new();
        rf.set_input(CONSUMPTION_REG, 0);
        rf.set_input(MAX_CONSUMPTION_REG, to_register(max_consumption));
        rf.set_coil(TRIP_COIL, false);
        rf.set_coil(MASTER_COIL, true);
        SmartCabinet {
            building: building.to_string(),
            base_load,
            max_consumption,
            registers: SharedRegisters::new(rf),
            population,
        }
    }

    pub fn population(&self) -> &Arc<Mutex<Population>> {
        &self.population
    }

    pub fn master_on(&self) -> bool {
        self.registers.read(|rf| rf.coil(MASTER_COIL).unwrap_or(false))
    }

    pub fn tripped(&self) -> bool {
        self.registers.read(|rf| rf.coil(TRIP_COIL).unwrap_or(false))
    }

    /// Computes the building consumption, stores it in input 100 (saturating
    /// whole watts) and returns the unsaturated value in W.
    pub fn sample(&self) -> f64 {
        let w = if self.master_on() {
            self.base_load + self.population.lock().unwrap().active_load(&self.building)
        } else {
            0.0
        };
        self.registers.write(|rf| rf.set_input(CONSUMPTION_REG, to_register(w)));
        w
    }

    /// Last sampled consumption as exposed on the wire, W.
    pub fn reported(&self) -> u16 {
        self.registers.read(|rf| rf.input(CONSUMPTION_REG).unwrap_or(0))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::occupancy::TurnoutModel;

    fn cabinet(sigma: f64) -> SmartCabinet {
        let m = TurnoutModel { sigma_w: sigma, ..Default::default() };
        let pop = Population::new(m, vec!["A".into()]).unwrap();
        SmartCabinet::new("A", 1500.0, 10000.0, Arc::new(Mutex::new(pop)))
    }

    #[test]
    fn sums_base_and_active_clients() {
        let c = cabinet(0.0);
        assert_eq!(c.sample(), 1500.0);
        c.population().lock().unwrap().sync_clients(20.0);
        assert_eq!(c.sample(), 2000.0);
        assert_eq!(c.reported(), 2000);
        c.population().lock().unwrap().sync_clients(10.0);
        assert_eq!(c.sample(), 1750.0);
    }

    #[test]
    fn master_off_reads_zero_and_saturates() {
        let c = cabinet(0.0);
        c.registers.write(|rf| rf.set_coil(MASTER_COIL, false));
        assert_eq!(c.sample(), 0.0);
        c.registers.write(|rf| rf.set_coil(MASTER_COIL, true));
        let big = SmartCabinet::new("A", 70000.0, 0.0, c.population().clone());
        assert_eq!(big.sample(), 70000.0);
        assert_eq!(big.reported(), u16::MAX);
    }
}
