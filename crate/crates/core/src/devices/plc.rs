//! Soft PLC running the cabinet trip program:
//!
//! ```text
//! IF MAXCONS > 0 THEN
//!     TRIPSW := TRIPSW OR (CONS > MAXCONS);
//! END_IF
//! ```
//!
//! The trip latches; only an explicit write of coil 100 clears it.

use super::cabinet::{SmartCabinet, CONSUMPTION_REG, MAX_CONSUMPTION_REG, TRIP_COIL};
use crate::sim::SimTime;

/// One evaluation of the trip rung. `None` means the coil is left untouched.
pub fn trip_logic(cons: u16, maxcons: u16, trip: bool) -> Option<bool> {
    (maxcons > 0).then_some(trip || cons > maxcons)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PlcScan {
    pub trip: bool,
    pub tripped_now: bool,
    pub reset_now: bool,
}

#[derive(Debug, Clone)]
pub struct TripPlc {
    pub scan_period: SimTime,
    // coil state seen at the end of the previous scan
    last_trip: bool,
}

impl Default for TripPlc {
    fn default() -> Self {
        TripPlc { scan_period: SimTime::from_millis(100), last_trip: false }
    }
}

impl TripPlc {
    pub fn new(scan_period: SimTime) -> Self {
        TripPlc { scan_period, last_trip: false }
    }

    /// Reads CONS/MAXCONS, writes TRIPSW, and applies the trip side effect on
    /// the false→true edge (clients of the building are deactivated).
    pub fn scan(&mut self, cabinet: &SmartCabinet) -> PlcScan {
        let trip = cabinet.registers.write(|rf| {
            let cons = rf.input(CONSUMPTION_REG).unwrap_or(0);
            let max = rf.input(MAX_CONSUMPTION_REG).unwrap_or(0);
            let current = rf.coil(TRIP_COIL).unwrap_or(false);
            match trip_logic(cons, max, current) {
                Some(t) => {
                    rf.set_coil(TRIP_COIL, t);
                    t
                }
                None => current,
            }
        });
        let tripped_now = trip && !self.last_trip;
        let reset_now = !trip && self.last_trip;
        if tripped_now {
            let off = cabinet.population().lock().unwrap().trip(&cabinet.building);
            log::warn!("cabinet {} tripped; {} clients deactivated", cabinet.building, off.len());
        }
        if reset_now {
            cabinet.population().lock().unwrap().reset_trip(&cabinet.building);
            log::info!("cabinet {} trip reset", cabinet.building);
        }
        self.last_trip = trip;
        PlcScan { trip, tripped_now, reset_now }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::devices::MASTER_COIL;
    use crate::occupancy::{Population, TurnoutModel};
    use std::sync::{Arc, Mutex};

    #[test]
    fn rung_semantics() {
        assert_eq!(trip_logic(30000, 25000, false), Some(true));
        assert_eq!(trip_logic(20000, 25000, false), Some(false));
        assert_eq!(trip_logic(30000, 0, false), None);
        assert_eq!(trip_logic(20000, 25000, true), Some(true));
    }

    #[test]
    fn trip_deactivates_clients_and_latches() {
        let m = TurnoutModel { sigma_w: 0.0, ..Default::default() };
        let pop = Arc::new(Mutex::new(Population::new(m, vec!["A".into()]).unwrap()));
        let cab = SmartCabinet::new("A", 1500.0, 3000.0, pop.clone());
        let mut plc = TripPlc::default();
        pop.lock().unwrap().sync_clients(100.0);
        assert_eq!(cab.sample(), 4000.0);
        let s = plc.scan(&cab);
        assert!(s.trip && s.tripped_now);
        assert!(cab.sample() <= cab.base_load);
        assert_eq!(pop.lock().unwrap().active_count(), 0);
        // latched even though consumption is now below the limit
        assert!(plc.scan(&cab).trip);
        pop.lock().unwrap().sync_clients(100.0);
        assert_eq!(pop.lock().unwrap().active_count(), 0);
        // SCADA reset
        cab.registers.write(|rf| rf.set_coil(TRIP_COIL, false));
        assert!(plc.scan(&cab).reset_now);
        pop.lock().unwrap().sync_clients(100.0);
        assert_eq!(pop.lock().unwrap().active_count(), 10);
        assert_eq!(cab.registers.read(|rf| rf.coil(MASTER_COIL)), Some(true));
    }
}
