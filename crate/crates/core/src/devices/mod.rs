//! Virtual field devices: building smart cabinets with the trip PLC, the plant
//! (physical layer plus power bus) and the field controllers bridging it to the broker.

mod cabinet;
mod controller;
mod plant;
mod plc;

pub use cabinet::{SmartCabinet, CONSUMPTION_REG, MASTER_COIL, MAX_CONSUMPTION_REG, TRIP_COIL};
pub use controller::{apply_command, ControllerKind, ControllerStats, FieldController, PublishError};
pub use plant::{dispatch, EnergyTotals, Plant, PlantConfig, PowerFlows, StorageUnit, TurbineUnit};
pub use plc::{trip_logic, PlcScan, TripPlc};
