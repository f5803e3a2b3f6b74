//! Lightweight digital twin of a campus polygeneration microgrid.
//!
//! The crate is organised by layer:
//!
//! * [`sim`]: simulation clock and the physical-layer methods (interpolation,
//!   linear state-space stepping, named callbacks).
//! * [`broker`]: latest-state store for field things, HTTP API and change events.
//! * [`modbus`]: Modbus/TCP codec, register files, server and client.
//! * [`devices`]: smart cabinets with the trip PLC, field controllers, power bus.
//! * [`historian`]: SCADA datapoints, polling and the command API.
//! * [`ems`]: the energy management decision process.
//! * [`occupancy`]: campus turnout, client population and building load.
//! * [`netfabric`]: segments, firewall policy and the delivery checkpoint.
//! * [`scenario`] and [`runner`]: configuration, orchestration and export.

// `!(x >= 0.0)` rejects NaN along with negatives
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod broker;
pub mod devices;
pub mod ems;
pub mod historian;
pub mod modbus;
pub mod netfabric;
pub mod occupancy;
pub mod runner;
pub mod scenario;
pub mod sim;
pub mod value;
pub mod web;

pub use value::Scalar;
