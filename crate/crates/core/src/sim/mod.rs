//! Simulation clock and physical-layer simulation methods.

mod callbacks;
mod clock;
mod interp;
mod lss;
mod physical;
mod radiance;
pub mod sun;

use thiserror::Error;

pub use callbacks::{Callback, CallbackArg, CallbackRegistry, SOLAR_SURFACE};
pub use clock::{SimClock, SimNow, SimTime};
pub use interp::{InterpolationMode, InterpolationTable};
pub use lss::{LinearStateSpace, Matrix};
pub use physical::{Component, PhysicalLayer, SignalPath, SimulatedThing, ThingModel};
pub use radiance::{load_radiance_csv, parse_radiance_csv, write_radiance_csv, RadianceTable};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("no unique steady state")]
    NoUniqueSteadyState,
    #[error("unknown callback `{0}`")]
    UnknownCallback(String),
    #[error("callback `{name}`: {reason}")]
    BadArguments { name: String, reason: String },
}
