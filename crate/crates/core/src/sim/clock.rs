//! Simulated time.
//!
//! Time is kept as integer milliseconds so that periodic schedules never drift.
//! Nothing in the engine reads the wall clock except the runner's pacing loop,
//! which converts elapsed wall time into simulated time via [`SimClock::advance`].

use std::fmt;
use std::ops::{Add, Sub};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};

/// Simulated timestamp, milliseconds since scenario start.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default, Serialize, Deserialize)]
pub struct SimTime(pub u64);

impl SimTime {
    pub const ZERO: SimTime = SimTime(0);

    pub fn from_millis(ms: u64) -> Self {
        SimTime(ms)
    }

    /// Rounds to the nearest millisecond; negative inputs clamp to zero.
    pub fn from_secs_f64(secs: f64) -> Self {
        SimTime((secs.max(0.0) * 1000.0).round() as u64)
    }

    pub fn from_secs(secs: u64) -> Self {
        SimTime(secs * 1000)
    }

    pub fn as_millis(self) -> u64 {
        self.0
    }

    pub fn as_secs_f64(self) -> f64 {
        self.0 as f64 / 1000.0
    }

    pub fn saturating_sub(self, other: SimTime) -> SimTime {
        SimTime(self.0.saturating_sub(other.0))
    }
}

impl Add for SimTime {
    type Output = SimTime;
    fn add(self, rhs: SimTime) -> SimTime {
        SimTime(self.0 + rhs.0)
    }
}

impl Sub for SimTime {
    type Output = SimTime;
    fn sub(self, rhs: SimTime) -> SimTime {
        SimTime(self.0 - rhs.0)
    }
}

impl fmt::Display for SimTime {
    /// Seconds, shortest representation (`10`, `0.1`).
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.as_secs_f64())
    }
}

/// Pacing clock: maps elapsed real time to simulated time.
#[derive(Debug, Clone)]
pub struct SimClock {
    sim_epoch: SimTime,
    scale: f64,
    tick: SimTime,
    // sub-tick remainder in simulated ms, carried between advances
    carry: f64,
}

impl SimClock {
    /// `scale` is clamped to at least 1; `tick` to at least 1 ms.
    pub fn new(scale: f64, tick_secs: f64) -> Self {
        SimClock {
            sim_epoch: SimTime::ZERO,
            scale: if scale.is_finite() { scale.max(1.0) } else { 1.0 },
            tick: SimTime(SimTime::from_secs_f64(tick_secs).0.max(1)),
            carry: 0.0,
        }
    }

    pub fn now(&self) -> SimTime {
        self.sim_epoch
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }

    pub fn tick(&self) -> SimTime {
        self.tick
    }

    /// Advances by `real_elapsed × scale`, rounded down to a whole number of ticks.
    /// The rounded-off remainder is kept and credited on the next call.
    pub fn advance(&mut self, real_elapsed: Duration) -> SimTime {
        let gained = real_elapsed.as_secs_f64() * 1000.0 * self.scale + self.carry;
        let tick = self.tick.0 as f64;
        // the epsilon absorbs float noise such as 1999.9999 ms for two 1 s ticks
        let ticks = ((gained + 1e-6) / tick).floor();
        let step = (ticks * tick) as u64;
        self.carry = (gained - step as f64).max(0.0);
        self.sim_epoch = SimTime(self.sim_epoch.0.saturating_add(step));
        self.sim_epoch
    }
}

/// Shared read-mostly view of the current simulated time, written only by the runner.
#[derive(Debug, Clone, Default)]
pub struct SimNow(Arc<AtomicU64>);

impl SimNow {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn get(&self) -> SimTime {
        SimTime(self.0.load(Ordering::Acquire))
    }

    /// Monotonic: earlier timestamps are ignored.
    pub fn set(&self, t: SimTime) {
        self.0.fetch_max(t.0, Ordering::AcqRel);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scale_thousand_one_second() {
        let mut c = SimClock::new(1000.0, 0.1);
        assert_eq!(c.advance(Duration::from_secs(1)), SimTime::from_secs(1000));
    }

    #[test]
    fn zero_elapsed_is_unchanged() {
        let mut c = SimClock::new(1000.0, 0.1);
        c.advance(Duration::from_millis(3));
        let before = c.now();
        assert_eq!(c.advance(Duration::ZERO), before);
    }

    #[test]
    fn floors_to_tick() {
        let mut c = SimClock::new(1.0, 0.1);
        assert_eq!(c.advance(Duration::from_millis(250)), SimTime::from_millis(200));
        // the 50 ms remainder is credited later
        assert_eq!(c.advance(Duration::from_millis(50)), SimTime::from_millis(300));
    }

    #[test]
    fn sim_now_is_monotonic() {
        let n = SimNow::new();
        n.set(SimTime(10));
        n.set(SimTime(5));
        assert_eq!(n.get(), SimTime(10));
    }

    #[test]
    fn display_in_seconds() {
        assert_eq!(SimTime(10_000).to_string(), "10");
        assert_eq!(SimTime(100).to_string(), "0.1");
    }
}
