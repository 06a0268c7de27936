//! Simulation time.
//!
//! The clock is an integer microsecond counter. Integer time keeps event
//! ordering, tie-breaking, and repeated runs exact: there is no accumulated
//! floating-point drift, and a profile whose entries sum to 136 ms completes
//! in exactly 136 ms of simulated time.

use std::fmt;
use std::ops::{Add, AddAssign, Sub};

use crate::kernel::KernelError;

pub const MICROS_PER_SEC: u64 = 1_000_000;
pub const MICROS_PER_MILLI: u64 = 1_000;

/// Absolute simulation time, microseconds since the start of the run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct SimTime(u64);

/// A nonnegative span of simulation time, in microseconds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct SimDuration(u64);

impl SimTime {
    pub const ZERO: SimTime = SimTime(0);

    pub fn from_micros(us: u64) -> Self {
        SimTime(us)
    }

    pub fn from_secs_f64(secs: f64) -> Result<Self, KernelError> {
        SimDuration::from_secs_f64(secs).map(|d| SimTime(d.0))
    }

    pub fn as_micros(self) -> u64 {
        self.0
    }

    pub fn as_secs_f64(self) -> f64 {
        self.0 as f64 / MICROS_PER_SEC as f64
    }

    pub fn as_millis_f64(self) -> f64 {
        self.0 as f64 / MICROS_PER_MILLI as f64
    }

    pub fn since(self, earlier: SimTime) -> SimDuration {
        SimDuration(self.0.saturating_sub(earlier.0))
    }
}

impl SimDuration {
    pub const ZERO: SimDuration = SimDuration(0);

    pub fn from_micros(us: u64) -> Self {
        SimDuration(us)
    }

    /// Convert seconds to a duration, rejecting negative or non-finite input.
    pub fn from_secs_f64(secs: f64) -> Result<Self, KernelError> {
        if !secs.is_finite() || secs < 0.0 {
            return Err(KernelError::InvalidDelay { value: secs });
        }
        Ok(SimDuration((secs * MICROS_PER_SEC as f64).round() as u64))
    }

    pub fn from_millis_f64(ms: f64) -> Result<Self, KernelError> {
        Self::from_secs_f64(ms / 1_000.0)
    }

    pub fn as_micros(self) -> u64 {
        self.0
    }

    pub fn as_secs_f64(self) -> f64 {
        self.0 as f64 / MICROS_PER_SEC as f64
    }

    pub fn as_millis_f64(self) -> f64 {
        self.0 as f64 / MICROS_PER_MILLI as f64
    }

    pub fn saturating_add(self, other: SimDuration) -> SimDuration {
        SimDuration(self.0.saturating_add(other.0))
    }
}

impl Add<SimDuration> for SimTime {
    type Output = SimTime;

    fn add(self, rhs: SimDuration) -> SimTime {
        SimTime(self.0 + rhs.0)
    }
}

impl AddAssign<SimDuration> for SimTime {
    fn add_assign(&mut self, rhs: SimDuration) {
        self.0 += rhs.0;
    }
}

impl Add for SimDuration {
    type Output = SimDuration;

    fn add(self, rhs: SimDuration) -> SimDuration {
        SimDuration(self.0 + rhs.0)
    }
}

impl AddAssign for SimDuration {
    fn add_assign(&mut self, rhs: SimDuration) {
        self.0 += rhs.0;
    }
}

impl Sub for SimTime {
    type Output = SimDuration;

    fn sub(self, rhs: SimTime) -> SimDuration {
        SimDuration(self.0 - rhs.0)
    }
}

impl fmt::Display for SimTime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:.6}s", self.as_secs_f64())
    }
}

impl fmt::Display for SimDuration {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:.6}s", self.as_secs_f64())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn second_round_trips() {
        let d = SimDuration::from_secs_f64(1.5).unwrap();
        assert_eq!(d.as_micros(), 1_500_000);
        assert_eq!(d.as_secs_f64(), 1.5);
        assert_eq!(d.as_millis_f64(), 1_500.0);
    }

    #[test]
    fn negative_and_non_finite_rejected() {
        assert!(SimDuration::from_secs_f64(-1.0).is_err());
        assert!(SimDuration::from_secs_f64(f64::NAN).is_err());
        assert!(SimDuration::from_secs_f64(f64::INFINITY).is_err());
        assert!(SimDuration::from_secs_f64(0.0).is_ok());
    }

    #[test]
    fn time_arithmetic() {
        let t = SimTime::from_micros(10) + SimDuration::from_micros(5);
        assert_eq!(t.as_micros(), 15);
        assert_eq!(t.since(SimTime::from_micros(4)).as_micros(), 11);
        assert_eq!(t.since(SimTime::from_micros(20)).as_micros(), 0);
    }
}
