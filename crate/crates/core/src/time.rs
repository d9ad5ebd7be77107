//! Simulation time base.
//!
//! Time is an integer count of picoseconds. Every hardware parameter used by
//! the network models (150 ps detector resolution, 12.5 ns TDM frames, 0.3 ms
//! classical latency) is exactly representable, so traces compare exactly
//! across runs and worker counts.

use std::fmt;
use std::ops::{Add, Sub};

use serde::{Deserialize, Serialize};

/// A point in (or span of) simulation time, in picoseconds.
///
/// `SimTime::INFINITY` is the "no pending event" sentinel returned by empty
/// queues. Arithmetic saturates at the sentinel rather than wrapping; code that
/// must treat overflow as a failure uses [`SimTime::checked_add`].
#[derive(Copy, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SimTime(u64);

impl SimTime {
    pub const ZERO: SimTime = SimTime(0);
    pub const INFINITY: SimTime = SimTime(u64::MAX);

    pub const PS: u64 = 1;
    pub const NS: u64 = 1_000;
    pub const US: u64 = 1_000_000;
    pub const MS: u64 = 1_000_000_000;
    pub const S: u64 = 1_000_000_000_000;

    pub const fn from_ps(ps: u64) -> Self {
        SimTime(ps)
    }

    pub const fn from_ns(ns: u64) -> Self {
        SimTime(ns * Self::NS)
    }

    pub const fn from_us(us: u64) -> Self {
        SimTime(us * Self::US)
    }

    pub const fn from_ms(ms: u64) -> Self {
        SimTime(ms * Self::MS)
    }

    /// Converts seconds to the nearest picosecond.
    pub fn from_secs_f64(secs: f64) -> Self {
        assert!(secs.is_finite() && secs >= 0.0, "invalid duration {secs}");
        let ps = (secs * Self::S as f64).round();
        assert!(ps < u64::MAX as f64, "duration {secs}s overflows the time base");
        SimTime(ps as u64)
    }

    pub const fn as_ps(self) -> u64 {
        self.0
    }

    pub fn as_secs_f64(self) -> f64 {
        self.0 as f64 / Self::S as f64
    }

    pub const fn is_infinite(self) -> bool {
        self.0 == u64::MAX
    }

    pub fn checked_add(self, rhs: SimTime) -> Option<SimTime> {
        if self.is_infinite() || rhs.is_infinite() {
            return None;
        }
        match self.0.checked_add(rhs.0) {
            Some(v) if v != u64::MAX => Some(SimTime(v)),
            _ => None,
        }
    }

    /// Addition that maps overflow (or an infinite operand) to `INFINITY`.
    pub fn saturating_add(self, rhs: SimTime) -> SimTime {
        self.checked_add(rhs).unwrap_or(SimTime::INFINITY)
    }

    pub fn checked_sub(self, rhs: SimTime) -> Option<SimTime> {
        if self.is_infinite() {
            return None;
        }
        self.0.checked_sub(rhs.0).map(SimTime)
    }

    /// Halves a duration, rounding down.
    pub const fn half(self) -> SimTime {
        SimTime(self.0 / 2)
    }
}

impl Add for SimTime {
    type Output = SimTime;

    /// Panics on overflow. Use `checked_add`/`saturating_add` where the
    /// sentinel may be involved.
    fn add(self, rhs: SimTime) -> SimTime {
        self.checked_add(rhs)
            .unwrap_or_else(|| panic!("simulation time overflow: {self:?} + {rhs:?}"))
    }
}

impl Sub for SimTime {
    type Output = SimTime;

    fn sub(self, rhs: SimTime) -> SimTime {
        self.checked_sub(rhs)
            .unwrap_or_else(|| panic!("simulation time underflow: {self:?} - {rhs:?}"))
    }
}

impl fmt::Debug for SimTime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_infinite() {
            write!(f, "SimTime(inf)")
        } else {
            write!(f, "SimTime({}ps)", self.0)
        }
    }
}

impl fmt::Display for SimTime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_infinite() {
            return write!(f, "inf");
        }
        let ps = self.0;
        if ps % Self::MS == 0 && ps != 0 {
            write!(f, "{}ms", ps / Self::MS)
        } else if ps % Self::US == 0 && ps != 0 {
            write!(f, "{}us", ps / Self::US)
        } else if ps % Self::NS == 0 && ps != 0 {
            write!(f, "{}ns", ps / Self::NS)
        } else {
            write!(f, "{ps}ps")
        }
    }
}

/// Serializes a wall-clock `Duration` as fractional seconds.
pub mod duration_secs {
    use serde::{Deserialize, Deserializer, Serializer};
    use std::time::Duration;

    pub fn serialize<S: Serializer>(d: &Duration, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_f64(d.as_secs_f64())
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Duration, D::Error> {
        Ok(Duration::from_secs_f64(f64::deserialize(d)?))
    }
}
