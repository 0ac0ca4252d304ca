use core::fmt;

use serde::{Deserialize, Serialize};

use crate::float::round_half_away;
use crate::market::Interval;

/// Logical simulation time in milliseconds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SimTime(pub u64);

impl SimTime {
    pub const ZERO: SimTime = SimTime(0);

    /// Rounds to the nearest millisecond; negative and NaN inputs map to zero.
    pub fn from_secs(secs: f64) -> Self {
        if !(secs > 0.0) {
            return Self::ZERO;
        }
        let ms = secs * 1000.0;
        if ms >= u64::MAX as f64 {
            return SimTime(u64::MAX);
        }
        SimTime(round_half_away(ms) as u64)
    }

    pub fn as_secs(self) -> f64 {
        self.0 as f64 / 1000.0
    }

    pub fn saturating_add(self, other: SimTime) -> SimTime {
        SimTime(self.0.saturating_add(other.0))
    }
}

impl fmt::Display for SimTime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}.{:03}s", self.0 / 1000, self.0 % 1000)
    }
}

/// Shared clock; every agent derives the same interval index from it.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LogicalClock {
    now: SimTime,
    interval_length: SimTime,
}

impl LogicalClock {
    /// `interval_length` is the logical duration of one interval and must be non-zero.
    pub fn new(interval_length: SimTime) -> Self {
        Self {
            now: SimTime::ZERO,
            interval_length: SimTime(interval_length.0.max(1)),
        }
    }

    pub fn now(&self) -> SimTime {
        self.now
    }

    pub fn interval_length(&self) -> SimTime {
        self.interval_length
    }

    pub fn interval(&self) -> Interval {
        self.interval_at(self.now)
    }

    pub fn interval_at(&self, t: SimTime) -> Interval {
        u32::try_from(t.0 / self.interval_length.0).unwrap_or(u32::MAX)
    }

    pub fn interval_start(&self, k: Interval) -> SimTime {
        SimTime(u64::from(k).saturating_mul(self.interval_length.0))
    }

    /// Moves to `t` if it is later than the current time; returns the current time.
    pub fn advance_to(&mut self, t: SimTime) -> SimTime {
        self.now = self.now.max(t);
        self.now
    }

    pub fn advance_by(&mut self, d: SimTime) -> SimTime {
        self.now = self.now.saturating_add(d);
        self.now
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn intervals_follow_time() {
        let mut c = LogicalClock::new(SimTime::from_secs(9.0));
        assert_eq!((c.now(), c.interval()), (SimTime::ZERO, 0));
        c.advance_by(SimTime::from_secs(9.0));
        assert_eq!(c.interval(), 1);
        c.advance_to(SimTime::from_secs(96.0 * 9.0));
        assert_eq!(c.interval(), 96);
        c.advance_to(SimTime::ZERO);
        assert_eq!(c.interval(), 96);
        assert_eq!(c.interval_start(3), SimTime(27_000));
    }

    #[test]
    fn seconds_round_to_milliseconds() {
        assert_eq!(SimTime::from_secs(0.14), SimTime(140));
        assert_eq!(SimTime::from_secs(6.52), SimTime(6520));
        assert_eq!(SimTime::from_secs(-1.0), SimTime::ZERO);
        assert_eq!(SimTime::from_secs(f64::NAN), SimTime::ZERO);
        assert_eq!(std::format!("{}", SimTime(1880)), "1.880s");
    }
}
