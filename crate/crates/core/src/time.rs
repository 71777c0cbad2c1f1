//! Virtual time. Every timestamp in the system is seconds on this clock; the
//! wall clock is never read.

pub type Timestamp = u64;

pub const MINUTE: u64 = 60;
pub const HOUR: u64 = 60 * MINUTE;
pub const DAY: u64 = 24 * HOUR;
pub const YEAR: u64 = 365 * DAY;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Clock {
    now: Timestamp,
}

impl Clock {
    pub fn at(now: Timestamp) -> Self {
        Clock { now }
    }

    pub fn now(&self) -> Timestamp {
        self.now
    }

    pub fn advance(&mut self, secs: u64) {
        self.now += secs;
    }

    /// Moves forward to `t`; never moves backwards.
    pub fn advance_to(&mut self, t: Timestamp) {
        self.now = self.now.max(t);
    }
}
