//! Virtual time for deterministic runs.

use crate::types::Timestamp;

/// Monotonic virtual clock owned by a single driver (the harness).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct VirtualClock {
    now: Timestamp,
}

impl VirtualClock {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn starting_at(now: Timestamp) -> Self {
        VirtualClock { now }
    }

    pub fn now(&self) -> Timestamp {
        self.now
    }

    /// Moves time forward by `dt` milliseconds.
    pub fn advance(&mut self, dt: u64) -> Timestamp {
        self.now = self.now.plus(dt);
        self.now
    }

    /// Moves time forward to `t`; a `t` in the past leaves the clock alone.
    pub fn advance_to(&mut self, t: Timestamp) -> Timestamp {
        self.now = self.now.max(t);
        self.now
    }
}
