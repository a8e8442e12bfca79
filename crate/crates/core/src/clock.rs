// SPDX-License-Identifier: Apache-2.0

//! Time sources. Every timestamp consumer takes a [`Clock`] so that replay
//! can substitute a virtual clock for the wall clock.

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use std::time::Instant;

pub trait Clock: Send + Sync {
    /// Milliseconds since the session epoch.
    fn now_ms(&self) -> u64;

    /// Fractional milliseconds; used for latency measurements.
    fn now_ms_f64(&self) -> f64 {
        self.now_ms() as f64
    }
}

/// A virtual clock advanced explicitly by the replay driver.
#[derive(Clone, Default)]
pub struct VirtualClock {
    now: Arc<AtomicU64>,
}

impl VirtualClock {
    pub fn new(start_ms: u64) -> Self {
        Self {
            now: Arc::new(AtomicU64::new(start_ms)),
        }
    }

    /// Moves the clock forward to `t_ms`. Time never runs backwards.
    pub fn advance_to(&self, t_ms: u64) {
        self.now.fetch_max(t_ms, Ordering::AcqRel);
    }
}

impl Clock for VirtualClock {
    fn now_ms(&self) -> u64 {
        self.now.load(Ordering::Acquire)
    }
}

/// Wall clock anchored at construction.
#[derive(Clone)]
pub struct SystemClock {
    epoch: Instant,
    speed: f64,
}

impl SystemClock {
    pub fn new() -> Self {
        Self::with_speed(1.0)
    }

    /// A clock running `speed` times faster than wall time.
    pub fn with_speed(speed: f64) -> Self {
        assert!(speed > 0.0 && speed.is_finite(), "clock speed must be positive");
        Self {
            epoch: Instant::now(),
            speed,
        }
    }

    pub fn speed(&self) -> f64 {
        self.speed
    }

    pub fn epoch(&self) -> Instant {
        self.epoch
    }
}

impl Default for SystemClock {
    fn default() -> Self {
        Self::new()
    }
}

impl Clock for SystemClock {
    fn now_ms(&self) -> u64 {
        self.now_ms_f64() as u64
    }

    fn now_ms_f64(&self) -> f64 {
        self.epoch.elapsed().as_secs_f64() * 1000.0 * self.speed
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn virtual_clock_is_monotone() {
        let clock = VirtualClock::new(0);
        clock.advance_to(500);
        assert_eq!(clock.now_ms(), 500);
        clock.advance_to(100);
        assert_eq!(clock.now_ms(), 500);
        let shared = clock.clone();
        shared.advance_to(750);
        assert_eq!(clock.now_ms(), 750);
    }
}
