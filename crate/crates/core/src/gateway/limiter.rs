//! Request pacing: a minimum interval between request starts derived from a
//! requests-per-minute budget.

use std::sync::Arc;

use super::clock::Clock;

pub struct RateLimiter {
    clock: Arc<dyn Clock>,
    interval_ms: u64,
    next_allowed_ms: u64,
}

impl RateLimiter {
    pub fn new(clock: Arc<dyn Clock>, requests_per_minute: u32) -> Self {
        let interval_ms = if requests_per_minute == 0 {
            0
        } else {
            60_000 / requests_per_minute as u64
        };
        Self {
            clock,
            interval_ms,
            next_allowed_ms: 0,
        }
    }

    /// Blocks (via the clock) until the next request may start.
    pub fn acquire(&mut self) {
        if self.interval_ms == 0 {
            return;
        }
        let now = self.clock.now_ms();
        if now < self.next_allowed_ms {
            self.clock.sleep_ms(self.next_allowed_ms - now);
        }
        let started = self.clock.now_ms();
        self.next_allowed_ms = started + self.interval_ms;
    }
}
