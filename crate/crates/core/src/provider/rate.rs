use std::sync::Mutex;
use std::time::Duration;

use super::clock::Clock;

/// Spaces permits at least `1 / rate` seconds apart.
///
/// Permits are handed out as evenly spaced slots, so any one-second window
/// holds at most `rate` permits, plus one at the window boundary.
#[derive(Debug)]
pub struct RateLimiter {
    interval: Duration,
    next: Mutex<Option<Duration>>,
}

impl RateLimiter {
    pub fn new(requests_per_second: f64) -> Self {
        assert!(
            requests_per_second.is_finite() && requests_per_second > 0.0,
            "rate must be positive"
        );
        Self {
            interval: Duration::from_secs_f64(1.0 / requests_per_second),
            next: Mutex::new(None),
        }
    }

    /// Blocks on `clock` until the next permit; returns the permit's slot.
    pub fn acquire(&self, clock: &dyn Clock) -> Duration {
        let slot = {
            let mut next = self.next.lock().unwrap();
            let now = clock.now();
            let slot = match *next {
                Some(n) if n > now => n,
                _ => now,
            };
            *next = Some(slot + self.interval);
            slot
        };
        clock.sleep_until(slot);
        slot
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::provider::clock::VirtualClock;

    #[test]
    fn slots_are_evenly_spaced() {
        let clock = VirtualClock::new();
        let rl = RateLimiter::new(50.0);
        let slots: Vec<Duration> = (0..1000).map(|_| rl.acquire(&clock)).collect();
        let last = slots.last().unwrap().as_secs_f64();
        assert!((last - 999.0 / 50.0).abs() < 1e-6, "{last}");
        // No 1 s window holds more than cap + 1 permits.
        let secs: Vec<f64> = slots.iter().map(Duration::as_secs_f64).collect();
        for (i, &t) in secs.iter().enumerate() {
            let n = secs[i..].iter().take_while(|&&u| u < t + 1.0).count();
            assert!(n <= 51, "window at {t} holds {n}");
        }
    }
}
