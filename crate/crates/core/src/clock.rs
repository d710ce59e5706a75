//! Virtual time and its mapping onto the wall clock.

use std::time::{Duration, Instant, SystemTime, UNIX_EPOCH};

/// Wall-clock milliseconds since the Unix epoch.
pub fn unix_ms() -> f64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs_f64() * 1000.0)
        .unwrap_or(0.0)
}

/// Holds a producer back until virtual instants are reached on the wall
/// clock. Virtual time advances `rate` times faster than wall time.
#[derive(Debug, Clone)]
pub struct Pacer {
    origin_wall: Instant,
    origin_virtual_ms: f64,
    rate: Option<f64>,
}

impl Pacer {
    /// Never waits.
    pub fn unpaced() -> Self {
        Self {
            origin_wall: Instant::now(),
            origin_virtual_ms: 0.0,
            rate: None,
        }
    }

    /// Virtual `origin_virtual_ms` corresponds to now; afterwards virtual
    /// time runs `rate` times faster than wall time.
    pub fn scaled(origin_virtual_ms: f64, rate: f64) -> Self {
        assert!(rate > 0.0 && rate.is_finite(), "rate must be positive");
        Self {
            origin_wall: Instant::now(),
            origin_virtual_ms,
            rate: Some(rate),
        }
    }

    /// Virtual time equals Unix wall-clock milliseconds.
    pub fn wall_clock() -> Self {
        Self::scaled(unix_ms(), 1.0)
    }

    pub fn wait_until(&self, virtual_ms: f64) {
        let Some(rate) = self.rate else {
            return;
        };
        let ahead = (virtual_ms - self.origin_virtual_ms) / rate;
        if ahead <= 0.0 {
            return;
        }
        let target = self.origin_wall + Duration::from_secs_f64(ahead / 1000.0);
        let now = Instant::now();
        if target > now {
            std::thread::sleep(target - now);
        }
    }
}
