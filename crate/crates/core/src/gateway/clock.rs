use std::collections::VecDeque;
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

/// Monotonic time source. Tests swap in [`VirtualClock`] so that rate limiting
/// and backoff run without real sleeps.
pub trait Clock: Send + Sync {
    /// Time elapsed since the clock's origin.
    fn now(&self) -> Duration;

    /// Blocks until `now() >= deadline`.
    fn sleep_until(&self, deadline: Duration);

    fn sleep(&self, d: Duration) {
        self.sleep_until(self.now() + d);
    }
}

#[derive(Debug, Clone, Copy)]
pub struct SystemClock {
    origin: Instant,
}

impl Default for SystemClock {
    fn default() -> Self {
        SystemClock {
            origin: Instant::now(),
        }
    }
}

impl Clock for SystemClock {
    fn now(&self) -> Duration {
        self.origin.elapsed()
    }

    fn sleep_until(&self, deadline: Duration) {
        let now = self.now();
        if deadline > now {
            std::thread::sleep(deadline - now);
        }
    }
}

/// Clock that only moves when someone sleeps on it.
#[derive(Debug, Default)]
pub struct VirtualClock {
    now: Mutex<Duration>,
}

impl VirtualClock {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn advance(&self, d: Duration) {
        *self.now.lock().unwrap() += d;
    }
}

impl Clock for VirtualClock {
    fn now(&self) -> Duration {
        *self.now.lock().unwrap()
    }

    fn sleep_until(&self, deadline: Duration) {
        let mut now = self.now.lock().unwrap();
        if deadline > *now {
            *now = deadline;
        }
    }
}

pub const RATE_WINDOW: Duration = Duration::from_secs(60);

/// Sliding-window limiter: at most `per_minute` acquisitions in any 60 s window.
/// Shared by every caller of one gateway.
pub struct RateLimiter {
    per_minute: usize,
    issued: Mutex<VecDeque<Duration>>,
    clock: Arc<dyn Clock>,
}

impl RateLimiter {
    pub fn new(per_minute: usize, clock: Arc<dyn Clock>) -> Self {
        assert!(per_minute > 0, "requests_per_minute must be positive");
        RateLimiter {
            per_minute,
            issued: Mutex::new(VecDeque::with_capacity(per_minute)),
            clock,
        }
    }

    /// Waits for a free slot and returns the time it was granted.
    pub fn acquire(&self) -> Duration {
        loop {
            let wait_until = {
                let mut issued = self.issued.lock().unwrap();
                let now = self.clock.now();
                while issued.front().is_some_and(|&t| t + RATE_WINDOW <= now) {
                    issued.pop_front();
                }
                if issued.len() < self.per_minute {
                    issued.push_back(now);
                    return now;
                }
                issued[0] + RATE_WINDOW
            };
            self.clock.sleep_until(wait_until);
        }
    }
}
