//! Per-network server rotation.

use std::time::{Duration, Instant};

use thiserror::Error;

pub const DEFAULT_COOLDOWN: Duration = Duration::from_secs(30);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
#[error("every server of the network failed within the cooldown window")]
pub struct Exhausted;

/// Round-robin over one network's servers. A server that failed is skipped
/// until its cooldown has passed.
#[derive(Debug, Clone)]
pub struct ServerPool {
    failed_at: Vec<Option<Instant>>,
    current: usize,
    cooldown: Duration,
}

impl ServerPool {
    /// # Panics
    /// If `servers` is zero.
    pub fn new(servers: usize, cooldown: Duration) -> Self {
        assert!(servers > 0, "a network needs at least one server");
        ServerPool { failed_at: vec![None; servers], current: 0, cooldown }
    }

    pub fn len(&self) -> usize {
        self.failed_at.len()
    }

    pub fn is_empty(&self) -> bool {
        self.failed_at.is_empty()
    }

    pub fn current(&self) -> usize {
        self.current
    }

    /// Records that `failed` failed at `now` and picks the next usable
    /// server after it.
    pub fn fail(&mut self, failed: usize, now: Instant) -> Result<usize, Exhausted> {
        let n = self.failed_at.len();
        self.failed_at[failed % n] = Some(now);
        for step in 1..=n {
            let i = (failed + step) % n;
            let usable = match self.failed_at[i] {
                None => true,
                Some(t) => now.saturating_duration_since(t) >= self.cooldown,
            };
            if usable {
                self.failed_at[i] = None;
                self.current = i;
                return Ok(i);
            }
        }
        Err(Exhausted)
    }
}
