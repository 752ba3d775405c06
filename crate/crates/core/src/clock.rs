use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use std::time::Instant;

/// Source of monotonic timestamps (milliseconds).
///
/// `Frozen` always reports zero, which keeps journals byte-identical across
/// deterministic runs.
#[derive(Debug, Clone)]
pub enum Clock {
    Monotonic(Instant),
    Logical(Arc<AtomicU64>),
    Frozen,
}

impl Clock {
    pub fn monotonic() -> Self {
        Clock::Monotonic(Instant::now())
    }

    pub fn logical() -> Self {
        Clock::Logical(Arc::new(AtomicU64::new(0)))
    }

    pub fn now(&self) -> u64 {
        match self {
            Clock::Monotonic(start) => start.elapsed().as_millis() as u64,
            Clock::Logical(counter) => counter.fetch_add(1, Ordering::SeqCst),
            Clock::Frozen => 0,
        }
    }
}

impl Default for Clock {
    fn default() -> Self {
        Clock::monotonic()
    }
}
