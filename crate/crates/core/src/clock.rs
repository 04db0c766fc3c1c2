use std::fmt;
use std::str::FromStr;
use std::sync::atomic::{AtomicU64, Ordering};
use std::time::{SystemTime, UNIX_EPOCH};

/// Milliseconds since the Unix epoch, UTC.
pub type Millis = u64;

pub trait Clock: Send + Sync {
    fn now_ms(&self) -> Millis;
}

#[derive(Debug, Clone, Copy, Default)]
pub struct SystemClock;

impl Clock for SystemClock {
    fn now_ms(&self) -> Millis {
        SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_millis() as u64)
            .unwrap_or(0)
    }
}

/// Always reports the same instant.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FixedClock(pub Millis);

impl Clock for FixedClock {
    fn now_ms(&self) -> Millis {
        self.0
    }
}

/// Advances by a fixed step on every read. Used by the simulation harness.
#[derive(Debug)]
pub struct SteppingClock {
    next: AtomicU64,
    step: u64,
}

impl SteppingClock {
    pub fn new(start: Millis, step: u64) -> Self {
        SteppingClock {
            next: AtomicU64::new(start),
            step,
        }
    }
}

impl Clock for SteppingClock {
    fn now_ms(&self) -> Millis {
        self.next.fetch_add(self.step, Ordering::SeqCst)
    }
}

/// `system` or `fixed:<millis>`, as accepted by the `--clock` flag.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ClockSpec {
    #[default]
    System,
    Fixed(Millis),
}

impl ClockSpec {
    pub fn build(self) -> Box<dyn Clock> {
        match self {
            ClockSpec::System => Box::new(SystemClock),
            ClockSpec::Fixed(ms) => Box::new(FixedClock(ms)),
        }
    }
}

impl FromStr for ClockSpec {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s == "system" {
            return Ok(ClockSpec::System);
        }
        let Some(ts) = s.strip_prefix("fixed:") else {
            return Err(format!("expected `system` or `fixed:<millis>`, got {s:?}"));
        };
        ts.parse::<u64>()
            .map(ClockSpec::Fixed)
            .map_err(|e| format!("bad fixed timestamp {ts:?}: {e}"))
    }
}

impl fmt::Display for ClockSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ClockSpec::System => f.write_str("system"),
            ClockSpec::Fixed(ms) => write!(f, "fixed:{ms}"),
        }
    }
}
