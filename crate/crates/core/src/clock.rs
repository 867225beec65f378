//! Timestamp source. Pipelines take a clock so that scripted runs can be
//! made byte-stable with [`FixedClock`].

use chrono::{SecondsFormat, Utc};

pub trait Clock: Send + Sync {
    /// RFC 3339 timestamp.
    fn now(&self) -> String;
}

#[derive(Debug, Clone, Copy, Default)]
pub struct SystemClock;

impl Clock for SystemClock {
    fn now(&self) -> String {
        Utc::now().to_rfc3339_opts(SecondsFormat::Millis, true)
    }
}

#[derive(Debug, Clone)]
pub struct FixedClock(pub String);

impl FixedClock {
    pub fn epoch() -> Self {
        Self("1970-01-01T00:00:00.000Z".to_string())
    }
}

impl Clock for FixedClock {
    fn now(&self) -> String {
        self.0.clone()
    }
}
