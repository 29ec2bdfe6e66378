//! Core of the two-path chunk download engine.
//!
//! The engine pulls one media object over two network paths at once, each
//! path talking to its own content server, and sizes the HTTP range requests
//! on each path so that both transfers finish at about the same time. The
//! modules here are transport-agnostic: the same [`session::Session`] is
//! driven by the discrete-event simulator in [`netsim`] and by the real
//! HTTP backend in the `duopath-net` crate.

pub mod content;
pub mod estimators;
pub mod netsim;
pub mod playout;
pub mod scheduler;
pub mod session;

use std::fmt;

use serde::{Deserialize, Serialize};

pub use estimators::{Estimator, EstimatorError, EwmaState, HarmonicState, LastSampleState, ThroughputSample};
pub use netsim::{BandwidthTrace, PathModel, SetupTiming, SimConfig, SimError, SimOutcome};
pub use playout::{BufferConfig, FetchGate, Phase, PlayoutBuffer, PlayoutError};
pub use scheduler::{
    ByteRange, ChunkAssignment, Decision, DeferReason, Policy, Scheduler, SchedulerConfig, SchedulerError,
};
pub use session::{EventKind, EventLog, EventRecord, Session, SessionConfig, SessionSummary};

/// One kibibyte, the unit chunk sizes are usually quoted in.
pub const KIB: u64 = 1024;
/// One mebibyte.
pub const MIB: u64 = 1024 * 1024;

/// Identifies one of the two paths. Path 0 is conventionally the path with
/// the shorter round-trip time.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct PathId(u8);

impl PathId {
    pub const ZERO: PathId = PathId(0);
    pub const ONE: PathId = PathId(1);
    pub const BOTH: [PathId; 2] = [PathId::ZERO, PathId::ONE];

    pub fn new(index: usize) -> Option<PathId> {
        match index {
            0 => Some(PathId::ZERO),
            1 => Some(PathId::ONE),
            _ => None,
        }
    }

    pub fn index(self) -> usize {
        self.0 as usize
    }

    pub fn other(self) -> PathId {
        PathId(1 - self.0)
    }
}

impl fmt::Display for PathId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "path{}", self.0)
    }
}

/// Converts a throughput in bytes per millisecond to Mbit/s.
pub fn bytes_per_ms_to_mbps(rate: f64) -> f64 {
    rate * 8.0 / 1000.0
}

/// Converts a [`std::time::Duration`] to fractional milliseconds.
pub fn duration_ms(d: std::time::Duration) -> f64 {
    d.as_secs_f64() * 1000.0
}

/// Converts fractional milliseconds to a [`std::time::Duration`], rounding
/// up to the next nanosecond so that an event is never scheduled early.
pub fn ms_to_duration_ceil(ms: f64) -> std::time::Duration {
    debug_assert!(ms >= 0.0 && ms.is_finite());
    std::time::Duration::from_nanos((ms * 1e6).ceil() as u64)
}
