//! Deterministic discrete-event simulation of a two-path session.
//!
//! Paths are modelled by a round-trip time, two handshake processing delays
//! and a piecewise-constant bandwidth trace. There is no packet-level
//! behaviour: a range request costs one RTT and then drains its bytes
//! through the trace. Each path becomes usable after its setup time and
//! the faster path starts fetching without waiting for the other.

use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::time::Duration;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::playout::BufferConfig;
use crate::scheduler::{ChunkAssignment, SchedulerConfig};
use crate::session::{EventLog, Session, SessionConfig, SessionError, SessionSummary};
use crate::{duration_ms, ms_to_duration_ceil, PathId};

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid path model: {0}")]
    InvalidPath(String),
    #[error("request at {start_ms} ms falls outside the bandwidth trace")]
    OutsideTrace { start_ms: f64 },
    #[error("bandwidth trace exhausted with {remaining} bytes still to transfer")]
    TraceExhausted { remaining: f64 },
    #[error("no path is enabled")]
    NoPaths,
    #[error(transparent)]
    Session(#[from] SessionError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TraceSegment {
    pub start_ms: f64,
    /// Bytes per millisecond.
    pub rate: f64,
}

/// Piecewise-constant bandwidth over time. The last segment runs until
/// `end_ms`, or forever when that is unset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BandwidthTrace {
    pub segments: Vec<TraceSegment>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub end_ms: Option<f64>,
}

impl BandwidthTrace {
    pub fn constant(rate: f64) -> Self {
        BandwidthTrace { segments: vec![TraceSegment { start_ms: 0.0, rate }], end_ms: None }
    }

    pub fn from_steps(steps: &[(f64, f64)]) -> Self {
        BandwidthTrace {
            segments: steps.iter().map(|&(start_ms, rate)| TraceSegment { start_ms, rate }).collect(),
            end_ms: None,
        }
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |m: String| Err(SimError::InvalidPath(m));
        if self.segments.is_empty() {
            return bad("bandwidth trace has no segments".into());
        }
        for w in self.segments.windows(2) {
            if w[1].start_ms <= w[0].start_ms {
                return bad(format!("trace segments out of order at {} ms", w[1].start_ms));
            }
        }
        if let Some(s) = self.segments.iter().find(|s| !(s.rate > 0.0 && s.rate.is_finite())) {
            return bad(format!("non-positive rate {} at {} ms", s.rate, s.start_ms));
        }
        if let Some(end) = self.end_ms {
            if end <= self.segments.last().unwrap().start_ms {
                return bad("trace ends before its last segment starts".into());
            }
        }
        Ok(())
    }

    /// A constant `base` rate interrupted by short bursts at `factor` times
    /// the base, each `spike_ms` long, with gaps drawn uniformly from
    /// `[0.5, 1.5] * mean_gap_ms`, up to `horizon_ms`.
    pub fn with_spikes(
        rng: &mut impl Rng,
        base: f64,
        factor: f64,
        spike_ms: f64,
        mean_gap_ms: f64,
        horizon_ms: f64,
    ) -> Self {
        let mut steps = vec![(0.0, base)];
        let mut t = rng.random_range(0.0..mean_gap_ms);
        while t < horizon_ms {
            steps.push((t, base * factor));
            steps.push((t + spike_ms, base));
            t += spike_ms + rng.random_range(0.5 * mean_gap_ms..1.5 * mean_gap_ms);
        }
        if steps.len() > 1 && steps[1].0 == 0.0 {
            steps.remove(0);
        }
        BandwidthTrace::from_steps(&steps)
    }

    /// Multiplies every segment rate by an independent factor drawn from
    /// `[0.9, 1.1]`.
    pub fn jitter(&mut self, rng: &mut impl Rng) {
        for s in &mut self.segments {
            s.rate *= rng.random_range(0.9..=1.1);
        }
    }

    fn segment_end(&self, i: usize) -> f64 {
        match self.segments.get(i + 1) {
            Some(next) => next.start_ms,
            None => self.end_ms.unwrap_or(f64::INFINITY),
        }
    }

    /// Time at which `bytes` starting to flow at `from_ms` have all drained.
    pub fn drain_time(&self, from_ms: f64, bytes: f64) -> Result<f64, SimError> {
        Ok(from_ms + self.drain_duration(from_ms, bytes)?)
    }

    /// Milliseconds needed to drain `bytes` starting at `from_ms`. Within a
    /// single segment this is exactly `bytes / rate`.
    pub fn drain_duration(&self, from_ms: f64, bytes: f64) -> Result<f64, SimError> {
        let first = self.segments.first().ok_or(SimError::OutsideTrace { start_ms: from_ms })?;
        if from_ms < first.start_ms || self.end_ms.is_some_and(|e| from_ms > e) {
            return Err(SimError::OutsideTrace { start_ms: from_ms });
        }
        if bytes <= 0.0 {
            return Ok(0.0);
        }
        let mut i = self.segments.partition_point(|s| s.start_ms <= from_ms) - 1;
        let mut t = from_ms;
        let mut elapsed = 0.0;
        let mut remaining = bytes;
        loop {
            let rate = self.segments[i].rate;
            let end = self.segment_end(i);
            let capacity = (end - t) * rate;
            if remaining <= capacity {
                return Ok(elapsed + remaining / rate);
            }
            remaining -= capacity;
            elapsed += end - t;
            t = end;
            i += 1;
            if i >= self.segments.len() {
                return Err(SimError::TraceExhausted { remaining });
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PathModel {
    /// Round-trip time R in milliseconds.
    pub rtt_ms: f64,
    /// Server-side key verification delay, milliseconds.
    pub delta1_ms: f64,
    /// Server-side key exchange delay, milliseconds.
    pub delta2_ms: f64,
    pub trace: BandwidthTrace,
    #[serde(default = "enabled_default")]
    pub enabled: bool,
}

fn enabled_default() -> bool {
    true
}

impl PathModel {
    pub fn constant(rtt_ms: f64, rate: f64) -> Self {
        PathModel { rtt_ms, delta1_ms: 0.0, delta2_ms: 0.0, trace: BandwidthTrace::constant(rate), enabled: true }
    }

    pub fn validate(&self) -> Result<(), SimError> {
        if !(self.rtt_ms >= 0.0 && self.delta1_ms >= 0.0 && self.delta2_ms >= 0.0) {
            return Err(SimError::InvalidPath("rtt and handshake delays must be non-negative".into()));
        }
        self.trace.validate()
    }
}

/// Connection setup milestones of one path, in milliseconds from session
/// start.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SetupTiming {
    /// Secure HTTP connection established.
    pub eta: f64,
    /// Object metadata fully received.
    pub psi: f64,
    /// First media byte from the content server.
    pub pi: f64,
}

pub fn setup_time(path: &PathModel) -> SetupTiming {
    let handshake = path.delta1_ms + path.delta2_ms;
    let eta = 4.0 * path.rtt_ms + handshake;
    let psi = 6.0 * path.rtt_ms + handshake;
    SetupTiming { eta, psi, pi: psi + eta }
}

/// Completion time of a range request of `range_len` bytes issued at
/// `start_ms`: one RTT of request latency, then the bytes drain through
/// the bandwidth trace.
pub fn chunk_transfer_time(path: &PathModel, range_len: u64, start_ms: f64) -> Result<f64, SimError> {
    Ok(start_ms + chunk_transfer_duration(path, range_len, start_ms)?)
}

/// Duration of the same request, computed without going through absolute
/// time so that equal requests on equal paths measure exactly equal.
pub fn chunk_transfer_duration(path: &PathModel, range_len: u64, start_ms: f64) -> Result<f64, SimError> {
    Ok(path.rtt_ms + path.trace.drain_duration(start_ms + path.rtt_ms, range_len as f64)?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimConfig {
    pub paths: [PathModel; 2],
    pub object_size: u64,
    pub scheduler: SchedulerConfig,
    pub buffer: BufferConfig,
    pub rng_seed: u64,
    /// Scale each trace segment by a seeded factor in [0.9, 1.1].
    #[serde(default)]
    pub jitter: bool,
    pub time_limit_ms: f64,
}

impl SimConfig {
    /// Same configuration with only `path` enabled.
    pub fn single_path(&self, path: PathId) -> SimConfig {
        let mut c = self.clone();
        c.paths[path.other().index()].enabled = false;
        c
    }

    /// Path models after jitter has been applied.
    pub fn effective_paths(&self) -> [PathModel; 2] {
        let mut paths = self.paths.clone();
        if self.jitter {
            let mut rng = ChaCha8Rng::seed_from_u64(self.rng_seed);
            for p in &mut paths {
                p.trace.jitter(&mut rng);
            }
        }
        paths
    }
}

#[derive(Debug, Clone)]
pub struct SimOutcome {
    pub log: EventLog,
    pub summary: SessionSummary,
    pub setup: [SetupTiming; 2],
}

#[derive(Debug, Clone, Copy)]
enum SimEvent {
    PathReady(PathId),
    ChunkDone { assignment: ChunkAssignment, elapsed_ms: f64 },
    PlayoutTick,
}

#[derive(Debug)]
struct Scheduled {
    at: Duration,
    seq: u64,
    event: SimEvent,
}

impl PartialEq for Scheduled {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}
impl Eq for Scheduled {}
impl PartialOrd for Scheduled {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Scheduled {
    // min-heap on (time, insertion order)
    fn cmp(&self, other: &Self) -> Ordering {
        (other.at, other.seq).cmp(&(self.at, self.seq))
    }
}

#[derive(Default)]
struct Queue {
    heap: BinaryHeap<Scheduled>,
    seq: u64,
}

impl Queue {
    fn push(&mut self, at: Duration, event: SimEvent) {
        self.seq += 1;
        self.heap.push(Scheduled { at, seq: self.seq, event });
    }
}

pub fn run(config: &SimConfig) -> Result<SimOutcome, SimError> {
    run_observed(config, |_| {})
}

/// Runs the simulation, calling `observe` with the session after every
/// processed event.
pub fn run_observed(config: &SimConfig, mut observe: impl FnMut(&Session)) -> Result<SimOutcome, SimError> {
    let paths = config.effective_paths();
    for p in &paths {
        p.validate()?;
    }
    if !paths.iter().any(|p| p.enabled) {
        return Err(SimError::NoPaths);
    }
    let mut session = Session::new(SessionConfig {
        scheduler: config.scheduler,
        buffer: config.buffer,
        object_size: config.object_size,
        playback_rate: 1.0,
    })?;
    let setup = [setup_time(&paths[0]), setup_time(&paths[1])];
    let limit = ms_to_duration_ceil(config.time_limit_ms.max(0.0));

    let mut queue = Queue::default();
    for path in PathId::BOTH {
        if paths[path.index()].enabled {
            queue.push(ms_to_duration_ceil(setup[path.index()].pi), SimEvent::PathReady(path));
        }
    }
    let mut pending_tick: Option<Duration> = None;
    let mut truncated = false;

    while let Some(Scheduled { at, event, .. }) = queue.heap.pop() {
        if at > limit {
            truncated = true;
            session.advance_to(limit);
            break;
        }
        session.advance_to(at);
        match event {
            SimEvent::PathReady(path) => session.path_ready(path),
            SimEvent::ChunkDone { assignment, elapsed_ms } => {
                session.complete(&assignment, elapsed_ms)?;
            }
            SimEvent::PlayoutTick => {
                if pending_tick == Some(at) {
                    pending_tick = None;
                }
            }
        }
        for path in PathId::BOTH {
            if let Some(a) = session.try_assign(path, 0)? {
                let start = duration_ms(session.now());
                // samples use the exact model time, not the quantized event time
                let elapsed_ms = chunk_transfer_duration(&paths[path.index()], a.range.len, start)?;
                let done = ms_to_duration_ceil(start + elapsed_ms).max(session.now());
                queue.push(done, SimEvent::ChunkDone { assignment: a, elapsed_ms });
            }
        }
        observe(&session);
        if session.is_finished() {
            break;
        }
        if let Some(deadline) = session.next_deadline() {
            if pending_tick != Some(deadline) {
                pending_tick = Some(deadline);
                queue.push(deadline, SimEvent::PlayoutTick);
            }
        }
    }
    if !session.is_finished() && !truncated {
        // Nothing left to happen but playback never finished.
        truncated = true;
    }
    let summary = session.summary(truncated);
    session.end(truncated);
    Ok(SimOutcome { log: session.into_log(), summary, setup })
}
