//! A download session: scheduler plus playout buffer behind one serialized
//! event interface.
//!
//! Both backends (the simulator and the HTTP transport) feed the session the
//! same events: a path became ready, a range request completed or failed, a
//! path died, time passed. The session answers with assignments and keeps an
//! [`EventLog`].

use std::io::{self, BufRead, Write};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::estimators::{EstimatorError, ThroughputSample};
use crate::playout::{BufferConfig, FetchGate, Phase, PlayoutBuffer, PlayoutError, Transition};
use crate::scheduler::{ByteRange, ChunkAssignment, Decision, Scheduler, SchedulerConfig, SchedulerError};
use crate::{duration_ms, PathId};

#[derive(Debug, Error)]
pub enum SessionError {
    #[error(transparent)]
    Scheduler(#[from] SchedulerError),
    #[error(transparent)]
    Playout(#[from] PlayoutError),
    #[error(transparent)]
    Estimator(#[from] EstimatorError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SessionConfig {
    pub scheduler: SchedulerConfig,
    pub buffer: BufferConfig,
    pub object_size: u64,
    /// Media seconds played per second of session time.
    pub playback_rate: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    SessionStart,
    PathReady,
    Assign,
    Complete,
    Fail,
    PathDown,
    PhaseChange,
    DownloadComplete,
    SessionEnd,
}

/// One line of the event log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventRecord {
    pub t_ms: f64,
    pub kind: EventKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub path: Option<PathId>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub range: Option<ByteRange>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sequence: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub server: Option<usize>,
    /// Buffered media seconds after the event.
    pub buffer_s: f64,
    /// Playout phase after the event.
    pub phase: Phase,
    /// The path's chunk size after the event.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub chunk_size: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub throughput: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub from_phase: Option<Phase>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub released_bytes: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EventLog {
    pub records: Vec<EventRecord>,
}

impl EventLog {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn iter(&self) -> std::slice::Iter<'_, EventRecord> {
        self.records.iter()
    }

    /// Writes one JSON object per line.
    pub fn write_jsonl<W: Write>(&self, mut w: W) -> io::Result<()> {
        for r in &self.records {
            serde_json::to_writer(&mut w, r)?;
            w.write_all(b"\n")?;
        }
        w.flush()
    }

    pub fn read_jsonl<R: BufRead>(r: R) -> io::Result<EventLog> {
        let mut records = Vec::new();
        for line in r.lines() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            records.push(serde_json::from_str(&line)?);
        }
        Ok(EventLog { records })
    }

    /// A log is complete when it ends with a session-end record.
    pub fn is_complete(&self) -> bool {
        self.records.last().is_some_and(|r| r.kind == EventKind::SessionEnd)
    }
}

/// Payload bytes per path, split by the playout phase in which each chunk
/// was assigned.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PhaseTraffic {
    pub prebuffer: [u64; 2],
    pub rebuffer: [u64; 2],
}

fn fraction_of_first(bytes: [u64; 2]) -> Option<f64> {
    let total = bytes[0] + bytes[1];
    (total > 0).then(|| bytes[0] as f64 / total as f64)
}

impl PhaseTraffic {
    pub fn prebuffer_fraction_path0(&self) -> Option<f64> {
        fraction_of_first(self.prebuffer)
    }

    pub fn rebuffer_fraction_path0(&self) -> Option<f64> {
        fraction_of_first(self.rebuffer)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionSummary {
    /// Time from session start until playback first started.
    pub prebuffer_download_ms: Option<f64>,
    /// Durations of completed refill (ON) periods.
    pub rebuffer_cycle_ms: Vec<f64>,
    pub traffic: PhaseTraffic,
    pub frac_path0_prebuffer: Option<f64>,
    pub frac_path0_rebuffer: Option<f64>,
    /// Mid-stream stall time (drained buffer).
    pub stall_ms: f64,
    pub download_complete_ms: Option<f64>,
    pub finished_ms: Option<f64>,
    pub chunks: [u64; 2],
    pub truncated: bool,
}

impl SessionSummary {
    pub fn mean_rebuffer_ms(&self) -> Option<f64> {
        if self.rebuffer_cycle_ms.is_empty() {
            None
        } else {
            Some(self.rebuffer_cycle_ms.iter().sum::<f64>() / self.rebuffer_cycle_ms.len() as f64)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Bucket {
    Prebuffer,
    Rebuffer,
}

#[derive(Debug, Clone)]
pub struct Session {
    scheduler: Scheduler,
    playout: PlayoutBuffer,
    playback_rate: f64,
    now: Duration,
    log: EventLog,
    traffic: PhaseTraffic,
    buckets: [Option<Bucket>; 2],
    chunks: [u64; 2],
    prebuffer_done: Option<Duration>,
    rebuffer_started: Option<Duration>,
    rebuffer_cycles: Vec<Duration>,
    download_done: Option<Duration>,
    finished_at: Option<Duration>,
    ended: bool,
}

impl Session {
    pub fn new(config: SessionConfig) -> Result<Self, SessionError> {
        let scheduler = Scheduler::new(config.scheduler, config.object_size)?;
        let playout = PlayoutBuffer::new(config.buffer, config.object_size)?;
        let mut s = Session {
            scheduler,
            playout,
            playback_rate: if config.playback_rate > 0.0 { config.playback_rate } else { 1.0 },
            now: Duration::ZERO,
            log: EventLog::default(),
            traffic: PhaseTraffic::default(),
            buckets: [None, None],
            chunks: [0, 0],
            prebuffer_done: None,
            rebuffer_started: None,
            rebuffer_cycles: Vec::new(),
            download_done: None,
            finished_at: None,
            ended: false,
        };
        s.push(EventKind::SessionStart, |r| r.note = Some(format!("object_size={}", config.object_size)));
        Ok(s)
    }

    pub fn scheduler(&self) -> &Scheduler {
        &self.scheduler
    }

    pub fn playout(&self) -> &PlayoutBuffer {
        &self.playout
    }

    pub fn now(&self) -> Duration {
        self.now
    }

    pub fn log(&self) -> &EventLog {
        &self.log
    }

    pub fn into_log(self) -> EventLog {
        self.log
    }

    pub fn fetch_gate(&self) -> FetchGate {
        self.playout.fetch_gate()
    }

    fn push(&mut self, kind: EventKind, fill: impl FnOnce(&mut EventRecord)) {
        let mut r = EventRecord {
            t_ms: duration_ms(self.now),
            kind,
            path: None,
            range: None,
            sequence: None,
            server: None,
            buffer_s: self.playout.buffered(),
            phase: self.playout.phase(),
            chunk_size: None,
            throughput: None,
            from_phase: None,
            released_bytes: None,
            note: None,
        };
        fill(&mut r);
        self.log.records.push(r);
    }

    fn session_time(&self, buffer_clock: Duration) -> Duration {
        // The buffer clock runs at `playback_rate` times session time, and
        // both started at zero.
        if self.playback_rate == 1.0 {
            buffer_clock
        } else {
            buffer_clock.div_f64(self.playback_rate)
        }
    }

    fn record_transitions(&mut self, transitions: Vec<Transition>) {
        for t in transitions {
            let at = self.session_time(t.at).min(self.now);
            match t.to {
                Phase::Steady => {
                    if t.from == Phase::PreBuffering && self.prebuffer_done.is_none() {
                        self.prebuffer_done = Some(at);
                    }
                    if t.from == Phase::ReBuffering {
                        if let Some(start) = self.rebuffer_started.take() {
                            self.rebuffer_cycles.push(at.saturating_sub(start));
                        }
                    }
                }
                Phase::ReBuffering => {
                    if !self.playout.all_released() {
                        self.rebuffer_started = Some(at);
                    }
                }
                Phase::Drained => {}
                Phase::Finished => {
                    self.rebuffer_started = None;
                    self.finished_at = Some(at);
                }
                Phase::PreBuffering => {}
            }
            let saved = self.now;
            self.now = at;
            self.push(EventKind::PhaseChange, |r| {
                r.from_phase = Some(t.from);
                r.phase = t.to;
            });
            self.now = saved;
        }
    }

    /// Moves the session clock forward to `now`, playing media meanwhile.
    pub fn advance_to(&mut self, now: Duration) {
        if now <= self.now {
            return;
        }
        let elapsed = now - self.now;
        let media = if self.playback_rate == 1.0 { elapsed } else { elapsed.mul_f64(self.playback_rate) };
        let transitions = self.playout.consume(media);
        self.now = now;
        self.record_transitions(transitions);
    }

    /// Session time at which consumption alone will next change phase.
    pub fn next_deadline(&self) -> Option<Duration> {
        let dt = self.playout.next_transition_in()?;
        let dt = if self.playback_rate == 1.0 { dt } else { dt.div_f64(self.playback_rate) };
        // never schedule in the past, and always make progress
        Some(self.now + dt.max(Duration::from_nanos(1)))
    }

    pub fn path_ready(&mut self, path: PathId) {
        self.scheduler.mark_available(path, self.now);
        self.push(EventKind::PathReady, |r| r.path = Some(path));
    }

    pub fn can_schedule(&self, path: PathId) -> bool {
        let p = self.scheduler.path(path);
        p.schedulable() && !p.busy()
    }

    /// Asks the scheduler for `path`'s next range. Returns `None` on defer
    /// or when the path cannot be scheduled right now.
    pub fn try_assign(&mut self, path: PathId, source_id: usize) -> Result<Option<ChunkAssignment>, SessionError> {
        if !self.can_schedule(path) {
            return Ok(None);
        }
        match self.scheduler.next_assignment(path, self.playout.fetch_gate(), source_id)? {
            Decision::Assign(a) => {
                self.note_assigned(&a);
                Ok(Some(a))
            }
            Decision::Defer(_) => Ok(None),
        }
    }

    fn note_assigned(&mut self, a: &ChunkAssignment) {
        self.buckets[a.path_id.index()] = Some(match self.playout.phase() {
            Phase::PreBuffering => Bucket::Prebuffer,
            _ => Bucket::Rebuffer,
        });
        let chunk = self.scheduler.path(a.path_id).chunk_size;
        self.push(EventKind::Assign, |r| {
            r.path = Some(a.path_id);
            r.range = Some(a.range);
            r.sequence = Some(a.sequence);
            r.server = Some(a.source_id);
            r.chunk_size = Some(chunk);
        });
    }

    /// Records a completed range request whose transfer took `elapsed_ms`
    /// as measured by the transport. Returns the ranges released to
    /// playout, in order.
    pub fn complete(&mut self, assignment: &ChunkAssignment, elapsed_ms: f64) -> Result<Vec<ByteRange>, SessionError> {
        let path = assignment.path_id;
        let sample = ThroughputSample::new(path, assignment.range.len, elapsed_ms.max(1e-6))?;
        let done = self.scheduler.on_chunk_complete(assignment, &sample)?;
        let released = done.released_bytes();
        match self.buckets[path.index()].take() {
            Some(Bucket::Prebuffer) => self.traffic.prebuffer[path.index()] += assignment.range.len,
            Some(Bucket::Rebuffer) | None => self.traffic.rebuffer[path.index()] += assignment.range.len,
        }
        self.chunks[path.index()] += 1;
        let transitions = self.playout.ingest(released)?;
        self.push(EventKind::Complete, |r| {
            r.path = Some(path);
            r.range = Some(assignment.range);
            r.sequence = Some(assignment.sequence);
            r.server = Some(assignment.source_id);
            r.chunk_size = Some(done.chunk_size);
            r.throughput = Some(sample.throughput());
            r.released_bytes = Some(released);
        });
        self.record_transitions(transitions);
        if self.scheduler.is_complete() && self.download_done.is_none() {
            self.download_done = Some(self.now);
            self.push(EventKind::DownloadComplete, |_| {});
        }
        Ok(done.released)
    }

    /// Records a failed range request. The range is queued for reissue.
    pub fn fail(&mut self, assignment: &ChunkAssignment, reason: &str) -> Result<(), SessionError> {
        self.scheduler.on_chunk_failed(assignment)?;
        self.buckets[assignment.path_id.index()] = None;
        self.push(EventKind::Fail, |r| {
            r.path = Some(assignment.path_id);
            r.range = Some(assignment.range);
            r.sequence = Some(assignment.sequence);
            r.server = Some(assignment.source_id);
            r.note = Some(reason.to_string());
        });
        Ok(())
    }

    /// Hands a failed range straight to `target` (replacement server or
    /// surviving path) when it is idle.
    pub fn resume_after_failover(
        &mut self,
        failed: Option<&ChunkAssignment>,
        target: PathId,
        source_id: usize,
    ) -> Result<Option<ChunkAssignment>, SessionError> {
        let a = self.scheduler.resume_after_failover(failed, target, source_id)?;
        if let Some(a) = &a {
            self.note_assigned(a);
        }
        Ok(a)
    }

    /// Takes `path` out of service; its in-flight range, if any, is queued
    /// for the surviving path.
    pub fn path_down(&mut self, path: PathId, reason: &str) {
        if let Some(a) = self.scheduler.path(path).in_flight {
            self.push(EventKind::Fail, |r| {
                r.path = Some(path);
                r.range = Some(a.range);
                r.sequence = Some(a.sequence);
                r.server = Some(a.source_id);
                r.note = Some(reason.to_string());
            });
        }
        self.scheduler.mark_dead(path);
        self.buckets[path.index()] = None;
        self.push(EventKind::PathDown, |r| {
            r.path = Some(path);
            r.note = Some(reason.to_string());
        });
    }

    pub fn is_download_complete(&self) -> bool {
        self.scheduler.is_complete()
    }

    pub fn is_finished(&self) -> bool {
        self.playout.phase() == Phase::Finished
    }

    /// Whether some path can still make progress.
    pub fn any_path_alive(&self) -> bool {
        PathId::BOTH.iter().any(|&p| self.scheduler.path(p).alive)
    }

    /// Closes the log. Further events are not expected.
    pub fn end(&mut self, truncated: bool) {
        if !self.ended {
            self.ended = true;
            self.push(EventKind::SessionEnd, |r| {
                if truncated {
                    r.note = Some("truncated".into());
                }
            });
        }
    }

    pub fn summary(&self, truncated: bool) -> SessionSummary {
        SessionSummary {
            prebuffer_download_ms: self.prebuffer_done.map(duration_ms),
            rebuffer_cycle_ms: self.rebuffer_cycles.iter().copied().map(duration_ms).collect(),
            traffic: self.traffic,
            frac_path0_prebuffer: self.traffic.prebuffer_fraction_path0(),
            frac_path0_rebuffer: self.traffic.rebuffer_fraction_path0(),
            stall_ms: duration_ms(self.session_time(self.playout.drained_time())),
            download_complete_ms: self.download_done.map(duration_ms),
            finished_ms: self.finished_at.map(duration_ms),
            chunks: self.chunks,
            truncated,
        }
    }
}
