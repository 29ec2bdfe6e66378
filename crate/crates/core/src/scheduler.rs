//! Chunk scheduling across the two paths.
//!
//! Each path has at most one range request in flight. Chunk sizes are
//! recomputed whenever a path completes a chunk, either by the ratio
//! baseline or by dynamic chunk size adjustment driven by an EWMA or
//! harmonic-mean bandwidth estimate. Completed chunks are released to the
//! playout buffer strictly in byte order; at most one completed chunk may
//! wait out of order.

use std::collections::VecDeque;
use std::fmt;
use std::str::FromStr;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::estimators::{
    Estimator, EstimatorError, EwmaState, HarmonicState, LastSampleState, ThroughputSample, DEFAULT_EWMA_ALPHA,
};
use crate::playout::FetchGate;
use crate::{PathId, KIB, MIB};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Policy {
    Ratio,
    Ewma,
    Harmonic,
}

impl Policy {
    pub const ALL: [Policy; 3] = [Policy::Harmonic, Policy::Ewma, Policy::Ratio];

    pub fn as_str(self) -> &'static str {
        match self {
            Policy::Ratio => "ratio",
            Policy::Ewma => "ewma",
            Policy::Harmonic => "harmonic",
        }
    }
}

impl fmt::Display for Policy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Policy {
    type Err = SchedulerError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "ratio" => Ok(Policy::Ratio),
            "ewma" => Ok(Policy::Ewma),
            "harmonic" => Ok(Policy::Harmonic),
            _ => Err(SchedulerError::UnknownPolicy(s.to_string())),
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SchedulerError {
    #[error("unknown scheduling policy {0:?}")]
    UnknownPolicy(String),
    #[error("invalid scheduler config: {0}")]
    InvalidConfig(String),
    #[error("{0} already has a range request in flight")]
    PathBusy(PathId),
    #[error("{0} is not available for scheduling")]
    PathUnavailable(PathId),
    #[error("completion for {range} on {path} does not match any in-flight request")]
    NotInFlight { path: PathId, range: ByteRange },
    #[error("range {range} was already released")]
    DuplicateCompletion { range: ByteRange },
    #[error("completing {range} would park a second out-of-order chunk")]
    SecondParkedChunk { range: ByteRange },
    #[error(transparent)]
    Estimator(#[from] EstimatorError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SchedulerConfig {
    pub policy: Policy,
    /// Initial chunk size B, in bytes.
    pub base_chunk: u64,
    pub min_chunk: u64,
    pub max_chunk: u64,
    /// Throughput variation fraction.
    pub delta: f64,
    pub ewma_alpha: f64,
}

impl Default for SchedulerConfig {
    fn default() -> Self {
        SchedulerConfig {
            policy: Policy::Harmonic,
            base_chunk: 256 * KIB,
            min_chunk: 16 * KIB,
            max_chunk: 8 * MIB,
            delta: 0.05,
            ewma_alpha: DEFAULT_EWMA_ALPHA,
        }
    }
}

impl SchedulerConfig {
    pub fn with_policy(policy: Policy) -> Self {
        SchedulerConfig { policy, ..Default::default() }
    }

    pub fn validate(&self) -> Result<(), SchedulerError> {
        let bad = |msg: String| Err(SchedulerError::InvalidConfig(msg));
        if self.min_chunk == 0 {
            return bad("min_chunk must be positive".into());
        }
        if !(self.min_chunk <= self.base_chunk && self.base_chunk <= self.max_chunk) {
            return bad(format!(
                "need min_chunk <= base_chunk <= max_chunk, got {} / {} / {}",
                self.min_chunk, self.base_chunk, self.max_chunk
            ));
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return bad(format!("delta must lie in (0, 1), got {}", self.delta));
        }
        if !(0.0..=1.0).contains(&self.ewma_alpha) {
            return bad(format!("ewma_alpha must lie in [0, 1], got {}", self.ewma_alpha));
        }
        Ok(())
    }

    fn new_estimator(&self) -> Estimator {
        match self.policy {
            Policy::Ratio => Estimator::LastSample(LastSampleState::new()),
            Policy::Ewma => Estimator::Ewma(EwmaState::new(self.ewma_alpha).expect("validated alpha")),
            Policy::Harmonic => Estimator::Harmonic(HarmonicState::new()),
        }
    }
}

/// Inputs to one dynamic chunk size adjustment for path `path`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DcsaInput {
    pub path: PathId,
    pub est_self: Option<f64>,
    pub est_other: Option<f64>,
    /// Throughput of the chunk that just completed on `path`.
    pub sample: f64,
    pub cur_self: u64,
    pub cur_other: u64,
}

/// `ceil`, except that values within 1e-9 (relative) of an integer snap to
/// that integer. Estimates carry rounding noise, and a ratio of exactly 3
/// must not become 4.
fn tolerant_ceil(x: f64) -> f64 {
    let r = x.round();
    if (x - r).abs() <= 1e-9 * x.abs().max(1.0) {
        r
    } else {
        x.ceil()
    }
}

/// Dynamic chunk size adjustment. Returns the next chunk size for
/// `input.path`.
///
/// Equal estimates make path 0 the slow path. When the other path has no
/// estimate yet there is nothing to compare against and the size is kept.
pub fn dcsa(input: &DcsaInput, cfg: &SchedulerConfig) -> u64 {
    let Some(est_self) = input.est_self else {
        return cfg.base_chunk;
    };
    let Some(est_other) = input.est_other else {
        return input.cur_self.min(cfg.max_chunk);
    };
    let slow = est_self < est_other || (est_self == est_other && input.path == PathId::ZERO);
    let next = if slow {
        if input.sample > (1.0 + cfg.delta) * est_self {
            input.cur_self.saturating_mul(2)
        } else if input.sample < (1.0 - cfg.delta) * est_self {
            input.cur_self.div_ceil(2).max(cfg.min_chunk)
        } else {
            input.cur_self
        }
    } else {
        let gamma = tolerant_ceil(est_self / est_other) as u64;
        gamma.saturating_mul(input.cur_other)
    };
    next.min(cfg.max_chunk)
}

/// Ratio baseline: the slower path fetches `B`, the faster path fetches
/// `B` scaled by the throughput ratio, rounded to the nearest KiB.
pub fn ratio_sizes(w_slow: f64, w_fast: f64, cfg: &SchedulerConfig) -> (u64, u64) {
    debug_assert!(w_slow > 0.0 && w_fast >= w_slow);
    let scaled = w_fast / w_slow * cfg.base_chunk as f64;
    let kib = (scaled / KIB as f64).round().max(1.0);
    let fast = ((kib as u64).saturating_mul(KIB)).min(cfg.max_chunk);
    (cfg.base_chunk, fast)
}

/// Half-open byte range `[start, start + len)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ByteRange {
    pub start: u64,
    pub len: u64,
}

impl ByteRange {
    pub fn new(start: u64, len: u64) -> Self {
        ByteRange { start, len }
    }

    pub fn end(&self) -> u64 {
        self.start + self.len
    }

    /// Value for an HTTP `Range` header (inclusive end).
    pub fn header_value(&self) -> String {
        format!("bytes={}-{}", self.start, self.end() - 1)
    }
}

impl fmt::Display for ByteRange {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{}, {})", self.start, self.end())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChunkAssignment {
    pub path_id: PathId,
    /// Index of the server within the path's server list.
    pub source_id: usize,
    pub range: ByteRange,
    /// Ordinal of the chunk within the file; a reissued range keeps its ordinal.
    pub sequence: u64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PathState {
    pub path_id: PathId,
    pub chunk_size: u64,
    pub estimator: Estimator,
    pub bytes_delivered: u64,
    pub in_flight: Option<ChunkAssignment>,
    pub available_since: Option<Duration>,
    pub alive: bool,
}

impl PathState {
    fn new(path_id: PathId, cfg: &SchedulerConfig) -> Self {
        PathState {
            path_id,
            chunk_size: cfg.base_chunk,
            estimator: cfg.new_estimator(),
            bytes_delivered: 0,
            in_flight: None,
            available_since: None,
            alive: true,
        }
    }

    pub fn busy(&self) -> bool {
        self.in_flight.is_some()
    }

    pub fn schedulable(&self) -> bool {
        self.alive && self.available_since.is_some()
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ReassemblyState {
    pub next_in_order: u64,
    pub parked: Option<ByteRange>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DeferReason {
    /// The playout buffer is full.
    FetchPaused,
    /// Another completion could only park a second out-of-order chunk.
    OutOfOrderLimit,
    /// Every byte has been assigned.
    FullyAssigned,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Decision {
    Assign(ChunkAssignment),
    Defer(DeferReason),
}

/// Result of a completion: the ranges released in order (possibly empty)
/// and the path's next chunk size.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Completion {
    pub released: Vec<ByteRange>,
    pub chunk_size: u64,
}

impl Completion {
    pub fn released_bytes(&self) -> u64 {
        self.released.iter().map(|r| r.len).sum()
    }
}

#[derive(Debug, Clone)]
pub struct Scheduler {
    config: SchedulerConfig,
    file_size: u64,
    paths: [PathState; 2],
    reassembly: ReassemblyState,
    high_water: u64,
    reissue: VecDeque<(ByteRange, u64)>,
    next_sequence: u64,
}

impl Scheduler {
    pub fn new(config: SchedulerConfig, file_size: u64) -> Result<Self, SchedulerError> {
        config.validate()?;
        Ok(Scheduler {
            paths: [PathState::new(PathId::ZERO, &config), PathState::new(PathId::ONE, &config)],
            config,
            file_size,
            reassembly: ReassemblyState::default(),
            high_water: 0,
            reissue: VecDeque::new(),
            next_sequence: 0,
        })
    }

    pub fn config(&self) -> &SchedulerConfig {
        &self.config
    }

    pub fn file_size(&self) -> u64 {
        self.file_size
    }

    pub fn path(&self, path: PathId) -> &PathState {
        &self.paths[path.index()]
    }

    pub fn reassembly(&self) -> ReassemblyState {
        self.reassembly
    }

    /// First byte never handed out to any path.
    pub fn high_water(&self) -> u64 {
        self.high_water
    }

    pub fn pending_reissues(&self) -> usize {
        self.reissue.len()
    }

    pub fn mark_available(&mut self, path: PathId, at: Duration) {
        let p = &mut self.paths[path.index()];
        if p.available_since.is_none() {
            p.available_since = Some(at);
        }
    }

    /// Takes a path out of service for the rest of the session. Any range
    /// it still had in flight goes back into the reissue queue.
    pub fn mark_dead(&mut self, path: PathId) {
        let p = &mut self.paths[path.index()];
        p.alive = false;
        if let Some(a) = p.in_flight.take() {
            self.reissue.push_front((a.range, a.sequence));
        }
    }

    pub fn fully_assigned(&self) -> bool {
        self.high_water >= self.file_size && self.reissue.is_empty()
    }

    pub fn is_complete(&self) -> bool {
        self.reassembly.next_in_order >= self.file_size
    }

    fn candidate(&self, path: PathId) -> Option<(ByteRange, u64, bool)> {
        if let Some(&(range, seq)) = self.reissue.front() {
            return Some((range, seq, true));
        }
        if self.high_water >= self.file_size {
            return None;
        }
        let len = self.paths[path.index()].chunk_size.min(self.file_size - self.high_water);
        Some((ByteRange::new(self.high_water, len), self.next_sequence, false))
    }

    /// Decides what `path` fetches next.
    pub fn next_assignment(
        &mut self,
        path: PathId,
        gate: FetchGate,
        source_id: usize,
    ) -> Result<Decision, SchedulerError> {
        let p = &self.paths[path.index()];
        if !p.schedulable() {
            return Err(SchedulerError::PathUnavailable(path));
        }
        if p.busy() {
            return Err(SchedulerError::PathBusy(path));
        }
        let Some((range, sequence, reissued)) = self.candidate(path) else {
            return Ok(Decision::Defer(DeferReason::FullyAssigned));
        };
        // A reissue finishes a retrieval that was already under way, so it
        // is not held back by a full buffer.
        if gate == FetchGate::FetchPaused && !reissued {
            return Ok(Decision::Defer(DeferReason::FetchPaused));
        }
        if self.reassembly.parked.is_some() && range.start != self.reassembly.next_in_order {
            return Ok(Decision::Defer(DeferReason::OutOfOrderLimit));
        }
        if reissued {
            self.reissue.pop_front();
        } else {
            self.high_water = range.end();
            self.next_sequence += 1;
        }
        let assignment = ChunkAssignment { path_id: path, source_id, range, sequence };
        self.paths[path.index()].in_flight = Some(assignment);
        Ok(Decision::Assign(assignment))
    }

    fn next_chunk_size(&self, path: PathId, sample: f64) -> u64 {
        let me = &self.paths[path.index()];
        let other = &self.paths[path.other().index()];
        match self.config.policy {
            Policy::Ratio => match other.estimator.estimate() {
                None => self.config.base_chunk,
                Some(w_other) => {
                    let slow = sample < w_other || (sample == w_other && path == PathId::ZERO);
                    if slow {
                        self.config.base_chunk
                    } else {
                        ratio_sizes(w_other, sample, &self.config).1
                    }
                }
            },
            Policy::Ewma | Policy::Harmonic => dcsa(
                &DcsaInput {
                    path,
                    est_self: me.estimator.estimate(),
                    est_other: other.estimator.estimate(),
                    sample,
                    cur_self: me.chunk_size,
                    cur_other: other.chunk_size,
                },
                &self.config,
            ),
        }
    }

    /// Records a completed range request: updates the path's estimator and
    /// chunk size, then releases whatever is now contiguous.
    pub fn on_chunk_complete(
        &mut self,
        assignment: &ChunkAssignment,
        sample: &ThroughputSample,
    ) -> Result<Completion, SchedulerError> {
        let path = assignment.path_id;
        let range = assignment.range;
        if range.end() <= self.reassembly.next_in_order || self.reassembly.parked == Some(range) {
            return Err(SchedulerError::DuplicateCompletion { range });
        }
        if self.paths[path.index()].in_flight.as_ref() != Some(assignment) {
            return Err(SchedulerError::NotInFlight { path, range });
        }
        let in_order = range.start == self.reassembly.next_in_order;
        if !in_order && self.reassembly.parked.is_some() {
            return Err(SchedulerError::SecondParkedChunk { range });
        }

        let w = sample.throughput();
        let chunk_size = self.next_chunk_size(path, w);
        let p = &mut self.paths[path.index()];
        p.estimator.update(w)?;
        p.chunk_size = chunk_size;
        p.bytes_delivered += range.len;
        p.in_flight = None;

        let mut released = Vec::new();
        if in_order {
            released.push(range);
            self.reassembly.next_in_order = range.end();
            if let Some(parked) = self.reassembly.parked {
                if parked.start == self.reassembly.next_in_order {
                    released.push(parked);
                    self.reassembly.next_in_order = parked.end();
                    self.reassembly.parked = None;
                }
            }
        } else {
            self.reassembly.parked = Some(range);
        }
        Ok(Completion { released, chunk_size })
    }

    /// Records a failed range request. The range is queued for reissue and
    /// the path becomes idle.
    pub fn on_chunk_failed(&mut self, assignment: &ChunkAssignment) -> Result<(), SchedulerError> {
        let p = &mut self.paths[assignment.path_id.index()];
        if p.in_flight.as_ref() != Some(assignment) {
            return Err(SchedulerError::NotInFlight { path: assignment.path_id, range: assignment.range });
        }
        p.in_flight = None;
        self.reissue.push_front((assignment.range, assignment.sequence));
        Ok(())
    }

    /// After a server failure, hands the identical byte range to `target`
    /// (the failed path's replacement server, or the surviving path). The
    /// range stays queued when `target` is busy or cannot take it yet.
    pub fn resume_after_failover(
        &mut self,
        failed: Option<&ChunkAssignment>,
        target: PathId,
        source_id: usize,
    ) -> Result<Option<ChunkAssignment>, SchedulerError> {
        let Some(failed) = failed else {
            return Ok(None);
        };
        let still_in_flight = self.paths[failed.path_id.index()].in_flight.as_ref() == Some(failed);
        if still_in_flight {
            self.on_chunk_failed(failed)?;
        }
        let t = &self.paths[target.index()];
        if !t.schedulable() || t.busy() {
            return Ok(None);
        }
        match self.next_assignment(target, FetchGate::FetchAllowed, source_id)? {
            Decision::Assign(a) if a.range == failed.range => Ok(Some(a)),
            Decision::Assign(a) => {
                // Cannot happen: the reissue queue is served first.
                unreachable!("reissue of {} produced {}", failed.range, a.range)
            }
            Decision::Defer(_) => Ok(None),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg() -> SchedulerConfig {
        SchedulerConfig::default()
    }

    fn slow(est: f64, sample: f64, cur: u64) -> u64 {
        dcsa(
            &DcsaInput {
                path: PathId::ZERO,
                est_self: Some(est),
                est_other: Some(30.0),
                sample,
                cur_self: cur,
                cur_other: 256 * KIB,
            },
            &cfg(),
        )
    }

    #[test]
    fn dcsa_spec_examples() {
        let unset = DcsaInput {
            path: PathId::ONE,
            est_self: None,
            est_other: Some(5.0),
            sample: 9.0,
            cur_self: 64 * KIB,
            cur_other: 64 * KIB,
        };
        assert_eq!(dcsa(&unset, &cfg()), 256 * KIB);
        assert_eq!(slow(10.0, 12.0, 256 * KIB), 512 * KIB);
        assert_eq!(slow(10.0, 9.0, 24 * KIB), 16 * KIB);
        assert_eq!(slow(10.0, 10.2, 128 * KIB), 128 * KIB);
        let fast = DcsaInput {
            path: PathId::ONE,
            est_self: Some(25.0),
            est_other: Some(10.0),
            sample: 25.0,
            cur_self: 256 * KIB,
            cur_other: 64 * KIB,
        };
        assert_eq!(dcsa(&fast, &cfg()), 192 * KIB);
    }

    #[test]
    fn dcsa_tie_makes_path_zero_slow() {
        let mk = |path| DcsaInput {
            path,
            est_self: Some(10.0),
            est_other: Some(10.0),
            sample: 12.0,
            cur_self: 64 * KIB,
            cur_other: 96 * KIB,
        };
        // path 0 takes the slow branch and doubles
        assert_eq!(dcsa(&mk(PathId::ZERO), &cfg()), 128 * KIB);
        // path 1 takes the fast branch with gamma = 1
        assert_eq!(dcsa(&mk(PathId::ONE), &cfg()), 96 * KIB);
    }

    #[test]
    fn dcsa_without_peer_estimate_keeps_size() {
        let input = DcsaInput {
            path: PathId::ZERO,
            est_self: Some(10.0),
            est_other: None,
            sample: 50.0,
            cur_self: 64 * KIB,
            cur_other: 256 * KIB,
        };
        assert_eq!(dcsa(&input, &cfg()), 64 * KIB);
    }

    #[test]
    fn gamma_snaps_near_integer_ratios() {
        assert_eq!(tolerant_ceil(3.0000000000000004), 3.0);
        assert_eq!(tolerant_ceil(2.5), 3.0);
        assert_eq!(tolerant_ceil(2.000001), 3.0);
    }

    #[test]
    fn ratio_examples() {
        let c = cfg();
        assert_eq!(ratio_sizes(10.0, 10.0, &c), (256 * KIB, 256 * KIB));
        assert_eq!(ratio_sizes(10.0, 25.0, &c), (256 * KIB, 640 * KIB));
        assert_eq!(ratio_sizes(10.0, 10_000.0, &c), (256 * KIB, 8 * MIB));
    }

    #[test]
    fn config_validation() {
        assert!(cfg().validate().is_ok());
        let mut c = cfg();
        c.min_chunk = 512 * KIB;
        assert!(c.validate().is_err());
        let mut c = cfg();
        c.delta = 1.0;
        assert!(c.validate().is_err());
        assert_eq!("Harmonic".parse::<Policy>().unwrap(), Policy::Harmonic);
        assert!("kalman".parse::<Policy>().is_err());
    }

    fn ready(file: u64) -> Scheduler {
        let mut s = Scheduler::new(cfg(), file).unwrap();
        s.mark_available(PathId::ZERO, Duration::ZERO);
        s.mark_available(PathId::ONE, Duration::ZERO);
        s
    }

    fn assign(s: &mut Scheduler, p: PathId) -> ChunkAssignment {
        match s.next_assignment(p, FetchGate::FetchAllowed, 0).unwrap() {
            Decision::Assign(a) => a,
            d => panic!("expected assignment, got {d:?}"),
        }
    }

    fn sample(a: &ChunkAssignment) -> ThroughputSample {
        ThroughputSample::new(a.path_id, a.range.len, 100.0).unwrap()
    }

    #[test]
    fn first_assignment_starts_at_zero() {
        let mut s = ready(4 * MIB);
        let a = assign(&mut s, PathId::ZERO);
        assert_eq!(a.range, ByteRange::new(0, 256 * KIB));
        assert_eq!(a.sequence, 0);
    }

    #[test]
    fn paused_gate_defers() {
        let mut s = ready(4 * MIB);
        assert_eq!(
            s.next_assignment(PathId::ZERO, FetchGate::FetchPaused, 0).unwrap(),
            Decision::Defer(DeferReason::FetchPaused)
        );
    }

    #[test]
    fn busy_and_unavailable_paths_are_errors() {
        let mut s = Scheduler::new(cfg(), MIB).unwrap();
        assert_eq!(
            s.next_assignment(PathId::ZERO, FetchGate::FetchAllowed, 0),
            Err(SchedulerError::PathUnavailable(PathId::ZERO))
        );
        s.mark_available(PathId::ZERO, Duration::ZERO);
        assign(&mut s, PathId::ZERO);
        assert_eq!(
            s.next_assignment(PathId::ZERO, FetchGate::FetchAllowed, 0),
            Err(SchedulerError::PathBusy(PathId::ZERO))
        );
    }

    #[test]
    fn reassembly_in_order_park_and_drain() {
        let mut s = ready(4 * MIB);
        let a0 = assign(&mut s, PathId::ZERO); // [0, 256K)
        let a1 = assign(&mut s, PathId::ONE); // [256K, 512K)
        let c1 = s.on_chunk_complete(&a1, &sample(&a1)).unwrap();
        assert!(c1.released.is_empty());
        assert_eq!(s.reassembly().parked, Some(a1.range));
        let c0 = s.on_chunk_complete(&a0, &sample(&a0)).unwrap();
        assert_eq!(c0.released_bytes(), 512 * KIB);
        assert_eq!(s.reassembly().next_in_order, 512 * KIB);
        assert_eq!(s.reassembly().parked, None);
    }

    #[test]
    fn in_order_completion_releases_immediately() {
        let mut s = ready(4 * MIB);
        let a0 = assign(&mut s, PathId::ZERO);
        let c = s.on_chunk_complete(&a0, &sample(&a0)).unwrap();
        assert_eq!(c.released, vec![ByteRange::new(0, 256 * KIB)]);
        assert_eq!(s.reassembly().next_in_order, 256 * KIB);
    }

    #[test]
    fn parked_chunk_blocks_its_path() {
        let mut s = ready(4 * MIB);
        let a0 = assign(&mut s, PathId::ZERO);
        let a1 = assign(&mut s, PathId::ONE);
        s.on_chunk_complete(&a1, &sample(&a1)).unwrap();
        // path 1 would fetch chunk k+2, which could also land before chunk k
        assert_eq!(
            s.next_assignment(PathId::ONE, FetchGate::FetchAllowed, 0).unwrap(),
            Decision::Defer(DeferReason::OutOfOrderLimit)
        );
        s.on_chunk_complete(&a0, &sample(&a0)).unwrap();
        assign(&mut s, PathId::ONE);
    }

    #[test]
    fn duplicate_completion_is_rejected() {
        let mut s = ready(4 * MIB);
        let a0 = assign(&mut s, PathId::ZERO);
        s.on_chunk_complete(&a0, &sample(&a0)).unwrap();
        assert_eq!(
            s.on_chunk_complete(&a0, &sample(&a0)),
            Err(SchedulerError::DuplicateCompletion { range: a0.range })
        );
        let a1 = assign(&mut s, PathId::ONE);
        let a0b = assign(&mut s, PathId::ZERO);
        s.on_chunk_complete(&a0b, &sample(&a0b)).unwrap();
        assert_eq!(
            s.on_chunk_complete(&a0b, &sample(&a0b)),
            Err(SchedulerError::DuplicateCompletion { range: a0b.range })
        );
        s.on_chunk_complete(&a1, &sample(&a1)).unwrap();
    }

    #[test]
    fn tail_is_issued_short() {
        let mut s = ready(256 * KIB + 100);
        assign(&mut s, PathId::ZERO);
        let tail = assign(&mut s, PathId::ONE);
        assert_eq!(tail.range, ByteRange::new(256 * KIB, 100));
        assert_eq!(
            s.next_assignment(PathId::ZERO, FetchGate::FetchAllowed, 0),
            Err(SchedulerError::PathBusy(PathId::ZERO))
        );
        assert!(s.fully_assigned());
    }

    #[test]
    fn failover_reissues_identical_range() {
        let mut s = ready(4 * MIB);
        let a0 = assign(&mut s, PathId::ZERO);
        let a1 = assign(&mut s, PathId::ONE);
        s.on_chunk_complete(&a0, &sample(&a0)).unwrap();
        let a0b = assign(&mut s, PathId::ZERO); // [512K, 768K)
        assert_eq!(a0b.range, ByteRange::new(512 * KIB, 256 * KIB));
        // replacement server on the same path
        let r = s.resume_after_failover(Some(&a0b), PathId::ZERO, 1).unwrap().unwrap();
        assert_eq!(r.range, a0b.range);
        assert_eq!(r.sequence, a0b.sequence);
        assert_eq!(r.source_id, 1);
        // path 1 exhausted with its range pending: reissued on path 0 once idle
        s.mark_dead(PathId::ONE);
        assert_eq!(s.pending_reissues(), 1);
        assert_eq!(s.resume_after_failover(Some(&a1), PathId::ZERO, 1).unwrap(), None);
        s.on_chunk_complete(&r, &sample(&r)).unwrap();
        let again = assign(&mut s, PathId::ZERO);
        assert_eq!(again.range, a1.range);
        // vacuous case
        assert_eq!(s.resume_after_failover(None, PathId::ZERO, 0).unwrap(), None);
    }

    #[test]
    fn ratio_policy_uses_last_samples() {
        let mut c = cfg();
        c.policy = Policy::Ratio;
        let mut s = Scheduler::new(c, 64 * MIB).unwrap();
        s.mark_available(PathId::ZERO, Duration::ZERO);
        s.mark_available(PathId::ONE, Duration::ZERO);
        let a0 = assign(&mut s, PathId::ZERO);
        let a1 = assign(&mut s, PathId::ONE);
        // path 0 at 25 B/ms, path 1 at 10 B/ms
        let c0 = s
            .on_chunk_complete(
                &a0,
                &ThroughputSample::new(PathId::ZERO, a0.range.len, a0.range.len as f64 / 25.0).unwrap(),
            )
            .unwrap();
        assert_eq!(c0.chunk_size, 256 * KIB); // no peer sample yet
        let c1 = s
            .on_chunk_complete(
                &a1,
                &ThroughputSample::new(PathId::ONE, a1.range.len, a1.range.len as f64 / 10.0).unwrap(),
            )
            .unwrap();
        assert_eq!(c1.chunk_size, 256 * KIB);
        let a0 = assign(&mut s, PathId::ZERO);
        let c0 = s
            .on_chunk_complete(
                &a0,
                &ThroughputSample::new(PathId::ZERO, a0.range.len, a0.range.len as f64 / 25.0).unwrap(),
            )
            .unwrap();
        assert_eq!(c0.chunk_size, 640 * KIB);
    }

    #[test]
    fn slow_path_doubles_until_cap() {
        // Path 1's estimate stays far above path 0's, so path 0 is the slow
        // path; every sample exceeds (1 + delta) times the current estimate.
        let c = cfg();
        let mut s = Scheduler::new(c, u64::MAX / 4).unwrap();
        s.mark_available(PathId::ZERO, Duration::ZERO);
        s.mark_available(PathId::ONE, Duration::ZERO);
        let a1 = assign(&mut s, PathId::ONE);
        s.on_chunk_complete(&a1, &ThroughputSample::new(PathId::ONE, a1.range.len, 1.0).unwrap()).unwrap();
        let mut expected = c.base_chunk;
        let mut rate = 10.0;
        let mut sizes = Vec::new();
        for _ in 0..12 {
            let a = assign(&mut s, PathId::ZERO);
            assert_eq!(a.range.len, expected);
            let est = s.path(PathId::ZERO).estimator.estimate();
            if let Some(e) = est {
                rate = e * 1.1;
            }
            let out = s
                .on_chunk_complete(
                    &a,
                    &ThroughputSample::new(PathId::ZERO, a.range.len, a.range.len as f64 / rate).unwrap(),
                )
                .unwrap();
            if est.is_some() {
                expected = (expected * 2).min(c.max_chunk);
            }
            assert_eq!(out.chunk_size, expected);
            sizes.push(out.chunk_size);
            // keep path 1 idle but far faster
        }
        assert_eq!(*sizes.last().unwrap(), c.max_chunk);
    }
}
