//! Just-in-time playout buffer.
//!
//! Media is constant-bitrate, so buffered media time is tracked as a byte
//! count and converted to seconds on demand. Consumption is computed in
//! integer nanosecond-bytes with a carried remainder: the identity
//! `ingested - consumed == buffered` holds exactly at every step.

use std::fmt;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

const NANOS_PER_SEC: u128 = 1_000_000_000;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PlayoutError {
    #[error("invalid buffer config: {0}")]
    InvalidConfig(String),
    #[error("ingesting {bytes} bytes would exceed the {media_bytes}-byte media object")]
    Overflow { bytes: u64, media_bytes: u64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BufferConfig {
    /// Media bitrate in bytes per second.
    pub bitrate: u64,
    /// Seconds buffered before playback starts.
    pub prebuffer_target: f64,
    /// Fetching resumes below this many buffered seconds.
    pub low_watermark: f64,
    /// Fetching pauses again once this many seconds are buffered.
    pub refill_target: f64,
}

impl Default for BufferConfig {
    fn default() -> Self {
        BufferConfig {
            // 2.5 Mbit/s, a typical 720p rate
            bitrate: 312_500,
            prebuffer_target: 40.0,
            low_watermark: 10.0,
            refill_target: 20.0,
        }
    }
}

impl BufferConfig {
    pub fn validate(&self) -> Result<(), PlayoutError> {
        if self.bitrate == 0 {
            return Err(PlayoutError::InvalidConfig("bitrate must be positive".into()));
        }
        let ok = self.low_watermark >= 0.0
            && self.low_watermark < self.refill_target
            && self.refill_target <= self.prebuffer_target
            && self.prebuffer_target.is_finite();
        if !ok {
            return Err(PlayoutError::InvalidConfig(format!(
                "need 0 <= low_watermark < refill_target <= prebuffer_target, got {} / {} / {}",
                self.low_watermark, self.refill_target, self.prebuffer_target
            )));
        }
        Ok(())
    }

    fn bytes_for(&self, seconds: f64) -> f64 {
        seconds * self.bitrate as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    PreBuffering,
    Steady,
    ReBuffering,
    Drained,
    Finished,
}

impl Phase {
    /// Whether the phase transition `from -> to` belongs to the phase graph.
    pub fn is_legal_transition(from: Phase, to: Phase) -> bool {
        use Phase::*;
        matches!(
            (from, to),
            (PreBuffering, Steady)
                | (Steady, ReBuffering)
                | (ReBuffering, Steady)
                | (Steady, Drained)
                | (ReBuffering, Drained)
                | (Drained, Steady)
                | (PreBuffering, Finished)
                | (Steady, Finished)
                | (ReBuffering, Finished)
                | (Drained, Finished)
        )
    }
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Phase::PreBuffering => "pre_buffering",
            Phase::Steady => "steady",
            Phase::ReBuffering => "re_buffering",
            Phase::Drained => "drained",
            Phase::Finished => "finished",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FetchGate {
    FetchAllowed,
    FetchPaused,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Transition {
    pub from: Phase,
    pub to: Phase,
    /// Buffer clock at the moment of the transition.
    pub at: Duration,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlayoutBuffer {
    config: BufferConfig,
    media_bytes: u64,
    phase: Phase,
    ingested: u64,
    consumed: u64,
    /// Remainder of `elapsed_ns * bitrate` not yet turned into a whole byte.
    carry: u128,
    clock: Duration,
    stall: Duration,
    drained: Duration,
}

impl PlayoutBuffer {
    pub fn new(config: BufferConfig, media_bytes: u64) -> Result<Self, PlayoutError> {
        config.validate()?;
        let phase = if media_bytes == 0 { Phase::Finished } else { Phase::PreBuffering };
        Ok(PlayoutBuffer {
            config,
            media_bytes,
            phase,
            ingested: 0,
            consumed: 0,
            carry: 0,
            clock: Duration::ZERO,
            stall: Duration::ZERO,
            drained: Duration::ZERO,
        })
    }

    pub fn config(&self) -> &BufferConfig {
        &self.config
    }

    pub fn phase(&self) -> Phase {
        self.phase
    }

    pub fn clock(&self) -> Duration {
        self.clock
    }

    pub fn buffered_bytes(&self) -> u64 {
        self.ingested - self.consumed
    }

    /// Buffered media in seconds.
    pub fn buffered(&self) -> f64 {
        self.buffered_bytes() as f64 / self.config.bitrate as f64
    }

    pub fn ingested_bytes(&self) -> u64 {
        self.ingested
    }

    pub fn consumed_bytes(&self) -> u64 {
        self.consumed
    }

    pub fn media_bytes(&self) -> u64 {
        self.media_bytes
    }

    /// Time spent not playing: before the first start plus any drained time.
    pub fn stall_time(&self) -> Duration {
        self.stall
    }

    /// Time spent drained mid-stream.
    pub fn drained_time(&self) -> Duration {
        self.drained
    }

    pub fn all_released(&self) -> bool {
        self.ingested >= self.media_bytes
    }

    pub fn fetch_gate(&self) -> FetchGate {
        match self.phase {
            Phase::PreBuffering | Phase::ReBuffering | Phase::Drained => FetchGate::FetchAllowed,
            Phase::Steady | Phase::Finished => FetchGate::FetchPaused,
        }
    }

    fn enter(&mut self, to: Phase, out: &mut Vec<Transition>) {
        debug_assert!(Phase::is_legal_transition(self.phase, to), "{} -> {}", self.phase, to);
        out.push(Transition { from: self.phase, to, at: self.clock });
        self.phase = to;
    }

    fn below_low(&self) -> bool {
        (self.buffered_bytes() as f64) < self.config.bytes_for(self.config.low_watermark)
    }

    /// Adds `bytes` of in-order media.
    pub fn ingest(&mut self, bytes: u64) -> Result<Vec<Transition>, PlayoutError> {
        if self.ingested + bytes > self.media_bytes {
            return Err(PlayoutError::Overflow { bytes, media_bytes: self.media_bytes });
        }
        self.ingested += bytes;
        let mut out = Vec::new();
        let buffered = self.buffered_bytes() as f64;
        match self.phase {
            Phase::PreBuffering => {
                if buffered > self.config.bytes_for(self.config.prebuffer_target) || self.all_released() {
                    self.enter(Phase::Steady, &mut out);
                }
            }
            Phase::ReBuffering => {
                if buffered >= self.config.bytes_for(self.config.refill_target) {
                    self.enter(Phase::Steady, &mut out);
                }
            }
            Phase::Drained => {
                if buffered >= self.config.bytes_for(self.config.refill_target) || self.all_released() {
                    self.enter(Phase::Steady, &mut out);
                }
            }
            Phase::Steady | Phase::Finished => {}
        }
        // Media shorter than the low watermark can start below it.
        if self.phase == Phase::Steady && self.below_low() {
            self.enter(Phase::ReBuffering, &mut out);
        }
        Ok(out)
    }

    fn bytes_in(&self, elapsed: Duration) -> (u128, u128) {
        let num = elapsed.as_nanos() * self.config.bitrate as u128 + self.carry;
        (num / NANOS_PER_SEC, num % NANOS_PER_SEC)
    }

    /// Shortest time after which at least `bytes` more bytes are consumed.
    fn time_to_consume(&self, bytes: u64) -> Duration {
        let need = (bytes as u128 * NANOS_PER_SEC).saturating_sub(self.carry);
        Duration::from_nanos(need.div_ceil(self.config.bitrate as u128) as u64)
    }

    /// Advances the playback clock by `elapsed`.
    pub fn consume(&mut self, elapsed: Duration) -> Vec<Transition> {
        let mut out = Vec::new();
        match self.phase {
            Phase::Finished => self.clock += elapsed,
            Phase::PreBuffering | Phase::Drained => {
                self.clock += elapsed;
                self.stall += elapsed;
                if self.phase == Phase::Drained {
                    self.drained += elapsed;
                }
            }
            Phase::Steady | Phase::ReBuffering => {
                let buffered = self.buffered_bytes();
                let (whole, rem) = self.bytes_in(elapsed);
                if whole < buffered as u128 {
                    self.consumed += whole as u64;
                    self.carry = rem;
                    self.clock += elapsed;
                    if self.phase == Phase::Steady && self.below_low() {
                        self.enter(Phase::ReBuffering, &mut out);
                    }
                } else {
                    let to_empty = self.time_to_consume(buffered).min(elapsed);
                    self.consumed += buffered;
                    self.carry = 0;
                    self.clock += to_empty;
                    if self.phase == Phase::Steady && self.below_low() {
                        self.enter(Phase::ReBuffering, &mut out);
                    }
                    let rest = elapsed - to_empty;
                    if self.all_released() {
                        self.enter(Phase::Finished, &mut out);
                        self.clock += rest;
                    } else {
                        self.enter(Phase::Drained, &mut out);
                        self.clock += rest;
                        self.stall += rest;
                        self.drained += rest;
                    }
                }
            }
        }
        out
    }

    /// Time until consumption alone causes the next phase transition, if
    /// any is pending.
    pub fn next_transition_in(&self) -> Option<Duration> {
        let buffered = self.buffered_bytes();
        match self.phase {
            Phase::Steady => {
                let low = self.config.bytes_for(self.config.low_watermark);
                if low <= 0.0 {
                    return Some(self.time_to_consume(buffered));
                }
                // smallest level strictly below the watermark
                let target = low.ceil() as u64 - 1;
                Some(self.time_to_consume(buffered.saturating_sub(target)))
            }
            Phase::ReBuffering => Some(self.time_to_consume(buffered)),
            _ => None,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    // 1000 bytes per media second keeps the arithmetic readable
    fn cfg() -> BufferConfig {
        BufferConfig { bitrate: 1000, ..Default::default() }
    }

    fn secs(s: f64) -> u64 {
        (s * 1000.0).round() as u64
    }

    fn buffer_in(phase: Phase, buffered_s: f64) -> PlayoutBuffer {
        let mut b = PlayoutBuffer::new(cfg(), secs(1000.0)).unwrap();
        b.phase = phase;
        b.ingested = secs(buffered_s);
        b
    }

    #[test]
    fn prebuffer_ends_strictly_above_target() {
        let mut b = buffer_in(Phase::PreBuffering, 39.9);
        let t = b.ingest(secs(0.2)).unwrap();
        assert_eq!(t.len(), 1);
        assert_eq!(b.phase(), Phase::Steady);
        assert!((b.buffered() - 40.1).abs() < 1e-12);

        let mut b = buffer_in(Phase::PreBuffering, 39.0);
        b.ingest(secs(1.0)).unwrap();
        assert_eq!(b.phase(), Phase::PreBuffering, "exactly 40 s is not more than 40 s");
    }

    #[test]
    fn refill_reaches_target() {
        let mut b = buffer_in(Phase::ReBuffering, 19.0);
        b.ingest(secs(1.0)).unwrap();
        assert_eq!(b.phase(), Phase::Steady);
        assert_eq!(b.buffered(), 20.0);
    }

    #[test]
    fn ingest_zero_is_identity() {
        for phase in [Phase::PreBuffering, Phase::Steady, Phase::ReBuffering, Phase::Drained] {
            let mut b = buffer_in(phase, 15.0);
            let before = b.clone();
            assert!(b.ingest(0).unwrap().is_empty());
            assert_eq!(b, before);
        }
    }

    #[test]
    fn consume_crosses_low_watermark() {
        let mut b = buffer_in(Phase::Steady, 10.5);
        b.consume(Duration::from_millis(1000));
        assert_eq!(b.buffered(), 9.5);
        assert_eq!(b.phase(), Phase::ReBuffering);
    }

    #[test]
    fn consume_floors_at_zero_and_drains() {
        let mut b = buffer_in(Phase::Steady, 0.5);
        b.consume(Duration::from_millis(1000));
        assert_eq!(b.buffered_bytes(), 0);
        assert_eq!(b.phase(), Phase::Drained);
        assert_eq!(b.drained_time(), Duration::from_millis(500));
        b.consume(Duration::from_millis(250));
        assert_eq!(b.drained_time(), Duration::from_millis(750));
    }

    #[test]
    fn prebuffering_accrues_stall() {
        let mut b = buffer_in(Phase::PreBuffering, 3.0);
        b.consume(Duration::from_millis(500));
        assert_eq!(b.buffered(), 3.0);
        assert_eq!(b.stall_time(), Duration::from_millis(500));
        assert_eq!(b.drained_time(), Duration::ZERO);
    }

    #[test]
    fn fetch_gate_by_phase() {
        assert_eq!(buffer_in(Phase::PreBuffering, 0.0).fetch_gate(), FetchGate::FetchAllowed);
        assert_eq!(buffer_in(Phase::Steady, 35.0).fetch_gate(), FetchGate::FetchPaused);
        assert_eq!(buffer_in(Phase::ReBuffering, 12.0).fetch_gate(), FetchGate::FetchAllowed);
        assert_eq!(buffer_in(Phase::Drained, 0.0).fetch_gate(), FetchGate::FetchAllowed);
    }

    #[test]
    fn finishes_when_everything_is_played() {
        let mut b = PlayoutBuffer::new(cfg(), secs(5.0)).unwrap();
        b.ingest(secs(5.0)).unwrap();
        assert_eq!(b.phase(), Phase::ReBuffering, "short media starts below the low watermark");
        let t = b.consume(Duration::from_secs(6));
        assert_eq!(t.last().unwrap().to, Phase::Finished);
        assert_eq!(t.last().unwrap().at, Duration::from_secs(5));
        assert_eq!(b.clock(), Duration::from_secs(6));
    }

    #[test]
    fn next_transition_is_exact() {
        let mut b = PlayoutBuffer::new(BufferConfig { bitrate: 312_500, ..Default::default() }, 1 << 30).unwrap();
        b.ingest(312_500 * 41).unwrap();
        assert_eq!(b.phase(), Phase::Steady);
        let dt = b.next_transition_in().unwrap();
        let almost = dt - Duration::from_nanos(1);
        let mut probe = b.clone();
        probe.consume(almost);
        assert_eq!(probe.phase(), Phase::Steady);
        b.consume(dt);
        assert_eq!(b.phase(), Phase::ReBuffering);
    }

    #[test]
    fn rejects_bad_config_and_overflow() {
        let c = BufferConfig { low_watermark: 30.0, ..cfg() };
        assert!(PlayoutBuffer::new(c, 10).is_err());
        let mut b = PlayoutBuffer::new(cfg(), 10).unwrap();
        assert!(b.ingest(11).is_err());
    }
}
