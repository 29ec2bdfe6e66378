//! Per-path bandwidth estimators.
//!
//! Throughput is tracked in bytes per millisecond. Every estimator is seeded
//! directly by its first sample.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::PathId;

/// Default EWMA weight on the previous estimate.
pub const DEFAULT_EWMA_ALPHA: f64 = 0.9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EstimatorError {
    #[error("throughput must be positive and finite, got {0}")]
    NonPositiveThroughput(f64),
    #[error("invalid sample: {bytes} bytes in {duration_ms} ms")]
    InvalidSample { bytes: u64, duration_ms: f64 },
    #[error("EWMA weight must lie in [0, 1], got {0}")]
    InvalidAlpha(f64),
}

fn check_rate(throughput: f64) -> Result<f64, EstimatorError> {
    if throughput.is_finite() && throughput > 0.0 {
        Ok(throughput)
    } else {
        Err(EstimatorError::NonPositiveThroughput(throughput))
    }
}

/// One completed range request: `bytes` delivered in `duration_ms`, measured
/// from request issuance to the last payload byte.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThroughputSample {
    path: PathId,
    bytes: u64,
    duration_ms: f64,
}

impl ThroughputSample {
    pub fn new(path: PathId, bytes: u64, duration_ms: f64) -> Result<Self, EstimatorError> {
        if bytes == 0 || !(duration_ms.is_finite() && duration_ms > 0.0) {
            return Err(EstimatorError::InvalidSample { bytes, duration_ms });
        }
        Ok(ThroughputSample { path, bytes, duration_ms })
    }

    pub fn path(&self) -> PathId {
        self.path
    }

    pub fn bytes(&self) -> u64 {
        self.bytes
    }

    pub fn duration_ms(&self) -> f64 {
        self.duration_ms
    }

    /// Bytes per millisecond.
    pub fn throughput(&self) -> f64 {
        self.bytes as f64 / self.duration_ms
    }
}

/// Exponentially weighted moving average; `alpha` weights the old estimate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EwmaState {
    estimate: Option<f64>,
    alpha: f64,
}

impl EwmaState {
    pub fn new(alpha: f64) -> Result<Self, EstimatorError> {
        if !(0.0..=1.0).contains(&alpha) {
            return Err(EstimatorError::InvalidAlpha(alpha));
        }
        Ok(EwmaState { estimate: None, alpha })
    }

    pub fn estimate(&self) -> Option<f64> {
        self.estimate
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn update(&mut self, throughput: f64) -> Result<f64, EstimatorError> {
        let w = check_rate(throughput)?;
        let next = match self.estimate {
            None => w,
            Some(old) => self.alpha * old + (1.0 - self.alpha) * w,
        };
        self.estimate = Some(next);
        Ok(next)
    }
}

/// Harmonic mean kept in constant space: only the current mean and the
/// number of samples behind it are stored.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct HarmonicState {
    estimate: Option<f64>,
    count: u64,
}

impl HarmonicState {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn estimate(&self) -> Option<f64> {
        self.estimate
    }

    pub fn count(&self) -> u64 {
        self.count
    }

    pub fn update(&mut self, throughput: f64) -> Result<f64, EstimatorError> {
        let w = check_rate(throughput)?;
        let next = match self.estimate {
            None => w,
            Some(old) => {
                let n = self.count as f64;
                (n + 1.0) / (n / old + 1.0 / w)
            }
        };
        self.estimate = Some(next);
        self.count += 1;
        Ok(next)
    }
}

/// Remembers only the most recent sample (used by the ratio scheduler).
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LastSampleState {
    estimate: Option<f64>,
}

impl LastSampleState {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn estimate(&self) -> Option<f64> {
        self.estimate
    }

    pub fn update(&mut self, throughput: f64) -> Result<f64, EstimatorError> {
        let w = check_rate(throughput)?;
        self.estimate = Some(w);
        Ok(w)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Estimator {
    Ewma(EwmaState),
    Harmonic(HarmonicState),
    LastSample(LastSampleState),
}

impl Estimator {
    pub fn estimate(&self) -> Option<f64> {
        match self {
            Estimator::Ewma(s) => s.estimate(),
            Estimator::Harmonic(s) => s.estimate(),
            Estimator::LastSample(s) => s.estimate(),
        }
    }

    pub fn update(&mut self, throughput: f64) -> Result<f64, EstimatorError> {
        match self {
            Estimator::Ewma(s) => s.update(throughput),
            Estimator::Harmonic(s) => s.update(throughput),
            Estimator::LastSample(s) => s.update(throughput),
        }
    }

    pub fn observe(&mut self, sample: &ThroughputSample) -> Result<f64, EstimatorError> {
        self.update(sample.throughput())
    }
}
