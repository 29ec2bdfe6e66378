//! Experiment configuration file.

use std::fs;
use std::net::IpAddr;
use std::path::{Path, PathBuf};
use std::time::Duration;

use duopath_core::{BufferConfig, PathModel, Policy, SchedulerConfig, SimConfig, KIB, MIB};
use duopath_net::{LiveConfig, OriginConfig, SourceEndpoint};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// The only schema version this build understands.
pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("reading {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("parsing {path}: {source}")]
    Parse { path: PathBuf, source: toml::de::Error },
    #[error("invalid configuration: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    #[default]
    Sim,
    Live,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema_version: u32,
    #[serde(default)]
    pub mode: Mode,
    #[serde(default = "default_repetitions")]
    pub repetitions: u32,
    /// Seeds the run order shuffle and the simulator.
    #[serde(default)]
    pub rng_seed: u64,
    #[serde(default = "default_out_dir")]
    pub out_dir: PathBuf,
    #[serde(default)]
    pub sweep: Sweep,
    #[serde(default)]
    pub scheduler: Tuning,
    #[serde(default)]
    pub buffer: BufferSettings,
    #[serde(default)]
    pub sim: SimSettings,
    #[serde(default)]
    pub live: Option<LiveSettings>,
}

fn default_repetitions() -> u32 {
    20
}

fn default_out_dir() -> PathBuf {
    PathBuf::from("results")
}

/// Axes of the parameter sweep. Every combination is run once per
/// repetition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Sweep {
    pub policies: Vec<Policy>,
    /// Initial chunk sizes in bytes.
    pub chunk_sizes: Vec<u64>,
    /// Pre-buffering targets in media seconds.
    pub prebuffer_targets: Vec<f64>,
}

impl Default for Sweep {
    fn default() -> Self {
        Sweep {
            policies: Policy::ALL.to_vec(),
            chunk_sizes: vec![16 * KIB, 64 * KIB, 256 * KIB, MIB],
            prebuffer_targets: vec![20.0, 40.0, 60.0],
        }
    }
}

/// Scheduler settings that are not swept.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Tuning {
    pub min_chunk: u64,
    pub max_chunk: u64,
    pub delta: f64,
    pub ewma_alpha: f64,
}

impl Default for Tuning {
    fn default() -> Self {
        let d = SchedulerConfig::default();
        Tuning { min_chunk: d.min_chunk, max_chunk: d.max_chunk, delta: d.delta, ewma_alpha: d.ewma_alpha }
    }
}

/// Playout settings that are not swept.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BufferSettings {
    /// Bytes per media second.
    pub bitrate: u64,
    pub low_watermark: f64,
    pub refill_target: f64,
}

impl Default for BufferSettings {
    fn default() -> Self {
        let d = BufferConfig::default();
        BufferSettings { bitrate: d.bitrate, low_watermark: d.low_watermark, refill_target: d.refill_target }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimSettings {
    /// Object size in bytes; unset means `media_seconds` at the bitrate.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub object_size: Option<u64>,
    pub media_seconds: f64,
    pub paths: [PathModel; 2],
    pub jitter: bool,
    /// Use `rng_seed + repetition` instead of the same seed for every
    /// repetition.
    pub seed_per_repetition: bool,
    pub time_limit_ms: f64,
}

impl Default for SimSettings {
    fn default() -> Self {
        let path =
            |rtt_ms: f64, rate: f64| PathModel { delta1_ms: 5.0, delta2_ms: 5.0, ..PathModel::constant(rtt_ms, rate) };
        SimSettings {
            object_size: None,
            media_seconds: 120.0,
            // about 8 Mbit/s each, the second path with twice the RTT
            paths: [path(20.0, 1000.0), path(40.0, 1000.0)],
            jitter: false,
            seed_per_repetition: false,
            time_limit_ms: 3_600_000.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LiveSettings {
    /// One entry per network, at most two. The first is path 0.
    pub networks: Vec<NetworkSettings>,
    /// Media seconds played per wall-clock second.
    pub playback_rate: f64,
    pub request_timeout_ms: u64,
    pub failover_cooldown_s: u64,
    pub time_limit_s: u64,
    pub wait_for_playback: bool,
}

impl Default for LiveSettings {
    fn default() -> Self {
        LiveSettings {
            networks: Vec::new(),
            playback_rate: 1.0,
            request_timeout_ms: 10_000,
            failover_cooldown_s: 30,
            time_limit_s: 600,
            wait_for_playback: false,
        }
    }
}

/// Servers reachable over one network.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NetworkSettings {
    /// Source address the path's connections are bound to.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub local_address: Option<IpAddr>,
    pub servers: Vec<SourceEndpoint>,
    /// Bundled origins started for every run and appended to `servers`.
    pub origins: Vec<OriginConfig>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            schema_version: SCHEMA_VERSION,
            mode: Mode::Sim,
            repetitions: default_repetitions(),
            rng_seed: 0,
            out_dir: default_out_dir(),
            sweep: Sweep::default(),
            scheduler: Tuning::default(),
            buffer: BufferSettings::default(),
            sim: SimSettings::default(),
            live: None,
        }
    }
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = fs::read_to_string(path).map_err(|source| ConfigError::Io { path: path.into(), source })?;
        let cfg: ExperimentConfig =
            toml::from_str(&text).map_err(|source| ConfigError::Parse { path: path.into(), source })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        let cfg: ExperimentConfig =
            toml::from_str(text).map_err(|source| ConfigError::Parse { path: PathBuf::from("<string>"), source })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("configuration serializes")
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |m: String| Err(ConfigError::Invalid(m));
        if self.schema_version != SCHEMA_VERSION {
            return bad(format!("schema_version {} is not supported (expected {SCHEMA_VERSION})", self.schema_version));
        }
        if self.repetitions == 0 {
            return bad("repetitions must be at least 1".into());
        }
        let s = &self.sweep;
        if s.policies.is_empty() || s.chunk_sizes.is_empty() || s.prebuffer_targets.is_empty() {
            return bad("every sweep axis needs at least one value".into());
        }
        for &chunk in &s.chunk_sizes {
            self.scheduler_for(Policy::Harmonic, chunk).validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        }
        for &target in &s.prebuffer_targets {
            self.buffer_for(target).validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        }
        match self.mode {
            Mode::Sim => {
                for p in &self.sim.paths {
                    p.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
                }
                if !self.sim.paths.iter().any(|p| p.enabled) {
                    return bad("at least one simulated path must be enabled".into());
                }
                if self.object_size() == 0 {
                    return bad("the simulated object is empty".into());
                }
            }
            Mode::Live => {
                let Some(live) = &self.live else {
                    return bad("live mode needs a [live] section".into());
                };
                if live.networks.len() > 2 {
                    return bad(format!("{} networks configured, at most 2 are used", live.networks.len()));
                }
                if live.networks.iter().all(|n| n.servers.is_empty() && n.origins.is_empty()) {
                    return bad("live mode needs at least one server or origin".into());
                }
                if live.playback_rate.is_nan() || live.playback_rate <= 0.0 {
                    return bad("playback_rate must be positive".into());
                }
            }
        }
        Ok(())
    }

    /// Number of runs the sweep produces.
    pub fn run_count(&self) -> usize {
        let s = &self.sweep;
        s.policies.len() * s.chunk_sizes.len() * s.prebuffer_targets.len() * self.repetitions as usize
    }

    pub fn object_size(&self) -> u64 {
        self.sim.object_size.unwrap_or((self.sim.media_seconds * self.buffer.bitrate as f64).round() as u64)
    }

    pub fn scheduler_for(&self, policy: Policy, base_chunk: u64) -> SchedulerConfig {
        let t = &self.scheduler;
        SchedulerConfig {
            policy,
            base_chunk,
            min_chunk: t.min_chunk,
            max_chunk: t.max_chunk,
            delta: t.delta,
            ewma_alpha: t.ewma_alpha,
        }
    }

    pub fn buffer_for(&self, prebuffer_target: f64) -> BufferConfig {
        let b = &self.buffer;
        BufferConfig {
            bitrate: b.bitrate,
            prebuffer_target,
            low_watermark: b.low_watermark,
            refill_target: b.refill_target,
        }
    }

    pub fn sim_config(&self, policy: Policy, base_chunk: u64, prebuffer_target: f64, repetition: u32) -> SimConfig {
        let seed =
            if self.sim.seed_per_repetition { self.rng_seed.wrapping_add(repetition as u64) } else { self.rng_seed };
        SimConfig {
            paths: self.sim.paths.clone(),
            object_size: self.object_size(),
            scheduler: self.scheduler_for(policy, base_chunk),
            buffer: self.buffer_for(prebuffer_target),
            rng_seed: seed,
            jitter: self.sim.jitter,
            time_limit_ms: self.sim.time_limit_ms,
        }
    }

    /// Live session settings with the given server lists.
    ///
    /// # Panics
    /// If the configuration has no `[live]` section.
    pub fn live_config(
        &self,
        servers: [Vec<SourceEndpoint>; 2],
        policy: Policy,
        base_chunk: u64,
        prebuffer_target: f64,
    ) -> LiveConfig {
        let live = self.live.as_ref().expect("live settings present");
        let mut cfg = LiveConfig::new(servers);
        for (i, n) in live.networks.iter().enumerate() {
            cfg.local_addresses[i] = n.local_address;
        }
        cfg.scheduler = self.scheduler_for(policy, base_chunk);
        cfg.buffer = self.buffer_for(prebuffer_target);
        cfg.playback_rate = live.playback_rate;
        cfg.request_timeout = Duration::from_millis(live.request_timeout_ms);
        cfg.failover_cooldown = Duration::from_secs(live.failover_cooldown_s);
        cfg.time_limit = Duration::from_secs(live.time_limit_s);
        cfg.wait_for_playback = live.wait_for_playback;
        cfg
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_file_gets_the_default_sweep() {
        let cfg = ExperimentConfig::from_toml("schema_version = 1").unwrap();
        assert_eq!(cfg, ExperimentConfig::default());
        assert_eq!(cfg.run_count(), 720);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let err = ExperimentConfig::from_toml("schema_version = 1\n[sweep]\npolicy = [\"ewma\"]").unwrap_err();
        assert!(matches!(err, ConfigError::Parse { .. }), "{err}");
        assert!(ExperimentConfig::from_toml("schema_version = 1\nrepetition = 3").is_err());
    }

    #[test]
    fn schema_version_is_checked() {
        assert!(ExperimentConfig::from_toml("schema_version = 2").is_err());
        assert!(ExperimentConfig::from_toml("mode = \"sim\"").is_err());
    }

    #[test]
    fn live_mode_needs_servers() {
        assert!(ExperimentConfig::from_toml("schema_version = 1\nmode = \"live\"").is_err());
        // an empty first network is fine as long as some network has a server
        let text = "schema_version = 1\nmode = \"live\"\n[[live.networks]]\n[[live.networks]]\norigins = [{ object_size = 1000 }]\n";
        let cfg = ExperimentConfig::from_toml(text).unwrap();
        assert_eq!(cfg.live.unwrap().networks[1].origins[0].object_size, 1000);
        let three = "schema_version = 1\nmode = \"live\"\n[[live.networks]]\n[[live.networks]]\n[[live.networks]]\nservers = [{ host = \"a\", port = 1 }]\n";
        assert!(ExperimentConfig::from_toml(three).is_err());
    }

    #[test]
    fn toml_round_trip() {
        let mut cfg = ExperimentConfig::default();
        let origin = OriginConfig { throttle: Some(5_000_000), ..OriginConfig::new(1000, 3) };
        cfg.live = Some(LiveSettings {
            networks: vec![
                NetworkSettings { local_address: Some("10.0.0.2".parse().unwrap()), ..Default::default() },
                NetworkSettings { origins: vec![origin], ..Default::default() },
            ],
            ..Default::default()
        });
        cfg.sim.paths[1].trace = duopath_core::BandwidthTrace::from_steps(&[(0.0, 500.0), (1000.0, 250.0)]);
        assert_eq!(ExperimentConfig::from_toml(&cfg.to_toml()).unwrap(), cfg);
    }
}
