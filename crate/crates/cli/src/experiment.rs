//! Sweep execution.

use std::fs::{self, File};
use std::io::{self, BufWriter};
use std::path::{Path, PathBuf};

use duopath_core::{netsim, EventKind, EventLog, EventRecord, Phase, Policy};
use duopath_net::{run_live, Origin, SourceEndpoint};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use thiserror::Error;

use crate::config::{ExperimentConfig, Mode};
use crate::summary::{write_summary, SummaryRow};

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error(transparent)]
    Config(#[from] crate::config::ConfigError),
    #[error("writing {path}: {source}")]
    Output { path: PathBuf, source: io::Error },
    #[error("writing summary: {0}")]
    Summary(#[from] csv::Error),
}

/// One cell of the sweep in one repetition.
#[derive(Debug, Clone, PartialEq)]
pub struct RunSpec {
    pub run_id: String,
    pub repetition: u32,
    pub policy: Policy,
    pub chunk_size: u64,
    pub prebuffer_s: f64,
}

impl RunSpec {
    fn row(&self) -> SummaryRow {
        SummaryRow {
            policy: self.policy,
            chunk_size: self.chunk_size,
            prebuffer_s: self.prebuffer_s,
            repetition: self.repetition,
            prebuffer_download_ms: None,
            mean_rebuffer_ms: None,
            frac_path0_prebuffer: None,
            frac_path0_rebuffer: None,
            stall_ms: None,
            run_id: self.run_id.clone(),
            error: None,
        }
    }
}

/// Every combination once per repetition, shuffled independently within
/// each repetition.
pub fn plan(cfg: &ExperimentConfig) -> Vec<RunSpec> {
    let s = &cfg.sweep;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.rng_seed);
    let mut runs = Vec::with_capacity(cfg.run_count());
    for repetition in 0..cfg.repetitions {
        let mut cells = Vec::new();
        for &policy in &s.policies {
            for &chunk_size in &s.chunk_sizes {
                for &prebuffer_s in &s.prebuffer_targets {
                    cells.push(RunSpec {
                        run_id: format!("rep{repetition:03}-{policy}-{chunk_size}-{prebuffer_s}s"),
                        repetition,
                        policy,
                        chunk_size,
                        prebuffer_s,
                    });
                }
            }
        }
        cells.shuffle(&mut rng);
        runs.extend(cells);
    }
    runs
}

/// Where a finished experiment put its files.
#[derive(Debug, Clone)]
pub struct ExperimentOutput {
    /// Rows in execution order.
    pub rows: Vec<SummaryRow>,
    pub summary_path: PathBuf,
    pub runs_dir: PathBuf,
}

pub fn summary_path(out_dir: &Path) -> PathBuf {
    out_dir.join("summary.csv")
}

pub fn runs_dir(out_dir: &Path) -> PathBuf {
    out_dir.join("runs")
}

pub fn log_path(out_dir: &Path, run_id: &str) -> PathBuf {
    runs_dir(out_dir).join(format!("{run_id}.jsonl"))
}

/// Runs the whole sweep, writing one event log per run under
/// `<out>/runs/` and the summary table to `<out>/summary.csv`.
///
/// Simulated runs execute in parallel; live runs one after another. A run
/// that fails is recorded in its row and does not stop the sweep.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentOutput, ExperimentError> {
    cfg.validate()?;
    let out = &cfg.out_dir;
    let runs = runs_dir(out);
    fs::create_dir_all(&runs).map_err(|source| ExperimentError::Output { path: runs.clone(), source })?;
    let specs = plan(cfg);
    log::info!("running {} {:?} runs into {}", specs.len(), cfg.mode, out.display());
    let execute = |spec: &RunSpec| -> Result<SummaryRow, ExperimentError> {
        let (row, log) = match cfg.mode {
            Mode::Sim => run_sim(cfg, spec),
            Mode::Live => run_live_once(cfg, spec),
        };
        if let Some(e) = &row.error {
            log::warn!("run {} failed: {e}", spec.run_id);
        }
        write_log(&log_path(out, &spec.run_id), &log)?;
        Ok(row)
    };
    let rows = match cfg.mode {
        Mode::Sim => specs.par_iter().map(execute).collect::<Result<Vec<_>, _>>()?,
        Mode::Live => specs.iter().map(execute).collect::<Result<Vec<_>, _>>()?,
    };
    let summary = summary_path(out);
    write_summary(&summary, &rows)?;
    Ok(ExperimentOutput { rows, summary_path: summary, runs_dir: runs })
}

fn write_log(path: &Path, log: &EventLog) -> Result<(), ExperimentError> {
    let file = File::create(path).map_err(|source| ExperimentError::Output { path: path.into(), source })?;
    log.write_jsonl(BufWriter::new(file)).map_err(|source| ExperimentError::Output { path: path.into(), source })
}

/// Runs one sweep cell in the simulator.
pub fn run_sim(cfg: &ExperimentConfig, spec: &RunSpec) -> (SummaryRow, EventLog) {
    let sim = cfg.sim_config(spec.policy, spec.chunk_size, spec.prebuffer_s, spec.repetition);
    let mut row = spec.row();
    match netsim::run(&sim) {
        Ok(outcome) => {
            row.fill_from(&outcome.summary);
            if outcome.summary.truncated {
                row.error = Some("time limit reached".into());
            }
            (row, outcome.log)
        }
        Err(e) => {
            row.error = Some(e.to_string());
            (row, failed_log(&e.to_string()))
        }
    }
}

/// Runs one sweep cell against real servers, starting the configured
/// bundled origins for the duration of the run.
pub fn run_live_once(cfg: &ExperimentConfig, spec: &RunSpec) -> (SummaryRow, EventLog) {
    let mut row = spec.row();
    let live = cfg.live.as_ref().expect("validated live settings");
    let mut origins: Vec<Origin> = Vec::new();
    let mut servers: [Vec<SourceEndpoint>; 2] = Default::default();
    for (network, settings) in live.networks.iter().enumerate() {
        servers[network] = settings.servers.clone();
        for oc in &settings.origins {
            match Origin::serve(oc.clone()) {
                Ok(o) => {
                    servers[network].push(SourceEndpoint::new(o.addr()));
                    origins.push(o);
                }
                Err(e) => {
                    let msg = format!("cannot start origin on port {}: {e}", oc.port);
                    row.error = Some(msg.clone());
                    return (row, failed_log(&msg));
                }
            }
        }
    }
    let lc = cfg.live_config(servers, spec.policy, spec.chunk_size, spec.prebuffer_s);
    let result = run_live(&lc, io::sink());
    drop(origins);
    match result {
        Ok(outcome) => {
            row.fill_from(&outcome.summary);
            row.error = outcome.failure;
            (row, outcome.log)
        }
        Err(e) => {
            row.error = Some(e.to_string());
            (row, failed_log(&e.to_string()))
        }
    }
}

/// A closed log for a run that never got a session going.
fn failed_log(reason: &str) -> EventLog {
    let record = |kind| EventRecord {
        t_ms: 0.0,
        kind,
        path: None,
        range: None,
        sequence: None,
        server: None,
        buffer_s: 0.0,
        phase: Phase::PreBuffering,
        chunk_size: None,
        throughput: None,
        from_phase: None,
        released_bytes: None,
        note: None,
    };
    let mut end = record(EventKind::SessionEnd);
    end.note = Some(reason.to_string());
    EventLog { records: vec![record(EventKind::SessionStart), end] }
}
