//! Live sessions against real HTTP servers.
//!
//! One worker thread per path performs requests strictly one at a time.
//! The calling thread owns the [`Session`], receives every probe and fetch
//! result over a channel, decides failovers, and writes released bytes to
//! the sink in object order.

use std::collections::HashMap;
use std::io::{self, Write};
use std::net::IpAddr;
use std::sync::mpsc::{self, Receiver, RecvTimeoutError, Sender};
use std::thread::{self, JoinHandle};
use std::time::{Duration, Instant};

use duopath_core::session::SessionError;
use duopath_core::{
    BufferConfig, ChunkAssignment, EventLog, PathId, SchedulerConfig, Session, SessionConfig, SessionSummary,
};
use thiserror::Error;

use crate::failover::{ServerPool, DEFAULT_COOLDOWN};
use crate::transport::{FetchResult, PathBinding, PathClient, SourceEndpoint, TransportError};

#[derive(Debug, Clone)]
pub struct LiveConfig {
    /// Server list of each network. An empty list disables that path.
    pub servers: [Vec<SourceEndpoint>; 2],
    pub local_addresses: [Option<IpAddr>; 2],
    pub scheduler: SchedulerConfig,
    pub buffer: BufferConfig,
    /// Media seconds played per wall-clock second.
    pub playback_rate: f64,
    pub request_timeout: Duration,
    pub failover_cooldown: Duration,
    pub time_limit: Duration,
    /// Keep the session running after the download until playback ends.
    pub wait_for_playback: bool,
}

impl LiveConfig {
    pub fn new(servers: [Vec<SourceEndpoint>; 2]) -> Self {
        LiveConfig {
            servers,
            local_addresses: [None, None],
            scheduler: SchedulerConfig::default(),
            buffer: BufferConfig::default(),
            playback_rate: 1.0,
            request_timeout: Duration::from_secs(10),
            failover_cooldown: DEFAULT_COOLDOWN,
            time_limit: Duration::from_secs(600),
            wait_for_playback: false,
        }
    }
}

#[derive(Debug, Error)]
pub enum LiveError {
    #[error("no path has any server")]
    NoServers,
    #[error("the two paths need distinct local addresses, got {0} for both")]
    SameLocalAddress(IpAddr),
    #[error("could not learn the object size from any server: {0}")]
    NoProbe(String),
    #[error(transparent)]
    Session(#[from] SessionError),
    #[error("writing output: {0}")]
    Sink(#[from] io::Error),
}

#[derive(Debug, Clone)]
pub struct LiveOutcome {
    pub log: EventLog,
    pub summary: SessionSummary,
    pub object_size: u64,
    pub bytes_written: u64,
    /// Connections opened per path and server.
    pub connections: [Vec<usize>; 2],
    /// Session time at which each path became ready, milliseconds.
    pub ready_ms: [Option<f64>; 2],
    /// Why the session stopped early, if it did.
    pub failure: Option<String>,
}

enum Command {
    Probe(usize),
    Fetch(ChunkAssignment),
}

enum Report {
    Probed { path: PathId, server: usize, result: Result<u64, TransportError> },
    Fetched { path: PathId, assignment: ChunkAssignment, result: Result<FetchResult, TransportError> },
}

struct Worker {
    commands: Option<Sender<Command>>,
    handle: JoinHandle<Vec<usize>>,
}

fn spawn_worker(client: PathClient, reports: Sender<Report>) -> io::Result<Worker> {
    let (tx, rx): (Sender<Command>, Receiver<Command>) = mpsc::channel();
    let path = client.path_id();
    let handle = thread::Builder::new().name(format!("fetch-{path}")).spawn(move || {
        let mut client = client;
        for cmd in rx {
            let report = match cmd {
                Command::Probe(server) => Report::Probed { path, server, result: client.probe_size(server) },
                Command::Fetch(a) => Report::Fetched { path, assignment: a, result: client.fetch_range(&a) },
            };
            if reports.send(report).is_err() {
                break;
            }
        }
        (0..client.servers().len()).map(|s| client.connections_opened(s)).collect()
    })?;
    Ok(Worker { commands: Some(tx), handle })
}

struct Runner<'a, W: Write> {
    cfg: &'a LiveConfig,
    epoch: Instant,
    session: Option<Session>,
    workers: Vec<Option<Worker>>,
    pools: Vec<Option<ServerPool>>,
    server: [usize; 2],
    busy: [bool; 2],
    dead: [Option<String>; 2],
    ready_ms: [Option<f64>; 2],
    bodies: HashMap<u64, Vec<u8>>,
    sink: W,
    written: u64,
    probe_errors: Vec<String>,
}

/// Runs one live session, writing the object to `sink`.
pub fn run_live<W: Write>(cfg: &LiveConfig, sink: W) -> Result<LiveOutcome, LiveError> {
    if cfg.servers.iter().all(|s| s.is_empty()) {
        return Err(LiveError::NoServers);
    }
    if let [Some(a), Some(b)] = cfg.local_addresses {
        if a == b {
            return Err(LiveError::SameLocalAddress(a));
        }
    }
    let epoch = Instant::now();
    let (report_tx, report_rx) = mpsc::channel();
    let mut runner = Runner {
        cfg,
        epoch,
        session: None,
        workers: Vec::new(),
        pools: Vec::new(),
        server: [0, 0],
        busy: [false, false],
        dead: [None, None],
        ready_ms: [None, None],
        bodies: HashMap::new(),
        sink,
        written: 0,
        probe_errors: Vec::new(),
    };
    for path in PathId::BOTH {
        let servers = &cfg.servers[path.index()];
        if servers.is_empty() {
            runner.workers.push(None);
            runner.pools.push(None);
            runner.dead[path.index()] = Some("no servers configured".into());
            continue;
        }
        let binding = PathBinding { path_id: path, local_address: cfg.local_addresses[path.index()] };
        let client = PathClient::new(binding, servers.clone(), cfg.request_timeout, epoch);
        runner.workers.push(Some(spawn_worker(client, report_tx.clone())?));
        runner.pools.push(Some(ServerPool::new(servers.len(), cfg.failover_cooldown)));
        runner.send(path, Command::Probe(0));
    }
    drop(report_tx);
    let result = runner.run(&report_rx);
    let connections = runner.shutdown();
    let (truncated, failure) = result?;
    let Some(mut session) = runner.session else {
        return Err(LiveError::NoProbe(runner.probe_errors.join("; ")));
    };
    let summary = session.summary(truncated);
    session.end(truncated);
    Ok(LiveOutcome {
        object_size: session.scheduler().file_size(),
        log: session.into_log(),
        summary,
        bytes_written: runner.written,
        connections,
        ready_ms: runner.ready_ms,
        failure,
    })
}

impl<W: Write> Runner<'_, W> {
    fn send(&mut self, path: PathId, cmd: Command) {
        let sent = self.workers[path.index()]
            .as_ref()
            .and_then(|w| w.commands.as_ref())
            .is_some_and(|tx| tx.send(cmd).is_ok());
        self.busy[path.index()] = sent;
    }

    fn stop_worker(&mut self, path: PathId) {
        if let Some(w) = self.workers[path.index()].as_mut() {
            w.commands = None;
        }
    }

    fn shutdown(&mut self) -> [Vec<usize>; 2] {
        let mut out = [Vec::new(), Vec::new()];
        for (i, w) in self.workers.iter_mut().enumerate() {
            if let Some(mut w) = w.take() {
                w.commands = None;
                out[i] = w.handle.join().unwrap_or_default();
            }
        }
        out
    }

    fn now(&self) -> Duration {
        self.epoch.elapsed()
    }

    /// Returns `(truncated, failure)`.
    fn run(&mut self, reports: &Receiver<Report>) -> Result<(bool, Option<String>), LiveError> {
        loop {
            let now = self.now();
            if now >= self.cfg.time_limit {
                if let Some(s) = self.session.as_mut() {
                    s.advance_to(now);
                }
                return Ok((true, Some("time limit reached".into())));
            }
            let mut wait = self.cfg.time_limit - now;
            if let Some(deadline) = self.session.as_ref().and_then(|s| s.next_deadline()) {
                wait = wait.min(deadline.saturating_sub(now));
            }
            match reports.recv_timeout(wait) {
                Ok(report) => self.handle(report)?,
                Err(RecvTimeoutError::Timeout) => {}
                Err(RecvTimeoutError::Disconnected) => {
                    if self.session.is_none() {
                        return Ok((true, Some("no path could be set up".into())));
                    }
                }
            }
            let now = self.now();
            let Some(session) = self.session.as_mut() else {
                if self.dead.iter().all(|d| d.is_some()) {
                    return Ok((true, Some("no path could be set up".into())));
                }
                continue;
            };
            session.advance_to(now);
            if session.is_download_complete() && (!self.cfg.wait_for_playback || session.is_finished()) {
                return Ok((false, None));
            }
            if !session.any_path_alive() {
                let why = self.dead.iter().flatten().cloned().collect::<Vec<_>>().join("; ");
                return Ok((true, Some(format!("all paths down: {why}"))));
            }
            self.dispatch()?;
        }
    }

    fn dispatch(&mut self) -> Result<(), LiveError> {
        for path in PathId::BOTH {
            let i = path.index();
            if self.busy[i] || self.dead[i].is_some() {
                continue;
            }
            let session = self.session.as_mut().expect("dispatch after setup");
            if let Some(a) = session.try_assign(path, self.server[i])? {
                self.send(path, Command::Fetch(a));
            }
        }
        Ok(())
    }

    fn handle(&mut self, report: Report) -> Result<(), LiveError> {
        match report {
            Report::Probed { path, server, result } => {
                self.busy[path.index()] = false;
                match result {
                    Ok(size) => self.on_probe(path, server, size),
                    Err(e) => {
                        self.probe_errors.push(format!("{path}: {e}"));
                        self.on_server_failure(path, server, None, &e.to_string())
                    }
                }
            }
            Report::Fetched { path, assignment, result } => {
                self.busy[path.index()] = false;
                match result {
                    Ok(res) => self.on_fetched(&assignment, res),
                    Err(e) => self.on_server_failure(path, assignment.source_id, Some(assignment), &e.to_string()),
                }
            }
        }
    }

    fn on_probe(&mut self, path: PathId, server: usize, size: u64) -> Result<(), LiveError> {
        let now = self.now();
        if self.session.is_none() {
            let mut s = Session::new(SessionConfig {
                scheduler: self.cfg.scheduler,
                buffer: self.cfg.buffer,
                object_size: size,
                playback_rate: self.cfg.playback_rate,
            })?;
            s.advance_to(now);
            for p in PathId::BOTH {
                if let Some(why) = &self.dead[p.index()] {
                    s.path_down(p, why);
                }
            }
            self.session = Some(s);
        }
        let session = self.session.as_mut().unwrap();
        if session.scheduler().file_size() != size {
            let msg = format!("server {server} reports {size} bytes, expected {}", session.scheduler().file_size());
            return self.on_server_failure(path, server, None, &msg);
        }
        session.advance_to(now);
        session.path_ready(path);
        self.ready_ms[path.index()] = Some(now.as_secs_f64() * 1000.0);
        log::info!("{path} ready via server {server} at {:.1} ms", now.as_secs_f64() * 1000.0);
        Ok(())
    }

    fn on_fetched(&mut self, assignment: &ChunkAssignment, res: FetchResult) -> Result<(), LiveError> {
        let now = self.now();
        let session = self.session.as_mut().expect("fetch after setup");
        session.advance_to(now);
        let released = session.complete(assignment, res.timing.elapsed_ms().max(1e-3))?;
        self.bodies.insert(assignment.range.start, res.body);
        for r in released {
            let body = self.bodies.remove(&r.start).expect("released range has a body");
            self.sink.write_all(&body)?;
            self.written += body.len() as u64;
        }
        Ok(())
    }

    fn on_server_failure(
        &mut self,
        path: PathId,
        server: usize,
        failed: Option<ChunkAssignment>,
        reason: &str,
    ) -> Result<(), LiveError> {
        let i = path.index();
        log::warn!("{path} server {server} failed: {reason}");
        let now = self.now();
        if let (Some(s), Some(a)) = (self.session.as_mut(), failed.as_ref()) {
            s.advance_to(now);
            s.fail(a, reason)?;
        }
        let pool = self.pools[i].as_mut().expect("failing path has servers");
        match pool.fail(server, Instant::now()) {
            Ok(next) => {
                self.server[i] = next;
                match (self.session.as_mut(), failed) {
                    (None, _) => self.send(path, Command::Probe(next)),
                    (Some(s), Some(a)) => {
                        if let Some(again) = s.resume_after_failover(Some(&a), path, next)? {
                            self.send(path, Command::Fetch(again));
                        }
                    }
                    (Some(_), None) => {
                        // a late probe failed; the path was never ready
                        self.send(path, Command::Probe(next));
                    }
                }
            }
            Err(exhausted) => {
                let why = format!("{exhausted} (last: {reason})");
                self.dead[i] = Some(why.clone());
                self.stop_worker(path);
                if let Some(s) = self.session.as_mut() {
                    s.path_down(path, &why);
                    let other = path.other();
                    if let Some(a) = failed {
                        if !self.busy[other.index()] && self.dead[other.index()].is_none() {
                            if let Some(again) = s.resume_after_failover(Some(&a), other, self.server[other.index()])? {
                                self.send(other, Command::Fetch(again));
                            }
                        }
                    }
                }
            }
        }
        Ok(())
    }
}
