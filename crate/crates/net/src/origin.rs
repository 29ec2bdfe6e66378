//! Test origin: serves one synthetic object over HTTP/1.1 with optional
//! per-request latency, a per-connection bandwidth cap, range support that
//! can be switched off, and a kill switch after a number of requests.

use std::io::{self, BufReader, BufWriter, Write};
use std::net::{IpAddr, Ipv4Addr, Shutdown, SocketAddr, TcpListener, TcpStream};
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::{Arc, Mutex};
use std::thread::{self, JoinHandle};
use std::time::{Duration, Instant};

use duopath_core::content;
use serde::{Deserialize, Serialize};

use crate::http::{self, Head};

const WRITE_PIECE: usize = 16 * 1024;
const ACCEPT_POLL: Duration = Duration::from_millis(2);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OriginConfig {
    /// Listening port; 0 picks a free one.
    #[serde(default)]
    pub port: u16,
    #[serde(default = "default_bind")]
    pub bind: IpAddr,
    pub object_size: u64,
    #[serde(default)]
    pub seed: u64,
    /// Delay before each response, milliseconds.
    #[serde(default)]
    pub added_latency_ms: u64,
    /// Bytes per second per connection; unset means unlimited.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub throttle: Option<u64>,
    #[serde(default = "default_true")]
    pub ranges_enabled: bool,
    /// Stop accepting connections once this many requests have been seen.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fail_after: Option<u64>,
}

fn default_bind() -> IpAddr {
    IpAddr::V4(Ipv4Addr::LOCALHOST)
}

fn default_true() -> bool {
    true
}

impl OriginConfig {
    pub fn new(object_size: u64, seed: u64) -> Self {
        OriginConfig {
            port: 0,
            bind: default_bind(),
            object_size,
            seed,
            added_latency_ms: 0,
            throttle: None,
            ranges_enabled: true,
            fail_after: None,
        }
    }
}

#[derive(Debug, Default)]
struct Stats {
    connections: AtomicU64,
    requests: AtomicU64,
}

struct Shared {
    config: OriginConfig,
    stats: Stats,
    listener: Mutex<Option<TcpListener>>,
    killed: AtomicBool,
    stopping: AtomicBool,
    streams: Mutex<Vec<TcpStream>>,
}

impl Shared {
    fn kill(&self) {
        self.killed.store(true, Ordering::SeqCst);
        self.listener.lock().unwrap().take();
    }
}

/// A running origin. Dropping it shuts the server down.
pub struct Origin {
    addr: SocketAddr,
    shared: Arc<Shared>,
    acceptor: Option<JoinHandle<()>>,
}

impl Origin {
    /// Binds and starts serving in background threads.
    pub fn serve(config: OriginConfig) -> io::Result<Origin> {
        let listener = TcpListener::bind((config.bind, config.port))?;
        listener.set_nonblocking(true)?;
        let addr = listener.local_addr()?;
        let shared = Arc::new(Shared {
            config,
            stats: Stats::default(),
            listener: Mutex::new(Some(listener)),
            killed: AtomicBool::new(false),
            stopping: AtomicBool::new(false),
            streams: Mutex::new(Vec::new()),
        });
        if shared.config.fail_after == Some(0) {
            shared.kill();
        }
        let s = Arc::clone(&shared);
        let acceptor = thread::Builder::new().name(format!("origin-{}", addr.port())).spawn(move || accept_loop(s))?;
        log::debug!("origin listening on {addr}");
        Ok(Origin { addr, shared, acceptor: Some(acceptor) })
    }

    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn config(&self) -> &OriginConfig {
        &self.shared.config
    }

    /// TCP connections accepted so far.
    pub fn connections(&self) -> u64 {
        self.shared.stats.connections.load(Ordering::SeqCst)
    }

    /// Requests received so far, including refused ones.
    pub fn requests(&self) -> u64 {
        self.shared.stats.requests.load(Ordering::SeqCst)
    }

    /// Whether the kill switch has fired.
    pub fn killed(&self) -> bool {
        self.shared.killed.load(Ordering::SeqCst)
    }

    /// Stops accepting and closes every open connection.
    pub fn kill(&self) {
        self.shared.kill();
        for s in self.shared.streams.lock().unwrap().iter() {
            let _ = s.shutdown(Shutdown::Both);
        }
    }

    /// Blocks until the process is interrupted. Used by the command line.
    pub fn wait(mut self) {
        if let Some(h) = self.acceptor.take() {
            let _ = h.join();
        }
    }

    pub fn shutdown(self) {}
}

impl Drop for Origin {
    fn drop(&mut self) {
        self.shared.stopping.store(true, Ordering::SeqCst);
        self.kill();
        if let Some(h) = self.acceptor.take() {
            let _ = h.join();
        }
    }
}

fn accept_loop(shared: Arc<Shared>) {
    loop {
        if shared.stopping.load(Ordering::SeqCst) {
            return;
        }
        let accepted = {
            let guard = shared.listener.lock().unwrap();
            match guard.as_ref() {
                Some(l) => l.accept(),
                None => {
                    drop(guard);
                    if shared.stopping.load(Ordering::SeqCst) {
                        return;
                    }
                    thread::sleep(ACCEPT_POLL * 10);
                    continue;
                }
            }
        };
        match accepted {
            Ok((stream, peer)) => {
                shared.stats.connections.fetch_add(1, Ordering::SeqCst);
                if let Ok(c) = stream.try_clone() {
                    shared.streams.lock().unwrap().push(c);
                }
                let s = Arc::clone(&shared);
                let spawned = thread::Builder::new().name(format!("origin-conn-{peer}")).spawn(move || {
                    if let Err(e) = handle(&s, stream) {
                        log::debug!("origin connection from {peer} ended: {e}");
                    }
                });
                if let Err(e) = spawned {
                    log::warn!("cannot spawn connection handler: {e}");
                }
            }
            Err(e) if e.kind() == io::ErrorKind::WouldBlock => thread::sleep(ACCEPT_POLL),
            Err(e) => {
                log::warn!("accept failed: {e}");
                thread::sleep(ACCEPT_POLL);
            }
        }
    }
}

fn handle(shared: &Shared, stream: TcpStream) -> io::Result<()> {
    stream.set_nonblocking(false)?;
    stream.set_nodelay(true)?;
    let mut reader = BufReader::new(stream.try_clone()?);
    let mut writer = BufWriter::with_capacity(WRITE_PIECE, stream);
    let cfg = &shared.config;
    while let Some(req) = http::read_head(&mut reader)? {
        let n = shared.stats.requests.fetch_add(1, Ordering::SeqCst) + 1;
        if shared.killed.load(Ordering::SeqCst) {
            break;
        }
        if cfg.fail_after.is_some_and(|k| n >= k) {
            // this request is still answered; later ones are refused
            shared.kill();
        }
        if cfg.added_latency_ms > 0 {
            thread::sleep(Duration::from_millis(cfg.added_latency_ms));
        }
        let close = req.wants_close();
        respond(cfg, &req, &mut writer)?;
        writer.flush()?;
        if close {
            break;
        }
    }
    let _ = writer.get_ref().shutdown(Shutdown::Both);
    Ok(())
}

fn head(status: &str, headers: Vec<(String, String)>) -> Head {
    Head { start_line: format!("HTTP/1.1 {status}"), headers }
}

fn respond(cfg: &OriginConfig, req: &Head, w: &mut BufWriter<TcpStream>) -> io::Result<()> {
    let (method, _target) = match req.request_line() {
        Ok(m) => m,
        Err(_) => return simple(w, "400 Bad Request"),
    };
    let size = cfg.object_size;
    let is_head = match method {
        "GET" => false,
        "HEAD" => true,
        _ => return simple(w, "405 Method Not Allowed"),
    };
    let mut headers = vec![("Connection".to_string(), "keep-alive".to_string())];
    let range = req.header("range").filter(|_| cfg.ranges_enabled);
    let (status, start, end) = match range {
        Some(value) => match http::parse_range(value, size) {
            Some((s, e)) => {
                headers.push(("Content-Range".into(), format!("bytes {}-{}/{}", s, e - 1, size)));
                ("206 Partial Content", s, e)
            }
            None => {
                let mut h = head("416 Range Not Satisfiable", headers);
                h.headers.push(("Content-Range".into(), format!("bytes */{size}")));
                h.headers.push(("Content-Length".into(), "0".into()));
                return h.write_to(w);
            }
        },
        None => ("200 OK", 0, size),
    };
    if cfg.ranges_enabled {
        headers.push(("Accept-Ranges".into(), "bytes".into()));
    }
    headers.push(("Content-Type".into(), "application/octet-stream".into()));
    headers.push(("Content-Length".into(), (end - start).to_string()));
    head(status, headers).write_to(w)?;
    if !is_head {
        send_body(cfg, start, end, w)?;
    }
    Ok(())
}

fn simple(w: &mut impl Write, status: &str) -> io::Result<()> {
    head(status, vec![("Content-Length".into(), "0".into())]).write_to(w)
}

fn send_body(cfg: &OriginConfig, start: u64, end: u64, w: &mut BufWriter<TcpStream>) -> io::Result<()> {
    let mut buf = vec![0u8; WRITE_PIECE];
    let began = Instant::now();
    let mut pos = start;
    while pos < end {
        let n = ((end - pos) as usize).min(WRITE_PIECE);
        content::fill(cfg.seed, pos, &mut buf[..n]);
        if let Some(rate) = cfg.throttle.filter(|&r| r > 0) {
            // pace so that the piece finishes on the cap's schedule
            let due = Duration::from_secs_f64((pos + n as u64 - start) as f64 / rate as f64);
            w.flush()?;
            let elapsed = began.elapsed();
            if due > elapsed {
                thread::sleep(due - elapsed);
            }
        }
        w.write_all(&buf[..n])?;
        pos += n as u64;
    }
    Ok(())
}
