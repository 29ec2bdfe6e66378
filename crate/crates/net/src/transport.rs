//! Range-request client for one path. Keeps one persistent connection per
//! server, optionally bound to the path's local source address.

use std::collections::HashMap;
use std::io::{self, BufRead, BufReader, Read, Write};
use std::net::{IpAddr, SocketAddr, TcpStream, ToSocketAddrs};
use std::time::{Duration, Instant};

use duopath_core::{ByteRange, ChunkAssignment, PathId};
use serde::{Deserialize, Serialize};
use socket2::{Domain, Protocol, SockAddr, Socket, Type};
use thiserror::Error;

use crate::http::{self, Head};

/// One content server reachable over a given network.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SourceEndpoint {
    pub host: String,
    pub port: u16,
    #[serde(default = "default_object_path")]
    pub object_path: String,
}

fn default_object_path() -> String {
    "/media".into()
}

impl SourceEndpoint {
    pub fn new(addr: SocketAddr) -> Self {
        SourceEndpoint { host: addr.ip().to_string(), port: addr.port(), object_path: default_object_path() }
    }

    fn host_header(&self) -> String {
        if self.host.contains(':') {
            format!("[{}]:{}", self.host, self.port)
        } else {
            format!("{}:{}", self.host, self.port)
        }
    }
}

/// Source address used for a path's connections.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PathBinding {
    pub path_id: PathId,
    #[serde(default)]
    pub local_address: Option<IpAddr>,
}

#[derive(Debug, Error)]
pub enum TransportError {
    #[error("cannot connect to {endpoint}: {source}")]
    ConnectFailed { endpoint: String, source: io::Error },
    #[error("timed out talking to {endpoint}")]
    Timeout { endpoint: String },
    #[error("{endpoint} answered {status}, expected {expected}")]
    BadStatus { endpoint: String, status: u16, expected: u16 },
    #[error("{endpoint} sent {got} of {expected} bytes")]
    ShortBody { endpoint: String, expected: u64, got: u64 },
    #[error("{endpoint}: {message}")]
    Protocol { endpoint: String, message: String },
    #[error("no server with index {0}")]
    UnknownServer(usize),
}

/// Timestamps of one request, milliseconds since the client's epoch.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FetchTiming {
    pub sent_ms: f64,
    pub first_byte_ms: f64,
    pub last_byte_ms: f64,
}

impl FetchTiming {
    /// Request sent to last byte received.
    pub fn elapsed_ms(&self) -> f64 {
        self.last_byte_ms - self.sent_ms
    }
}

#[derive(Debug, Clone)]
pub struct FetchResult {
    pub assignment: ChunkAssignment,
    pub body: Vec<u8>,
    pub timing: FetchTiming,
    pub server_used: usize,
}

struct Connection {
    reader: BufReader<TcpStream>,
    writer: TcpStream,
}

/// HTTP client for one path.
pub struct PathClient {
    binding: PathBinding,
    servers: Vec<SourceEndpoint>,
    timeout: Duration,
    epoch: Instant,
    conns: HashMap<usize, Connection>,
    opened: HashMap<usize, usize>,
}

impl PathClient {
    pub fn new(binding: PathBinding, servers: Vec<SourceEndpoint>, timeout: Duration, epoch: Instant) -> Self {
        PathClient { binding, servers, timeout, epoch, conns: HashMap::new(), opened: HashMap::new() }
    }

    pub fn path_id(&self) -> PathId {
        self.binding.path_id
    }

    pub fn servers(&self) -> &[SourceEndpoint] {
        &self.servers
    }

    /// Connections opened to `server` so far.
    pub fn connections_opened(&self, server: usize) -> usize {
        self.opened.get(&server).copied().unwrap_or(0)
    }

    fn now_ms(&self) -> f64 {
        self.epoch.elapsed().as_secs_f64() * 1000.0
    }

    fn endpoint(&self, server: usize) -> Result<&SourceEndpoint, TransportError> {
        self.servers.get(server).ok_or(TransportError::UnknownServer(server))
    }

    fn connect(&self, ep: &SourceEndpoint) -> Result<Connection, TransportError> {
        let name = ep.host_header();
        let fail = |source: io::Error| TransportError::ConnectFailed { endpoint: name.clone(), source };
        let addrs: Vec<SocketAddr> = (ep.host.as_str(), ep.port).to_socket_addrs().map_err(fail)?.collect();
        let mut last = io::Error::new(io::ErrorKind::NotFound, "no address");
        for addr in addrs {
            if let Some(local) = self.binding.local_address {
                if local.is_ipv4() != addr.is_ipv4() {
                    continue;
                }
            }
            match self.connect_one(addr) {
                Ok(stream) => {
                    let reader = BufReader::with_capacity(64 * 1024, stream.try_clone().map_err(fail)?);
                    return Ok(Connection { reader, writer: stream });
                }
                Err(e) => last = e,
            }
        }
        Err(fail(last))
    }

    fn connect_one(&self, addr: SocketAddr) -> io::Result<TcpStream> {
        let socket = Socket::new(Domain::for_address(addr), Type::STREAM, Some(Protocol::TCP))?;
        if let Some(local) = self.binding.local_address {
            socket.bind(&SockAddr::from(SocketAddr::new(local, 0)))?;
        }
        socket.connect_timeout(&SockAddr::from(addr), self.timeout)?;
        socket.set_tcp_nodelay(true)?;
        socket.set_read_timeout(Some(self.timeout))?;
        socket.set_write_timeout(Some(self.timeout))?;
        Ok(socket.into())
    }

    fn connection(&mut self, server: usize) -> Result<&mut Connection, TransportError> {
        if !self.conns.contains_key(&server) {
            let conn = self.connect(self.endpoint(server)?)?;
            *self.opened.entry(server).or_default() += 1;
            self.conns.insert(server, conn);
        }
        Ok(self.conns.get_mut(&server).unwrap())
    }

    /// Sends a request and reads the response head. Any error drops the
    /// connection so the next request opens a fresh one.
    fn exchange(&mut self, server: usize, request: &Head) -> Result<(Head, f64, f64), TransportError> {
        let name = self.endpoint(server)?.host_header();
        let epoch = self.epoch;
        let conn = self.connection(server)?;
        let result = (|| {
            let mut out = Vec::with_capacity(256);
            request.write_to(&mut out)?;
            let sent = epoch.elapsed().as_secs_f64() * 1000.0;
            conn.writer.write_all(&out)?;
            conn.writer.flush()?;
            if conn.reader.fill_buf()?.is_empty() {
                return Err(io::Error::new(io::ErrorKind::UnexpectedEof, "connection closed before response"));
            }
            let first = epoch.elapsed().as_secs_f64() * 1000.0;
            let head = http::read_head(&mut conn.reader)?
                .ok_or_else(|| io::Error::new(io::ErrorKind::UnexpectedEof, "connection closed before response"))?;
            Ok((head, sent, first))
        })();
        result.map_err(|e| {
            self.conns.remove(&server);
            io_error(name, e)
        })
    }

    fn request(&self, method: &str, server: usize, range: Option<ByteRange>) -> Result<Head, TransportError> {
        let ep = self.endpoint(server)?;
        let mut headers = vec![("Host".to_string(), ep.host_header()), ("Connection".into(), "keep-alive".into())];
        if let Some(r) = range {
            headers.push(("Range".into(), r.header_value()));
        }
        Ok(Head { start_line: format!("{method} {} HTTP/1.1", ep.object_path), headers })
    }

    /// Asks `server` for the object size with a HEAD request.
    pub fn probe_size(&mut self, server: usize) -> Result<u64, TransportError> {
        let req = self.request("HEAD", server, None)?;
        let (head, _, _) = self.exchange(server, &req)?;
        let name = self.endpoint(server)?.host_header();
        let status = head.status().map_err(|e| io_error(name.clone(), e))?;
        if status != 200 {
            self.conns.remove(&server);
            return Err(TransportError::BadStatus { endpoint: name, status, expected: 200 });
        }
        let len = head.content_length().map_err(|e| io_error(name.clone(), e))?;
        len.ok_or_else(|| {
            self.conns.remove(&server);
            TransportError::Protocol { endpoint: name, message: "HEAD response without Content-Length".into() }
        })
    }

    /// Fetches `assignment.range` from server `assignment.source_id`.
    pub fn fetch_range(&mut self, assignment: &ChunkAssignment) -> Result<FetchResult, TransportError> {
        let server = assignment.source_id;
        let range = assignment.range;
        let req = self.request("GET", server, Some(range))?;
        let (head, sent_ms, first_byte_ms) = self.exchange(server, &req)?;
        let name = self.endpoint(server)?.host_header();
        let checked = check_partial(&head, range, &name);
        if let Err(e) = checked {
            // the body, if any, was not read, so the stream is out of sync
            self.conns.remove(&server);
            return Err(e);
        }
        let mut body = vec![0u8; range.len as usize];
        let conn = self.conns.get_mut(&server).expect("connection used for the exchange");
        let got = read_full(&mut conn.reader, &mut body);
        let got = match got {
            Ok(n) => n,
            Err(e) => {
                self.conns.remove(&server);
                return Err(io_error(name, e));
            }
        };
        if got < body.len() {
            self.conns.remove(&server);
            return Err(TransportError::ShortBody { endpoint: name, expected: range.len, got: got as u64 });
        }
        if head.wants_close() {
            self.conns.remove(&server);
        }
        let last_byte_ms = self.now_ms();
        Ok(FetchResult {
            assignment: *assignment,
            body,
            timing: FetchTiming { sent_ms, first_byte_ms, last_byte_ms },
            server_used: server,
        })
    }
}

fn check_partial(head: &Head, range: ByteRange, name: &str) -> Result<(), TransportError> {
    let bad = |e: io::Error| io_error(name.to_string(), e);
    let status = head.status().map_err(bad)?;
    if status != 206 {
        return Err(TransportError::BadStatus { endpoint: name.to_string(), status, expected: 206 });
    }
    let protocol = |message: String| TransportError::Protocol { endpoint: name.to_string(), message };
    let cr = head.header("content-range").ok_or_else(|| protocol("206 without Content-Range".into()))?;
    match http::parse_content_range(cr) {
        Some((s, e, _)) if s == range.start && e == range.end() => {}
        _ => return Err(protocol(format!("Content-Range {cr:?} does not match {}", range.header_value()))),
    }
    match head.content_length().map_err(bad)? {
        Some(n) if n == range.len => Ok(()),
        other => Err(protocol(format!("Content-Length {other:?} does not match {} bytes", range.len))),
    }
}

/// Reads until `buf` is full or the stream ends; returns the byte count.
fn read_full(r: &mut impl Read, buf: &mut [u8]) -> io::Result<usize> {
    let mut n = 0;
    while n < buf.len() {
        match r.read(&mut buf[n..]) {
            Ok(0) => break,
            Ok(k) => n += k,
            Err(e) if e.kind() == io::ErrorKind::Interrupted => {}
            Err(e) => return Err(e),
        }
    }
    Ok(n)
}

fn io_error(endpoint: String, e: io::Error) -> TransportError {
    match e.kind() {
        io::ErrorKind::WouldBlock | io::ErrorKind::TimedOut => TransportError::Timeout { endpoint },
        io::ErrorKind::InvalidData => TransportError::Protocol { endpoint, message: e.to_string() },
        _ => TransportError::ConnectFailed { endpoint, source: e },
    }
}
