//! Just enough HTTP/1.1 framing for range requests over persistent
//! connections: message heads, `Range` and `Content-Range` values.

use std::io::{self, BufRead, Write};

const MAX_HEAD: usize = 16 * 1024;

/// Start line and headers of a request or response.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Head {
    pub start_line: String,
    pub headers: Vec<(String, String)>,
}

impl Head {
    pub fn header(&self, name: &str) -> Option<&str> {
        self.headers.iter().find(|(k, _)| k.eq_ignore_ascii_case(name)).map(|(_, v)| v.as_str())
    }

    pub fn content_length(&self) -> io::Result<Option<u64>> {
        self.header("content-length")
            .map(|v| v.trim().parse().map_err(|_| invalid(format!("bad content-length {v:?}"))))
            .transpose()
    }

    /// Status code of a response head.
    pub fn status(&self) -> io::Result<u16> {
        let mut parts = self.start_line.split_whitespace();
        match (parts.next(), parts.next()) {
            (Some(v), Some(code)) if v.starts_with("HTTP/1.") => {
                code.parse().map_err(|_| invalid(format!("bad status line {:?}", self.start_line)))
            }
            _ => Err(invalid(format!("bad status line {:?}", self.start_line))),
        }
    }

    /// Method and target of a request head.
    pub fn request_line(&self) -> io::Result<(&str, &str)> {
        let mut parts = self.start_line.split_whitespace();
        match (parts.next(), parts.next(), parts.next()) {
            (Some(m), Some(t), Some(v)) if v.starts_with("HTTP/1.") => Ok((m, t)),
            _ => Err(invalid(format!("bad request line {:?}", self.start_line))),
        }
    }

    /// Whether the peer asked to close the connection after this message.
    pub fn wants_close(&self) -> bool {
        self.header("connection").is_some_and(|v| v.trim().eq_ignore_ascii_case("close"))
    }

    pub fn write_to(&self, w: &mut impl Write) -> io::Result<()> {
        let mut buf = String::with_capacity(256);
        buf.push_str(&self.start_line);
        buf.push_str("\r\n");
        for (k, v) in &self.headers {
            buf.push_str(k);
            buf.push_str(": ");
            buf.push_str(v);
            buf.push_str("\r\n");
        }
        buf.push_str("\r\n");
        w.write_all(buf.as_bytes())
    }
}

fn invalid(msg: String) -> io::Error {
    io::Error::new(io::ErrorKind::InvalidData, msg)
}

/// Reads one message head. Returns `None` on a clean end of stream before
/// any byte of a new message.
pub fn read_head(r: &mut impl BufRead) -> io::Result<Option<Head>> {
    let mut lines = Vec::new();
    let mut total = 0;
    loop {
        let mut line = String::new();
        let n = r.read_line(&mut line)?;
        if n == 0 {
            if lines.is_empty() && total == 0 {
                return Ok(None);
            }
            return Err(io::Error::new(io::ErrorKind::UnexpectedEof, "connection closed inside a message head"));
        }
        total += n;
        if total > MAX_HEAD {
            return Err(invalid("message head too large".into()));
        }
        let line = line.trim_end_matches(['\r', '\n']).to_string();
        if line.is_empty() {
            if lines.is_empty() {
                // tolerate stray CRLF between messages
                continue;
            }
            break;
        }
        lines.push(line);
    }
    let start_line = lines.remove(0);
    let mut headers = Vec::with_capacity(lines.len());
    for l in lines {
        let (k, v) = l.split_once(':').ok_or_else(|| invalid(format!("bad header line {l:?}")))?;
        headers.push((k.trim().to_string(), v.trim().to_string()));
    }
    Ok(Some(Head { start_line, headers }))
}

/// Parses a single-range `Range` value (`bytes=a-b`, `bytes=a-`,
/// `bytes=-n`) against an object of `size` bytes. Returns the half-open
/// range, or `None` when it is malformed or unsatisfiable.
pub fn parse_range(value: &str, size: u64) -> Option<(u64, u64)> {
    let spec = value.trim().strip_prefix("bytes=")?;
    if spec.contains(',') {
        return None;
    }
    let (a, b) = spec.split_once('-')?;
    let (a, b) = (a.trim(), b.trim());
    let (start, end) = if a.is_empty() {
        let n: u64 = b.parse().ok()?;
        if n == 0 {
            return None;
        }
        (size.saturating_sub(n), size)
    } else {
        let start: u64 = a.parse().ok()?;
        let end = if b.is_empty() { size } else { b.parse::<u64>().ok()?.saturating_add(1).min(size) };
        (start, end)
    };
    (start < end && start < size).then_some((start, end))
}

/// Parses `bytes a-b/total` into `(a, b + 1, total)`.
pub fn parse_content_range(value: &str) -> Option<(u64, u64, Option<u64>)> {
    let rest = value.trim().strip_prefix("bytes ")?;
    let (span, total) = rest.split_once('/')?;
    let (a, b) = span.split_once('-')?;
    let (a, b): (u64, u64) = (a.trim().parse().ok()?, b.trim().parse().ok()?);
    if b < a {
        return None;
    }
    let total = match total.trim() {
        "*" => None,
        t => Some(t.parse().ok()?),
    };
    Some((a, b + 1, total))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reads_heads_back_to_back() {
        let raw = b"GET /a HTTP/1.1\r\nHost: x\r\nRange: bytes=0-9\r\n\r\nHEAD /b HTTP/1.1\r\n\r\n";
        let mut r = &raw[..];
        let h = read_head(&mut r).unwrap().unwrap();
        assert_eq!(h.request_line().unwrap(), ("GET", "/a"));
        assert_eq!(h.header("range"), Some("bytes=0-9"));
        let h = read_head(&mut r).unwrap().unwrap();
        assert_eq!(h.request_line().unwrap(), ("HEAD", "/b"));
        assert!(read_head(&mut r).unwrap().is_none());
    }

    #[test]
    fn truncated_head_is_an_error() {
        let mut r = &b"HTTP/1.1 206 Partial Content\r\nContent-Le"[..];
        assert!(read_head(&mut r).is_err());
    }

    #[test]
    fn ranges() {
        assert_eq!(parse_range("bytes=0-1023", 4096), Some((0, 1024)));
        assert_eq!(parse_range("bytes=4095-4095", 4096), Some((4095, 4096)));
        assert_eq!(parse_range("bytes=4000-", 4096), Some((4000, 4096)));
        assert_eq!(parse_range("bytes=-10", 4096), Some((4086, 4096)));
        assert_eq!(parse_range("bytes=0-99999", 4096), Some((0, 4096)));
        assert_eq!(parse_range("bytes=4096-", 4096), None);
        assert_eq!(parse_range("bytes=5-4", 4096), None);
        assert_eq!(parse_range("bytes=0-1,4-5", 4096), None);
        assert_eq!(parse_range("items=0-1", 4096), None);
    }

    #[test]
    fn content_ranges() {
        assert_eq!(parse_content_range("bytes 0-1023/4096"), Some((0, 1024, Some(4096))));
        assert_eq!(parse_content_range("bytes 7-7/*"), Some((7, 8, None)));
        assert_eq!(parse_content_range("bytes 9-7/10"), None);
    }

    #[test]
    fn status_line() {
        let h = Head { start_line: "HTTP/1.1 206 Partial Content".into(), headers: vec![] };
        assert_eq!(h.status().unwrap(), 206);
        let h = Head { start_line: "garbage".into(), headers: vec![] };
        assert!(h.status().is_err());
    }
}
