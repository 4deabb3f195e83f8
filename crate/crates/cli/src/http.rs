//! Minimal JSON-over-HTTP client for the remote provider adapters: plain
//! HTTP/1.1 over TCP with content-length bodies and exponential backoff.
//! Remote endpoints are internal services; TLS is out of scope.

use std::io::{Read, Write};
use std::net::TcpStream;
use std::time::Duration;

#[derive(Debug, Clone)]
pub struct HttpError {
    pub message: String,
    pub retries: u32,
}

impl std::fmt::Display for HttpError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{} (after {} attempts)", self.message, self.retries)
    }
}

#[derive(Clone, Debug)]
pub struct HttpClient {
    pub max_retries: u32,
    pub base_backoff: Duration,
    pub timeout: Duration,
}

impl Default for HttpClient {
    fn default() -> Self {
        HttpClient {
            max_retries: 3,
            base_backoff: Duration::from_millis(100),
            timeout: Duration::from_secs(30),
        }
    }
}

struct ParsedUrl {
    host: String,
    port: u16,
    path: String,
}

fn parse_url(url: &str) -> Result<ParsedUrl, String> {
    let rest = url
        .strip_prefix("http://")
        .ok_or_else(|| format!("only http:// endpoints are supported: {url}"))?;
    let (authority, path) = match rest.find('/') {
        Some(i) => (&rest[..i], &rest[i..]),
        None => (rest, "/"),
    };
    let (host, port) = match authority.rfind(':') {
        Some(i) => (
            &authority[..i],
            authority[i + 1..]
                .parse::<u16>()
                .map_err(|_| format!("bad port in {url}"))?,
        ),
        None => (authority, 80),
    };
    Ok(ParsedUrl {
        host: host.to_string(),
        port,
        path: path.to_string(),
    })
}

impl HttpClient {
    /// POST a JSON body; GET when `body` is None. Retries transport-level
    /// failures and 5xx replies with exponential backoff.
    pub fn request_json(
        &self,
        url: &str,
        body: Option<&serde_json::Value>,
    ) -> Result<serde_json::Value, HttpError> {
        let mut last = String::from("no attempt made");
        for attempt in 0..=self.max_retries {
            if attempt > 0 {
                std::thread::sleep(self.base_backoff * (1 << (attempt - 1)));
            }
            match self.attempt(url, body) {
                Ok(value) => return Ok(value),
                Err(RequestFailure::Retryable(msg)) => last = msg,
                Err(RequestFailure::Fatal(msg)) => {
                    return Err(HttpError {
                        message: msg,
                        retries: attempt + 1,
                    })
                }
            }
        }
        Err(HttpError {
            message: last,
            retries: self.max_retries + 1,
        })
    }

    fn attempt(
        &self,
        url: &str,
        body: Option<&serde_json::Value>,
    ) -> Result<serde_json::Value, RequestFailure> {
        let parsed = parse_url(url).map_err(RequestFailure::Fatal)?;
        let addr = format!("{}:{}", parsed.host, parsed.port);
        let mut stream = TcpStream::connect(&addr)
            .map_err(|e| RequestFailure::Retryable(format!("connect {addr}: {e}")))?;
        stream.set_read_timeout(Some(self.timeout)).ok();
        stream.set_write_timeout(Some(self.timeout)).ok();
        let payload = body.map(|b| b.to_string()).unwrap_or_default();
        let request = match body {
            Some(_) => format!(
                "POST {} HTTP/1.1\r\nHost: {}\r\nContent-Type: application/json\r\n\
                 Content-Length: {}\r\nConnection: close\r\n\r\n{}",
                parsed.path,
                parsed.host,
                payload.len(),
                payload
            ),
            None => format!(
                "GET {} HTTP/1.1\r\nHost: {}\r\nConnection: close\r\n\r\n",
                parsed.path, parsed.host
            ),
        };
        stream
            .write_all(request.as_bytes())
            .map_err(|e| RequestFailure::Retryable(format!("send: {e}")))?;
        let mut response = Vec::new();
        stream
            .read_to_end(&mut response)
            .map_err(|e| RequestFailure::Retryable(format!("receive: {e}")))?;
        let header_end = response
            .windows(4)
            .position(|w| w == b"\r\n\r\n")
            .ok_or_else(|| RequestFailure::Retryable("truncated response".into()))?;
        let head = String::from_utf8_lossy(&response[..header_end]).to_string();
        let status: u16 = head
            .split_whitespace()
            .nth(1)
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| RequestFailure::Retryable("bad status line".into()))?;
        let body_bytes = &response[header_end + 4..];
        if (500..600).contains(&status) {
            return Err(RequestFailure::Retryable(format!("server error {status}")));
        }
        if status != 200 {
            return Err(RequestFailure::Fatal(format!(
                "HTTP {status}: {}",
                String::from_utf8_lossy(body_bytes)
            )));
        }
        serde_json::from_slice(body_bytes)
            .map_err(|e| RequestFailure::Fatal(format!("bad JSON reply: {e}")))
    }
}

enum RequestFailure {
    Retryable(String),
    Fatal(String),
}

/// Standard-alphabet base64 without padding dependencies elsewhere.
pub fn base64_encode(data: &[u8]) -> String {
    const TABLE: &[u8; 64] = b"ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789+/";
    let mut out = String::with_capacity(data.len().div_ceil(3) * 4);
    for chunk in data.chunks(3) {
        let b = [
            chunk[0],
            chunk.get(1).copied().unwrap_or(0),
            chunk.get(2).copied().unwrap_or(0),
        ];
        let n = ((b[0] as u32) << 16) | ((b[1] as u32) << 8) | b[2] as u32;
        out.push(TABLE[(n >> 18) as usize & 63] as char);
        out.push(TABLE[(n >> 12) as usize & 63] as char);
        out.push(if chunk.len() > 1 {
            TABLE[(n >> 6) as usize & 63] as char
        } else {
            '='
        });
        out.push(if chunk.len() > 2 {
            TABLE[n as usize & 63] as char
        } else {
            '='
        });
    }
    out
}

pub fn base64_decode(text: &str) -> Result<Vec<u8>, String> {
    let value = |c: u8| -> Result<u32, String> {
        match c {
            b'A'..=b'Z' => Ok((c - b'A') as u32),
            b'a'..=b'z' => Ok((c - b'a') as u32 + 26),
            b'0'..=b'9' => Ok((c - b'0') as u32 + 52),
            b'+' => Ok(62),
            b'/' => Ok(63),
            _ => Err(format!("bad base64 byte {c}")),
        }
    };
    let clean: Vec<u8> = text
        .bytes()
        .filter(|b| !b.is_ascii_whitespace())
        .collect();
    let mut out = Vec::with_capacity(clean.len() / 4 * 3);
    for chunk in clean.chunks(4) {
        if chunk.len() < 2 {
            return Err("truncated base64".into());
        }
        let pads = chunk.iter().filter(|b| **b == b'=').count();
        let mut n = 0u32;
        for (i, b) in chunk.iter().enumerate() {
            let v = if *b == b'=' { 0 } else { value(*b)? };
            n |= v << (18 - 6 * i);
        }
        out.push((n >> 16) as u8);
        if chunk.len() > 2 && pads < 2 {
            out.push((n >> 8) as u8);
        }
        if chunk.len() > 3 && pads < 1 {
            out.push(n as u8);
        }
    }
    Ok(out)
}
