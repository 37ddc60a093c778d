use std::fmt;
use std::io::{BufRead, BufReader, Write};
use std::net::{TcpStream, ToSocketAddrs};
use std::str::FromStr;
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::thread;
use std::time::Duration;

use crate::error::{Error, Result};

use super::{Backend, DecodeRequest, DecodeResponse, WireRequest, WireResponse};

/// Where the model service listens.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Endpoint {
    /// Line protocol over TCP: `tcp://host:port` or bare `host:port`.
    Tcp(String),
    /// Line protocol over a unix socket: `unix:/path/to/socket`.
    Unix(String),
    /// One request per POST to `http://host:port/decode`.
    Http(String),
}

impl fmt::Display for Endpoint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Endpoint::Tcp(addr) => write!(f, "tcp://{addr}"),
            Endpoint::Unix(path) => write!(f, "unix:{path}"),
            Endpoint::Http(url) => f.write_str(url),
        }
    }
}

impl FromStr for Endpoint {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if s.starts_with("http://") || s.starts_with("https://") {
            let url = if s.trim_end_matches('/').ends_with("/decode") {
                s.trim_end_matches('/').to_string()
            } else {
                format!("{}/decode", s.trim_end_matches('/'))
            };
            Ok(Endpoint::Http(url))
        } else if let Some(path) = s.strip_prefix("unix://").or_else(|| s.strip_prefix("unix:")) {
            Ok(Endpoint::Unix(path.to_string()))
        } else {
            let addr = s.strip_prefix("tcp://").unwrap_or(s);
            if addr.is_empty() || !addr.contains(':') {
                return Err(Error::Config(format!("endpoint '{s}' is not host:port")));
            }
            Ok(Endpoint::Tcp(addr.to_string()))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RetryPolicy {
    pub attempts: u32,
    /// Delay before the second attempt; doubles after each failure.
    pub base_delay: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy {
            attempts: 3,
            base_delay: Duration::from_millis(200),
        }
    }
}

#[derive(Debug, Clone)]
pub struct RemoteConfig {
    pub endpoint: Endpoint,
    pub timeout: Duration,
    pub max_in_flight: usize,
    pub retry: RetryPolicy,
}

impl RemoteConfig {
    pub fn new(endpoint: Endpoint) -> Self {
        RemoteConfig {
            endpoint,
            timeout: Duration::from_secs(60),
            max_in_flight: 8,
            retry: RetryPolicy::default(),
        }
    }
}

/// Client for a model service speaking the line-delimited JSON protocol.
/// At most `max_in_flight` requests are outstanding at any time; each
/// worker keeps one connection and sends one request at a time.
pub struct RemoteBackend {
    config: RemoteConfig,
    label: String,
    http: ureq::Agent,
}

impl RemoteBackend {
    pub fn new(config: RemoteConfig) -> Result<Self> {
        if config.max_in_flight == 0 {
            return Err(Error::Config("max_in_flight must be at least 1".into()));
        }
        if config.retry.attempts == 0 {
            return Err(Error::Config("retry attempts must be at least 1".into()));
        }
        let http = ureq::AgentBuilder::new()
            .timeout(config.timeout)
            .max_idle_connections(config.max_in_flight)
            .max_idle_connections_per_host(config.max_in_flight)
            .build();
        Ok(RemoteBackend {
            label: format!("remote {}", config.endpoint),
            config,
            http,
        })
    }

    pub fn endpoint(&self) -> &Endpoint {
        &self.config.endpoint
    }

    fn worker(
        &self,
        requests: &[DecodeRequest],
        next: &AtomicUsize,
        abort: &AtomicBool,
    ) -> Result<Vec<DecodeResponse>> {
        let mut conn: Option<LineConn> = None;
        let mut out = Vec::new();
        loop {
            if abort.load(Ordering::Relaxed) {
                return Ok(out);
            }
            let idx = next.fetch_add(1, Ordering::Relaxed);
            let Some(request) = requests.get(idx) else {
                return Ok(out);
            };
            let wire = serde_json::to_string(&WireRequest::from(request)).expect("request serializes");
            let mut last_error = String::new();
            let mut delay = self.config.retry.base_delay;
            let mut answer = None;
            for attempt in 0..self.config.retry.attempts {
                if attempt > 0 {
                    thread::sleep(delay);
                    delay *= 2;
                }
                let result = match &self.config.endpoint {
                    Endpoint::Http(url) => self.post(url, &wire),
                    _ => self.exchange(&mut conn, &wire),
                };
                match result.and_then(|line| check_response(&line, &request.request_id)) {
                    Ok(output) => {
                        answer = Some(output);
                        break;
                    }
                    Err(e) => {
                        log::debug!("{}: attempt {} failed: {e}", self.label, attempt + 1);
                        conn = None;
                        last_error = e;
                    }
                }
            }
            match answer {
                Some(output_text) => out.push(DecodeResponse {
                    request_id: request.request_id.clone(),
                    output_text,
                }),
                None => {
                    abort.store(true, Ordering::Relaxed);
                    return Err(Error::Remote {
                        endpoint: self.config.endpoint.to_string(),
                        attempts: self.config.retry.attempts,
                        message: format!("request '{}': {last_error}", request.request_id),
                    });
                }
            }
        }
    }

    fn post(&self, url: &str, body: &str) -> std::result::Result<String, String> {
        let response = self
            .http
            .post(url)
            .set("Content-Type", "application/json")
            .send_string(body)
            .map_err(|e| e.to_string())?;
        response.into_string().map_err(|e| e.to_string())
    }

    fn exchange(&self, conn: &mut Option<LineConn>, line: &str) -> std::result::Result<String, String> {
        if conn.is_none() {
            *conn = Some(LineConn::connect(&self.config.endpoint, self.config.timeout)?);
        }
        conn.as_mut().expect("connected").round_trip(line)
    }
}

fn check_response(line: &str, expected_id: &str) -> std::result::Result<String, String> {
    let resp: WireResponse =
        serde_json::from_str(line.trim_end()).map_err(|e| format!("malformed response line: {e}"))?;
    if resp.id != expected_id {
        return Err(format!("response id '{}' does not match '{expected_id}'", resp.id));
    }
    if let Some(err) = resp.error {
        return Err(format!("service error: {err}"));
    }
    resp.output.ok_or_else(|| "response carries no output".to_string())
}

enum LineConn {
    Tcp(BufReader<TcpStream>),
    #[cfg(unix)]
    Unix(BufReader<std::os::unix::net::UnixStream>),
}

impl LineConn {
    fn connect(endpoint: &Endpoint, timeout: Duration) -> std::result::Result<Self, String> {
        match endpoint {
            Endpoint::Tcp(addr) => {
                let sock = addr
                    .to_socket_addrs()
                    .map_err(|e| e.to_string())?
                    .next()
                    .ok_or_else(|| format!("cannot resolve {addr}"))?;
                let stream = TcpStream::connect_timeout(&sock, timeout).map_err(|e| e.to_string())?;
                stream.set_read_timeout(Some(timeout)).map_err(|e| e.to_string())?;
                stream.set_write_timeout(Some(timeout)).map_err(|e| e.to_string())?;
                stream.set_nodelay(true).map_err(|e| e.to_string())?;
                Ok(LineConn::Tcp(BufReader::new(stream)))
            }
            #[cfg(unix)]
            Endpoint::Unix(path) => {
                let stream = std::os::unix::net::UnixStream::connect(path).map_err(|e| e.to_string())?;
                stream.set_read_timeout(Some(timeout)).map_err(|e| e.to_string())?;
                stream.set_write_timeout(Some(timeout)).map_err(|e| e.to_string())?;
                Ok(LineConn::Unix(BufReader::new(stream)))
            }
            #[cfg(not(unix))]
            Endpoint::Unix(_) => Err("unix sockets are not supported on this platform".into()),
            Endpoint::Http(_) => unreachable!("http endpoints do not use line connections"),
        }
    }

    fn round_trip(&mut self, line: &str) -> std::result::Result<String, String> {
        fn go<S: std::io::Read + Write>(reader: &mut BufReader<S>, line: &str) -> std::io::Result<String> {
            let stream = reader.get_mut();
            let mut framed = Vec::with_capacity(line.len() + 1);
            framed.extend_from_slice(line.as_bytes());
            framed.push(b'\n');
            stream.write_all(&framed)?;
            stream.flush()?;
            let mut buf = String::new();
            if reader.read_line(&mut buf)? == 0 {
                return Err(std::io::Error::new(
                    std::io::ErrorKind::UnexpectedEof,
                    "connection closed by service",
                ));
            }
            Ok(buf)
        }
        match self {
            LineConn::Tcp(r) => go(r, line),
            #[cfg(unix)]
            LineConn::Unix(r) => go(r, line),
        }
        .map_err(|e| e.to_string())
    }
}

impl Backend for RemoteBackend {
    fn name(&self) -> &str {
        &self.label
    }

    fn decode(&self, requests: &[DecodeRequest]) -> Result<Vec<DecodeResponse>> {
        if requests.is_empty() {
            return Ok(Vec::new());
        }
        let next = AtomicUsize::new(0);
        let abort = AtomicBool::new(false);
        let workers = self.config.max_in_flight.min(requests.len());
        let results: Vec<Result<Vec<DecodeResponse>>> = thread::scope(|scope| {
            let handles: Vec<_> = (0..workers)
                .map(|_| scope.spawn(|| self.worker(requests, &next, &abort)))
                .collect();
            handles
                .into_iter()
                .map(|h| h.join().expect("decode worker panicked"))
                .collect()
        });
        let mut out = Vec::with_capacity(requests.len());
        for r in results {
            out.extend(r?);
        }
        Ok(out)
    }
}
