//! In-process test doubles for the model-service wire protocol.

use std::io::{BufRead, BufReader, Read, Write};
use std::net::{TcpListener, TcpStream};
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::Arc;
use std::thread;
use std::time::Duration;

use crate::decoders::{WireRequest, WireResponse};

pub type Handler = Arc<dyn Fn(&WireRequest) -> WireResponse + Send + Sync>;

/// Answers with the last whitespace token of the input.
pub fn echo_last_token() -> Handler {
    Arc::new(|req: &WireRequest| WireResponse {
        id: req.id.clone(),
        output: Some(req.input.split_whitespace().last().unwrap_or("").to_string()),
        error: None,
    })
}

#[derive(Default)]
pub struct ServiceStats {
    in_flight: AtomicUsize,
    peak_in_flight: AtomicUsize,
    requests: AtomicUsize,
    connections: AtomicUsize,
}

impl ServiceStats {
    pub fn peak_in_flight(&self) -> usize {
        self.peak_in_flight.load(Ordering::SeqCst)
    }

    pub fn requests(&self) -> usize {
        self.requests.load(Ordering::SeqCst)
    }

    pub fn connections(&self) -> usize {
        self.connections.load(Ordering::SeqCst)
    }

    fn enter(&self) {
        self.requests.fetch_add(1, Ordering::SeqCst);
        let now = self.in_flight.fetch_add(1, Ordering::SeqCst) + 1;
        self.peak_in_flight.fetch_max(now, Ordering::SeqCst);
    }

    fn leave(&self) {
        self.in_flight.fetch_sub(1, Ordering::SeqCst);
    }
}

/// Options shared by the mock transports.
#[derive(Clone)]
pub struct MockOptions {
    pub handler: Handler,
    /// Simulated per-request latency.
    pub latency: Duration,
    /// Number of initial connections (or HTTP requests) dropped without reply.
    pub drop_first: usize,
}

impl Default for MockOptions {
    fn default() -> Self {
        MockOptions {
            handler: echo_last_token(),
            latency: Duration::from_millis(1),
            drop_first: 0,
        }
    }
}

pub struct MockService {
    pub address: String,
    pub stats: Arc<ServiceStats>,
    stop: Arc<AtomicBool>,
}

impl MockService {
    /// Line protocol over TCP on an ephemeral loopback port.
    pub fn spawn_tcp(options: MockOptions) -> Self {
        let listener = TcpListener::bind("127.0.0.1:0").expect("bind loopback");
        let address = format!("tcp://{}", listener.local_addr().unwrap());
        let stats = Arc::new(ServiceStats::default());
        let stop = Arc::new(AtomicBool::new(false));
        let (st, sp) = (stats.clone(), stop.clone());
        thread::spawn(move || {
            for stream in listener.incoming() {
                if sp.load(Ordering::SeqCst) {
                    break;
                }
                let Ok(stream) = stream else { continue };
                let _ = stream.set_nodelay(true);
                let n = st.connections.fetch_add(1, Ordering::SeqCst);
                if n < options.drop_first {
                    drop(stream);
                    continue;
                }
                let (st, opts) = (st.clone(), options.clone());
                thread::spawn(move || serve_lines(stream, &opts, &st));
            }
        });
        MockService { address, stats, stop }
    }

    /// Line protocol over a unix socket at `path`.
    #[cfg(unix)]
    pub fn spawn_unix(path: &std::path::Path, options: MockOptions) -> Self {
        let listener = std::os::unix::net::UnixListener::bind(path).expect("bind unix socket");
        let stats = Arc::new(ServiceStats::default());
        let stop = Arc::new(AtomicBool::new(false));
        let st = stats.clone();
        thread::spawn(move || {
            for stream in listener.incoming() {
                let Ok(stream) = stream else { continue };
                st.connections.fetch_add(1, Ordering::SeqCst);
                let (st, opts) = (st.clone(), options.clone());
                thread::spawn(move || serve_lines(stream, &opts, &st));
            }
        });
        MockService {
            address: format!("unix:{}", path.display()),
            stats,
            stop,
        }
    }

    /// `POST /decode` over HTTP/1.1 with keep-alive, on an ephemeral
    /// loopback port. Dropped requests are answered with status 503.
    pub fn spawn_http(options: MockOptions) -> Self {
        let listener = TcpListener::bind("127.0.0.1:0").expect("bind loopback");
        let address = format!("http://{}", listener.local_addr().unwrap());
        let stats = Arc::new(ServiceStats::default());
        let stop = Arc::new(AtomicBool::new(false));
        let (st, sp) = (stats.clone(), stop.clone());
        thread::spawn(move || {
            for stream in listener.incoming() {
                if sp.load(Ordering::SeqCst) {
                    break;
                }
                let Ok(stream) = stream else { continue };
                let _ = stream.set_nodelay(true);
                let (st, opts) = (st.clone(), options.clone());
                thread::spawn(move || serve_http(stream, &opts, &st));
            }
        });
        MockService { address, stats, stop }
    }
}

impl Drop for MockService {
    fn drop(&mut self) {
        self.stop.store(true, Ordering::SeqCst);
        if let Some(addr) = self
            .address
            .strip_prefix("tcp://")
            .or_else(|| self.address.strip_prefix("http://"))
        {
            // Unblock the accept loop.
            let _ = TcpStream::connect(addr);
        }
    }
}

fn answer(line: &str, options: &MockOptions, stats: &ServiceStats) -> String {
    stats.enter();
    thread::sleep(options.latency);
    let response = match serde_json::from_str::<WireRequest>(line.trim_end()) {
        Ok(req) => (options.handler)(&req),
        Err(e) => WireResponse {
            id: String::new(),
            output: None,
            error: Some(format!("malformed request: {e}")),
        },
    };
    stats.leave();
    serde_json::to_string(&response).expect("response serializes")
}

fn serve_lines<S: Read + Write>(stream: S, options: &MockOptions, stats: &ServiceStats) {
    let mut reader = BufReader::new(stream);
    let mut line = String::new();
    loop {
        line.clear();
        match reader.read_line(&mut line) {
            Ok(0) | Err(_) => return,
            Ok(_) => {}
        }
        let mut reply = answer(&line, options, stats);
        reply.push('\n');
        if reader.get_mut().write_all(reply.as_bytes()).is_err() {
            return;
        }
        let _ = reader.get_mut().flush();
    }
}

/// Reads one HTTP request; `None` at end of stream or on malformed input.
fn read_http_request<R: BufRead>(reader: &mut R) -> Option<(String, String, bool)> {
    let mut line = String::new();
    if reader.read_line(&mut line).ok()? == 0 {
        return None;
    }
    let mut parts = line.split_whitespace();
    let (method, target) = (parts.next()?.to_string(), parts.next()?.to_string());
    let mut length = 0;
    let mut close = false;
    loop {
        line.clear();
        reader.read_line(&mut line).ok()?;
        let header = line.trim_end();
        if header.is_empty() {
            break;
        }
        let (name, value) = header.split_once(':')?;
        match name.trim().to_ascii_lowercase().as_str() {
            "content-length" => length = value.trim().parse().ok()?,
            "connection" => close = value.trim().eq_ignore_ascii_case("close"),
            _ => {}
        }
    }
    let mut body = vec![0; length];
    reader.read_exact(&mut body).ok()?;
    Some((format!("{method} {target}"), String::from_utf8(body).ok()?, close))
}

fn serve_http(stream: TcpStream, options: &MockOptions, stats: &ServiceStats) {
    let mut reader = BufReader::new(stream);
    while let Some((route, body, close)) = read_http_request(&mut reader) {
        let n = stats.connections.fetch_add(1, Ordering::SeqCst);
        let (status, reply) = if n < options.drop_first {
            ("503 Service Unavailable", String::new())
        } else if route != "POST /decode" {
            ("404 Not Found", String::new())
        } else {
            ("200 OK", answer(&body, options, stats))
        };
        let message = format!(
            "HTTP/1.1 {status}\r\nContent-Type: application/json\r\nContent-Length: {}\r\n\r\n{reply}",
            reply.len()
        );
        if reader.get_mut().write_all(message.as_bytes()).is_err() || close {
            return;
        }
    }
}
