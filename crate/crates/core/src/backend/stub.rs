//! Minimal HTTP server that records or replays endpoint exchanges, so
//! protocol tests and offline runs need no live model.

use std::collections::HashMap;
use std::io::{self, BufRead, BufReader, Read, Write};
use std::net::{SocketAddr, TcpListener, TcpStream};
use std::path::Path;
use std::sync::atomic::{AtomicBool, AtomicU32, AtomicU64, Ordering};
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;

use serde::{Deserialize, Serialize};

/// One request body and the response body it received, both verbatim.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Exchange {
    pub request: String,
    pub response: String,
}

pub fn load_exchanges(path: &Path) -> io::Result<Vec<Exchange>> {
    let file = std::fs::File::open(path)?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| {
            io::Error::new(io::ErrorKind::InvalidData, format!("line {}: {e}", i + 1))
        })?);
    }
    Ok(out)
}

pub fn save_exchanges(path: &Path, exchanges: &[Exchange]) -> io::Result<()> {
    let mut out = String::new();
    for ex in exchanges {
        out.push_str(&serde_json::to_string(ex).expect("exchange serialises"));
        out.push('\n');
    }
    std::fs::write(path, out)
}

/// Computes a response body for a request body, or an HTTP status to fail
/// with.
pub type Handler = Box<dyn Fn(&str) -> Result<String, u16> + Send + Sync>;

enum Mode {
    Replay(HashMap<String, String>),
    Live(Handler),
}

struct State {
    mode: Mode,
    fail_next: AtomicU32,
    served: AtomicU64,
    recorded: Mutex<Vec<Exchange>>,
    stop: AtomicBool,
}

pub struct StubServer {
    addr: SocketAddr,
    state: Arc<State>,
    thread: Option<JoinHandle<()>>,
}

impl StubServer {
    /// Serves recorded responses; unknown requests get HTTP 404.
    pub fn replay(exchanges: &[Exchange]) -> io::Result<Self> {
        let mut map = HashMap::new();
        for ex in exchanges {
            map.entry(ex.request.clone()).or_insert_with(|| ex.response.clone());
        }
        Self::start(Mode::Replay(map))
    }

    /// Answers with `handler` and records every successful exchange.
    pub fn live(handler: Handler) -> io::Result<Self> {
        Self::start(Mode::Live(handler))
    }

    fn start(mode: Mode) -> io::Result<Self> {
        let listener = TcpListener::bind("127.0.0.1:0")?;
        let addr = listener.local_addr()?;
        let state = Arc::new(State {
            mode,
            fail_next: AtomicU32::new(0),
            served: AtomicU64::new(0),
            recorded: Mutex::new(Vec::new()),
            stop: AtomicBool::new(false),
        });
        let thread_state = Arc::clone(&state);
        let thread = std::thread::spawn(move || {
            for stream in listener.incoming() {
                if thread_state.stop.load(Ordering::SeqCst) {
                    break;
                }
                if let Ok(stream) = stream {
                    let _ = serve(&thread_state, stream);
                }
            }
        });
        Ok(Self { addr, state, thread: Some(thread) })
    }

    pub fn url(&self) -> String {
        format!("http://{}/v1/generate", self.addr)
    }

    /// The next `n` requests fail with HTTP 503.
    pub fn inject_failures(&self, n: u32) {
        self.state.fail_next.store(n, Ordering::SeqCst);
    }

    /// Requests received, including injected failures.
    pub fn request_count(&self) -> u64 {
        self.state.served.load(Ordering::SeqCst)
    }

    pub fn recorded(&self) -> Vec<Exchange> {
        self.state.recorded.lock().unwrap_or_else(|e| e.into_inner()).clone()
    }
}

impl Drop for StubServer {
    fn drop(&mut self) {
        self.state.stop.store(true, Ordering::SeqCst);
        let _ = TcpStream::connect(self.addr);
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }
}

fn serve(state: &State, stream: TcpStream) -> io::Result<()> {
    let mut reader = BufReader::new(stream.try_clone()?);
    let mut content_length = 0usize;
    let mut request_line = String::new();
    reader.read_line(&mut request_line)?;
    if request_line.trim().is_empty() {
        return Ok(());
    }
    loop {
        let mut line = String::new();
        if reader.read_line(&mut line)? == 0 || line == "\r\n" || line == "\n" {
            break;
        }
        if let Some((name, value)) = line.split_once(':') {
            if name.trim().eq_ignore_ascii_case("content-length") {
                content_length = value.trim().parse().unwrap_or(0);
            }
        }
    }
    let mut body = vec![0u8; content_length];
    reader.read_exact(&mut body)?;
    let body = String::from_utf8_lossy(&body).into_owned();
    state.served.fetch_add(1, Ordering::SeqCst);

    let injected = state
        .fail_next
        .fetch_update(Ordering::SeqCst, Ordering::SeqCst, |n| n.checked_sub(1))
        .is_ok();
    let (status, reply) = if injected {
        (503, r#"{"error":"injected failure"}"#.to_string())
    } else {
        match &state.mode {
            Mode::Replay(map) => match map.get(&body) {
                Some(r) => (200, r.clone()),
                None => (404, r#"{"error":"no recorded response for request"}"#.to_string()),
            },
            Mode::Live(handler) => match handler(&body) {
                Ok(r) => {
                    state
                        .recorded
                        .lock()
                        .unwrap_or_else(|e| e.into_inner())
                        .push(Exchange { request: body.clone(), response: r.clone() });
                    (200, r)
                }
                Err(code) => (code, r#"{"error":"handler rejected request"}"#.to_string()),
            },
        }
    };
    let reason = match status {
        200 => "OK",
        404 => "Not Found",
        503 => "Service Unavailable",
        _ => "Error",
    };
    let mut stream = stream;
    write!(
        stream,
        "HTTP/1.1 {status} {reason}\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{reply}",
        reply.len()
    )?;
    stream.flush()
}
