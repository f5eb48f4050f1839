//! Fixture-driven mock server for the score and compress protocols.
//!
//! Requests are answered from fixture files: a score request matches a
//! fixture entry when its context tokens and candidate token lists are equal.
//! Unmatched well-formed requests get HTTP 404; malformed ones get HTTP 400.
//! Both carry a `{"error": ".."}` body.

use std::net::SocketAddr;
use std::path::Path;
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::Arc;
use std::thread::JoinHandle;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreFixture {
    pub context_tokens: Vec<String>,
    pub candidates: Vec<Vec<String>>,
    pub logprobs: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompressFixture {
    pub cot: String,
    pub summary: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Fixtures {
    pub score: Vec<ScoreFixture>,
    pub compress: Vec<CompressFixture>,
    /// Artificial latency added to every response.
    pub delay_ms: u64,
}

impl Fixtures {
    pub fn load(path: impl AsRef<Path>) -> std::io::Result<Self> {
        let text = std::fs::read_to_string(path)?;
        serde_json::from_str(&text).map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidData, e))
    }

    pub fn merge(&mut self, other: Fixtures) {
        self.score.extend(other.score);
        self.compress.extend(other.compress);
        self.delay_ms = self.delay_ms.max(other.delay_ms);
    }
}

fn error(status: u16, msg: impl Into<String>) -> (u16, Value) {
    (status, json!({ "error": msg.into() }))
}

fn string_array(v: &Value, field: &str) -> Result<Vec<String>, String> {
    v.as_array()
        .ok_or_else(|| format!("`{field}` must be an array"))?
        .iter()
        .map(|t| t.as_str().map(String::from).ok_or_else(|| format!("`{field}` must contain only strings")))
        .collect()
}

fn parse_score(body: &Value) -> Result<(Vec<String>, Vec<Vec<String>>), String> {
    let obj = body.as_object().ok_or("request body must be a JSON object")?;
    let context = string_array(obj.get("context_tokens").ok_or("missing field `context_tokens`")?, "context_tokens")?;
    let cands = obj
        .get("candidates")
        .ok_or("missing field `candidates`")?
        .as_array()
        .ok_or("`candidates` must be an array")?;
    if cands.is_empty() {
        return Err("`candidates` must not be empty".into());
    }
    let cands = cands
        .iter()
        .map(|c| string_array(c, "candidates"))
        .collect::<Result<Vec<_>, _>>()?;
    Ok((context, cands))
}

fn parse_compress(body: &Value) -> Result<(String, String), String> {
    let obj = body.as_object().ok_or("request body must be a JSON object")?;
    let field = |name: &str| -> Result<String, String> {
        obj.get(name)
            .ok_or_else(|| format!("missing field `{name}`"))?
            .as_str()
            .map(String::from)
            .ok_or_else(|| format!("`{name}` must be a string"))
    };
    Ok((field("system")?, field("cot")?))
}

/// Pure request handler: returns the HTTP status and JSON body.
pub fn handle(fixtures: &Fixtures, method: &str, path: &str, body: &str) -> (u16, Value) {
    if method != "POST" {
        return error(405, format!("method {method} not allowed"));
    }
    let parsed = || serde_json::from_str::<Value>(body).map_err(|e| format!("invalid JSON: {e}"));
    match path {
        "/v1/health" => (200, json!({ "status": "ok" })),
        "/v1/score" => {
            let (context, cands) = match parsed().and_then(|v| parse_score(&v)) {
                Ok(r) => r,
                Err(e) => return error(400, e),
            };
            match fixtures
                .score
                .iter()
                .find(|f| f.context_tokens == context && f.candidates == cands)
            {
                Some(f) => (200, json!({ "logprobs": f.logprobs })),
                None => error(404, "no fixture matches this score request"),
            }
        }
        "/v1/compress" => {
            let (_system, cot) = match parsed().and_then(|v| parse_compress(&v)) {
                Ok(r) => r,
                Err(e) => return error(400, e),
            };
            match fixtures.compress.iter().find(|f| f.cot == cot) {
                Some(f) => (200, json!({ "summary": f.summary })),
                None => error(404, "no fixture matches this compress request"),
            }
        }
        other => error(404, format!("unknown path `{other}`")),
    }
}

#[derive(Debug, Default)]
struct Stats {
    live: AtomicUsize,
    peak: AtomicUsize,
    served: AtomicUsize,
}

/// A running mock server. Shuts down on drop.
pub struct MockServer {
    server: Arc<tiny_http::Server>,
    addr: SocketAddr,
    workers: Vec<JoinHandle<()>>,
    stopping: Arc<AtomicBool>,
    stats: Arc<Stats>,
}

impl MockServer {
    /// Binds `bind` (e.g. `127.0.0.1:0`) and serves with `threads` workers.
    pub fn start(fixtures: Fixtures, bind: &str, threads: usize) -> std::io::Result<Self> {
        let server = tiny_http::Server::http(bind)
            .map_err(|e| std::io::Error::new(std::io::ErrorKind::AddrNotAvailable, e.to_string()))?;
        let addr = server
            .server_addr()
            .to_ip()
            .ok_or_else(|| std::io::Error::new(std::io::ErrorKind::Other, "not an IP listener"))?;
        let server = Arc::new(server);
        let fixtures = Arc::new(fixtures);
        let stopping = Arc::new(AtomicBool::new(false));
        let stats = Arc::new(Stats::default());
        let workers = (0..threads.max(1))
            .map(|_| {
                let (server, fixtures, stopping, stats) =
                    (server.clone(), fixtures.clone(), stopping.clone(), stats.clone());
                std::thread::spawn(move || serve(&server, &fixtures, &stopping, &stats))
            })
            .collect();
        Ok(Self {
            server,
            addr,
            workers,
            stopping,
            stats,
        })
    }

    pub fn url(&self) -> String {
        format!("http://{}", self.addr)
    }

    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    /// Highest number of requests observed in flight at once.
    pub fn peak_in_flight(&self) -> usize {
        self.stats.peak.load(Ordering::SeqCst)
    }

    pub fn requests_served(&self) -> usize {
        self.stats.served.load(Ordering::SeqCst)
    }

    /// Blocks until the server threads exit.
    pub fn join(mut self) {
        for w in self.workers.drain(..) {
            let _ = w.join();
        }
    }
}

impl Drop for MockServer {
    fn drop(&mut self) {
        self.stopping.store(true, Ordering::SeqCst);
        for _ in &self.workers {
            self.server.unblock();
        }
        for w in self.workers.drain(..) {
            let _ = w.join();
        }
    }
}

fn serve(server: &tiny_http::Server, fixtures: &Fixtures, stopping: &AtomicBool, stats: &Stats) {
    while !stopping.load(Ordering::SeqCst) {
        let mut request = match server.recv() {
            Ok(r) => r,
            Err(_) => break,
        };
        let now = stats.live.fetch_add(1, Ordering::SeqCst) + 1;
        stats.peak.fetch_max(now, Ordering::SeqCst);
        let mut body = String::new();
        let (status, value) = match request.as_reader().read_to_string(&mut body) {
            Ok(_) => handle(fixtures, request.method().as_str(), request.url(), &body),
            Err(e) => error(400, format!("unreadable body: {e}")),
        };
        if fixtures.delay_ms > 0 {
            std::thread::sleep(Duration::from_millis(fixtures.delay_ms));
        }
        stats.live.fetch_sub(1, Ordering::SeqCst);
        stats.served.fetch_add(1, Ordering::SeqCst);
        let header = tiny_http::Header::from_bytes(&b"Content-Type"[..], &b"application/json"[..])
            .expect("static header");
        let response = tiny_http::Response::from_string(value.to_string())
            .with_status_code(status)
            .with_header(header);
        let _ = request.respond(response);
    }
}
