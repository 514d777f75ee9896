//! JSON-over-HTTP routes for [`SessionManager`].
//!
//! | method | path | body |
//! |---|---|---|
//! | GET | `/checkpoints` | |
//! | POST | `/sessions` | `{checkpoint, seed?}` |
//! | GET | `/sessions/{id}` | |
//! | DELETE | `/sessions/{id}` | |
//! | GET | `/sessions/{id}/generate` | |
//! | GET | `/sessions/{id}/export` | (SPPC bytes) |
//! | POST | `/sessions/{id}/select` | `{version?, indices}` |
//! | POST | `/sessions/{id}/edit` | `{version?, mode?, seed, indices?}` |
//! | POST | `/sessions/{id}/interpolate` | `{version?, base?, target, indices?, alpha}` |
//! | POST | `/sessions/{id}/compose` | `{version?, sources: [{from?, indices}]}` |
//! | POST | `/sessions/{id}/states/{name}` | |
//! | POST | `/sessions/{id}/states/{name}/load` | `{version?}` |
//!
//! Errors are `{"error": {"code", "message", "field"?, "index"?}}`.

use std::net::SocketAddr;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;

use log::{debug, warn};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::{CodeSource, ComposeSource, SessionManager};
use crate::error::{Error, ErrorKind, Result};
use crate::manipulation::EditMode;

#[derive(Debug, Clone, PartialEq)]
pub struct Response {
    pub status: u16,
    pub content_type: &'static str,
    pub body: Vec<u8>,
}

impl Response {
    fn json(status: u16, value: &impl Serialize) -> Self {
        Response {
            status,
            content_type: "application/json",
            body: serde_json::to_vec(value).expect("payloads serialize"),
        }
    }

    /// Body parsed as JSON; panics on non-JSON bodies.
    pub fn json_body(&self) -> Value {
        serde_json::from_slice(&self.body).expect("JSON body")
    }
}

/// Status and body for an error. Overlapping selection masks surface as a
/// conflict at this layer.
pub fn error_response(err: &Error) -> Response {
    let (status, code) = match err {
        Error::OverlappingMasks { .. } => (409, ErrorKind::Conflict.code()),
        _ => {
            let kind = err.kind();
            let status = match kind {
                ErrorKind::InvalidArgument | ErrorKind::Parse => 400,
                ErrorKind::NotFound => 404,
                ErrorKind::Gone => 410,
                ErrorKind::Conflict => 409,
                ErrorKind::CheckpointMismatch => 422,
                ErrorKind::Io => 500,
            };
            (status, kind.code())
        }
    };
    let mut body = json!({ "code": code, "message": err.to_string() });
    match err {
        Error::InvalidArgument { field, .. } => body["field"] = json!(field),
        Error::OverlappingMasks { index } => body["index"] = json!(index),
        Error::VersionConflict { current, .. } => body["current_version"] = json!(current),
        _ => {}
    }
    Response::json(status, &json!({ "error": body }))
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct CreateBody {
    checkpoint: String,
    seed: Option<u64>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct SelectBody {
    version: Option<u64>,
    indices: Vec<usize>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct EditBody {
    version: Option<u64>,
    #[serde(default)]
    mode: EditMode,
    seed: u64,
    indices: Option<Vec<usize>>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct InterpolateBody {
    version: Option<u64>,
    base: Option<CodeSource>,
    target: CodeSource,
    indices: Option<Vec<usize>>,
    alpha: f64,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ComposeBody {
    version: Option<u64>,
    sources: Vec<ComposeSource>,
}

#[derive(Deserialize, Default)]
#[serde(deny_unknown_fields)]
struct VersionBody {
    version: Option<u64>,
}

fn parse<T: DeserializeOwned>(body: &[u8]) -> Result<T> {
    serde_json::from_slice(body).map_err(|e| Error::parse(format!("request body: {e}")))
}

fn parse_or_default<T: DeserializeOwned + Default>(body: &[u8]) -> Result<T> {
    if body.iter().all(u8::is_ascii_whitespace) {
        Ok(T::default())
    } else {
        parse(body)
    }
}

fn ok<T: Serialize>(v: &T) -> Result<Response> {
    Ok(Response::json(200, v))
}

fn route(m: &Mutex<SessionManager>, method: &str, path: &str, body: &[u8]) -> Result<Response> {
    let parts: Vec<&str> = path.trim_matches('/').split('/').filter(|p| !p.is_empty()).collect();
    let mut m = m.lock().unwrap_or_else(|p| p.into_inner());
    match (method, parts.as_slice()) {
        ("GET", ["checkpoints"]) => ok(&m.checkpoint_ids()),
        ("POST", ["sessions"]) => {
            let b: CreateBody = parse(body)?;
            Ok(Response::json(201, &m.create_session(&b.checkpoint, b.seed)?))
        }
        ("GET", ["sessions", id]) => ok(&m.info(id)?),
        ("DELETE", ["sessions", id]) => {
            m.close_session(id)?;
            ok(&json!({ "closed": id }))
        }
        ("GET", ["sessions", id, "generate"]) => ok(&m.generate(id)?),
        ("GET", ["sessions", id, "export"]) => Ok(Response {
            status: 200,
            content_type: "application/octet-stream",
            body: m.export_sppc(id)?,
        }),
        ("POST", ["sessions", id, "select"]) => {
            let b: SelectBody = parse(body)?;
            ok(&m.select(id, b.version, b.indices)?)
        }
        ("POST", ["sessions", id, "edit"]) => {
            let b: EditBody = parse(body)?;
            ok(&m.edit(id, b.version, b.mode, b.seed, b.indices)?)
        }
        ("POST", ["sessions", id, "interpolate"]) => {
            let b: InterpolateBody = parse(body)?;
            ok(&m.interpolate(id, b.version, b.base.as_ref(), &b.target, b.indices, b.alpha)?)
        }
        ("POST", ["sessions", id, "compose"]) => {
            let b: ComposeBody = parse(body)?;
            ok(&m.compose(id, b.version, &b.sources)?)
        }
        ("POST", ["sessions", id, "states", name]) => ok(&m.save_state(id, name)?),
        ("POST", ["sessions", id, "states", name, "load"]) => {
            let b: VersionBody = parse_or_default(body)?;
            ok(&m.load_state(id, b.version, name)?)
        }
        _ => Err(Error::NotFound(format!("route {method} {path}"))),
    }
}

/// Dispatch one request without any networking.
pub fn handle(m: &Mutex<SessionManager>, method: &str, path: &str, body: &[u8]) -> Response {
    let path = path.split('?').next().unwrap_or(path);
    match route(m, method, path, body) {
        Ok(r) => r,
        Err(e) => {
            debug!("{method} {path}: {e}");
            error_response(&e)
        }
    }
}

pub struct HttpServer {
    server: Arc<tiny_http::Server>,
    stopping: Arc<AtomicBool>,
    workers: Vec<JoinHandle<()>>,
}

impl HttpServer {
    /// Bind `addr` and start `workers` request threads.
    pub fn start(addr: &str, manager: Arc<Mutex<SessionManager>>, workers: usize) -> Result<Self> {
        let server = tiny_http::Server::http(addr)
            .map_err(|e| Error::Io(std::io::Error::other(format!("cannot bind {addr}: {e}"))))?;
        let server = Arc::new(server);
        let stopping = Arc::new(AtomicBool::new(false));
        let workers = (0..workers.max(1))
            .map(|_| {
                let server = Arc::clone(&server);
                let manager = Arc::clone(&manager);
                let stopping = Arc::clone(&stopping);
                std::thread::spawn(move || worker(&server, &manager, &stopping))
            })
            .collect();
        Ok(HttpServer {
            server,
            stopping,
            workers,
        })
    }

    pub fn local_addr(&self) -> Option<SocketAddr> {
        self.server.server_addr().to_ip()
    }

    /// Block until every worker exits.
    pub fn join(self) {
        for w in self.workers {
            let _ = w.join();
        }
    }

    pub fn shutdown(self) {
        self.stopping.store(true, Ordering::SeqCst);
        for _ in 0..self.workers.len() {
            self.server.unblock();
        }
        self.join();
    }
}

fn worker(server: &tiny_http::Server, manager: &Mutex<SessionManager>, stopping: &AtomicBool) {
    loop {
        let mut req = match server.recv() {
            Ok(r) => r,
            Err(e) => {
                if stopping.load(Ordering::SeqCst) {
                    return;
                }
                warn!("http receive failed: {e}");
                continue;
            }
        };
        let mut body = Vec::new();
        let resp = match req.as_reader().read_to_end(&mut body) {
            Ok(_) => handle(manager, req.method().as_str(), req.url(), &body),
            Err(e) => error_response(&Error::Io(e)),
        };
        let header = tiny_http::Header::from_bytes("Content-Type", resp.content_type).expect("static header");
        let out = tiny_http::Response::from_data(resp.body)
            .with_status_code(resp.status)
            .with_header(header);
        if let Err(e) = req.respond(out) {
            warn!("http respond failed: {e}");
        }
    }
}
