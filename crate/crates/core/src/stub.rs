//! Scripted in-process implementation of the inference HTTP contract, for
//! tests and offline demos. Responses are keyed by the SHA-256 of the image
//! bytes; every call is recorded in a ledger.

use std::collections::{BTreeMap, HashMap};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;
use std::time::Duration;

use base64::Engine;
use serde::Serialize;

use crate::geometry::{box_to_mask, BoundingBox, ImageDims, InstanceMask};
use crate::pipeline::sha256_hex;
use crate::pipeline::wire::{
    DetectRequest, DetectResponse, ErrorBody, HealthResponse, SegmentRequest, SegmentResponse,
    WireDetection,
};

/// Deliberate misbehaviour for one image.
#[derive(Debug, Clone, PartialEq)]
pub enum StubFault {
    /// Both endpoints answer with this HTTP status.
    Status(u16),
    /// `/v1/segment` returns masks one pixel wider than the image.
    WrongMaskDims,
    /// `/v1/segment` returns one mask fewer than requested.
    MissingMask,
    /// `/v1/detect` returns a body that is not JSON.
    MalformedDetect,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StubImage {
    pub dims: ImageDims,
    pub detections: Vec<WireDetection>,
    pub fault: Option<StubFault>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StubScript {
    pub detector: String,
    pub segmenter: String,
    pub latency: Duration,
    images: HashMap<String, StubImage>,
}

impl Default for StubScript {
    fn default() -> Self {
        Self {
            detector: "stub-detector-1".into(),
            segmenter: "stub-segmenter-1".into(),
            latency: Duration::ZERO,
            images: HashMap::new(),
        }
    }
}

impl StubScript {
    pub fn new() -> Self {
        Self::default()
    }

    /// Scripts the answer for an image file's exact bytes.
    pub fn image(&mut self, bytes: &[u8], entry: StubImage) -> &mut Self {
        self.images.insert(sha256_hex(bytes), entry);
        self
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CallRecord {
    pub endpoint: String,
    pub image_sha256: Option<String>,
    pub boxes: usize,
    pub status: u16,
}

#[derive(Debug, Default)]
struct State {
    calls: Mutex<Vec<CallRecord>>,
    in_flight: AtomicUsize,
    high_water: AtomicUsize,
}

/// A running stub server; shuts down on drop.
pub struct StubServer {
    url: String,
    server: Arc<tiny_http::Server>,
    state: Arc<State>,
    workers: Vec<JoinHandle<()>>,
}

impl StubServer {
    /// Binds an ephemeral localhost port and serves with `threads` handlers.
    pub fn start(script: StubScript, threads: usize) -> std::io::Result<Self> {
        let server = tiny_http::Server::http("127.0.0.1:0")
            .map_err(|e| std::io::Error::other(e.to_string()))?;
        let port = server
            .server_addr()
            .to_ip()
            .map(|a| a.port())
            .ok_or_else(|| std::io::Error::other("stub bound to a non-IP address"))?;
        let server = Arc::new(server);
        let state = Arc::new(State::default());
        let script = Arc::new(script);
        let workers = (0..threads.max(1))
            .map(|_| {
                let (server, state, script) = (server.clone(), state.clone(), script.clone());
                std::thread::spawn(move || {
                    while let Ok(req) = server.recv() {
                        handle(req, &script, &state);
                    }
                })
            })
            .collect();
        Ok(Self {
            url: format!("http://127.0.0.1:{port}"),
            server,
            state,
            workers,
        })
    }

    pub fn url(&self) -> &str {
        &self.url
    }

    pub fn calls(&self) -> Vec<CallRecord> {
        self.state.calls.lock().unwrap().clone()
    }

    pub fn count(&self, endpoint: &str) -> usize {
        self.calls()
            .iter()
            .filter(|c| c.endpoint == endpoint)
            .count()
    }

    /// Calls per endpoint for one image's bytes.
    pub fn count_for(&self, endpoint: &str, image: &[u8]) -> usize {
        let sha = sha256_hex(image);
        self.calls()
            .iter()
            .filter(|c| c.endpoint == endpoint && c.image_sha256.as_deref() == Some(&sha))
            .count()
    }

    /// Largest number of requests ever handled at once.
    pub fn high_water_mark(&self) -> usize {
        self.state.high_water.load(Ordering::SeqCst)
    }

    pub fn reset_ledger(&self) {
        self.state.calls.lock().unwrap().clear();
        self.state.high_water.store(0, Ordering::SeqCst);
    }
}

impl Drop for StubServer {
    fn drop(&mut self) {
        for _ in &self.workers {
            self.server.unblock();
        }
        for w in self.workers.drain(..) {
            let _ = w.join();
        }
    }
}

struct Reply {
    status: u16,
    body: Vec<u8>,
    sha: Option<String>,
    boxes: usize,
}

fn json<T: Serialize>(status: u16, value: &T) -> (u16, Vec<u8>) {
    (
        status,
        serde_json::to_vec(value).expect("stub body serializes"),
    )
}

fn error(status: u16, message: impl Into<String>) -> (u16, Vec<u8>) {
    json(
        status,
        &ErrorBody {
            error: message.into(),
        },
    )
}

fn decode_image(b64: &str) -> Result<String, (u16, Vec<u8>)> {
    base64::engine::general_purpose::STANDARD
        .decode(b64)
        .map(|bytes| sha256_hex(&bytes))
        .map_err(|e| error(400, format!("undecodable image: {e}")))
}

fn handle(mut req: tiny_http::Request, script: &StubScript, state: &State) {
    let now = state.in_flight.fetch_add(1, Ordering::SeqCst) + 1;
    state.high_water.fetch_max(now, Ordering::SeqCst);
    std::thread::sleep(script.latency);

    let endpoint = req.url().to_string();
    let mut body = Vec::new();
    let reply = match req.as_reader().read_to_end(&mut body) {
        Ok(_) => route(req.method(), &endpoint, &body, script),
        Err(e) => {
            let (status, body) = error(400, e.to_string());
            Reply {
                status,
                body,
                sha: None,
                boxes: 0,
            }
        }
    };
    state.calls.lock().unwrap().push(CallRecord {
        endpoint,
        image_sha256: reply.sha,
        boxes: reply.boxes,
        status: reply.status,
    });
    state.in_flight.fetch_sub(1, Ordering::SeqCst);

    let header = tiny_http::Header::from_bytes("content-type", "application/json").unwrap();
    let response = tiny_http::Response::from_data(reply.body)
        .with_status_code(reply.status)
        .with_header(header);
    let _ = req.respond(response);
}

fn route(method: &tiny_http::Method, path: &str, body: &[u8], script: &StubScript) -> Reply {
    use tiny_http::Method::{Get, Post};
    let mut reply = Reply {
        status: 0,
        body: Vec::new(),
        sha: None,
        boxes: 0,
    };
    let (status, bytes) = match (method, path) {
        (Get, "/v1/health") => json(
            200,
            &HealthResponse {
                status: "ok".into(),
                models: BTreeMap::from([
                    ("detector".into(), script.detector.clone()),
                    ("segmenter".into(), script.segmenter.clone()),
                ]),
            },
        ),
        (Post, "/v1/detect") => detect(body, script, &mut reply),
        (Post, "/v1/segment") => segment(body, script, &mut reply),
        _ => error(404, format!("no route for {method} {path}")),
    };
    reply.status = status;
    reply.body = bytes;
    reply
}

fn lookup<'a>(
    image: &str,
    script: &'a StubScript,
    reply: &mut Reply,
) -> Result<&'a StubImage, (u16, Vec<u8>)> {
    let sha = decode_image(image)?;
    reply.sha = Some(sha.clone());
    let entry = script
        .images
        .get(&sha)
        .ok_or_else(|| error(400, "image not in stub script"))?;
    if let Some(StubFault::Status(code)) = entry.fault {
        return Err(error(code, "injected failure"));
    }
    Ok(entry)
}

fn detect(body: &[u8], script: &StubScript, reply: &mut Reply) -> (u16, Vec<u8>) {
    let req: DetectRequest = match serde_json::from_slice(body) {
        Ok(r) => r,
        Err(e) => return error(400, format!("bad detect request: {e}")),
    };
    if req.prompt.trim().is_empty() {
        return error(400, "empty prompt");
    }
    let entry = match lookup(&req.image, script, reply) {
        Ok(e) => e,
        Err(resp) => return resp,
    };
    if entry.fault == Some(StubFault::MalformedDetect) {
        return (200, b"{\"model_version\": ".to_vec());
    }
    json(
        200,
        &DetectResponse {
            model_version: script.detector.clone(),
            detections: entry.detections.clone(),
        },
    )
}

fn segment(body: &[u8], script: &StubScript, reply: &mut Reply) -> (u16, Vec<u8>) {
    let req: SegmentRequest = match serde_json::from_slice(body) {
        Ok(r) => r,
        Err(e) => return error(400, format!("bad segment request: {e}")),
    };
    reply.boxes = req.boxes.len();
    let entry = match lookup(&req.image, script, reply) {
        Ok(e) => e,
        Err(resp) => return resp,
    };
    if req.boxes.is_empty() {
        return error(400, "no prompt boxes");
    }
    let dims = match entry.fault {
        Some(StubFault::WrongMaskDims) => ImageDims {
            width: entry.dims.width + 1,
            height: entry.dims.height,
        },
        _ => entry.dims,
    };
    let mut masks = Vec::with_capacity(req.boxes.len());
    for corners in &req.boxes {
        match BoundingBox::clipped_from_corners(*corners, dims) {
            Some(b) => masks.push(box_to_mask(&b, dims)),
            None => masks.push(InstanceMask::empty(dims)),
        }
    }
    if entry.fault == Some(StubFault::MissingMask) {
        masks.pop();
    }
    json(
        200,
        &SegmentResponse {
            model_version: script.segmenter.clone(),
            masks,
        },
    )
}
