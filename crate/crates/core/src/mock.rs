//! In-process HTTP server implementing the model-backend protocol on top of
//! the built-in backends. Used for protocol tests and offline demos.
//!
//! Status codes: 400 for schema violations, 422 for undecodable payloads,
//! 404 for unknown routes.

use std::collections::BTreeSet;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;
use std::thread::JoinHandle;

use serde::Serialize;
use serde_json::json;
use tiny_http::{Header, Method, Request, Response, Server};

use crate::backend::{
    decode_image, decode_mask, encode_image, encode_mask, image_fingerprint, BackendError, ClassifyRequest,
    ClassifyResponse, InpaintRequest, InpaintResponse, SegmentRequest, SegmentResponse,
};
use crate::dataio::{BinaryMask, RasterImage};
use crate::editpipe::{HarmonicInpainter, InpainterBackend};
use crate::metrics::{ClassifierBackend, HeuristicClassifier};
use crate::segpipe::{PartLabel, PartSpec, SegmenterBackend, ThresholdSegmenter};

/// Deliberate misbehavior for exercising client error paths.
#[derive(Clone, Debug, Default, PartialEq)]
pub enum Fault {
    #[default]
    None,
    /// Every route answers with this status.
    Status(u16),
    /// 200 with a body that violates the response schema.
    Malformed,
    /// Returned images and masks are one pixel wider than requested.
    WrongSize,
    /// 500 for requests whose image has one of these fingerprints.
    FailImages(BTreeSet<String>),
}

pub struct MockBackends {
    pub segmenter: Arc<dyn SegmenterBackend>,
    pub inpainter: Arc<dyn InpainterBackend>,
    pub classifier: Arc<dyn ClassifierBackend>,
    pub fault: Fault,
}

impl Default for MockBackends {
    fn default() -> Self {
        Self {
            segmenter: Arc::new(ThresholdSegmenter),
            inpainter: Arc::new(HarmonicInpainter::default()),
            classifier: Arc::new(HeuristicClassifier::default()),
            fault: Fault::None,
        }
    }
}

pub struct MockServer {
    server: Arc<Server>,
    port: u16,
    requests: Arc<AtomicUsize>,
    handle: Option<JoinHandle<()>>,
}

impl MockServer {
    /// Bind an ephemeral localhost port and serve on a background thread.
    pub fn start(backends: MockBackends) -> std::io::Result<Self> {
        let server = Server::http("127.0.0.1:0").map_err(std::io::Error::other)?;
        let port = server.server_addr().to_ip().map(|a| a.port()).ok_or_else(|| std::io::Error::other("no ip"))?;
        let server = Arc::new(server);
        let requests = Arc::new(AtomicUsize::new(0));
        let (srv, count) = (Arc::clone(&server), Arc::clone(&requests));
        let handle = std::thread::spawn(move || {
            for req in srv.incoming_requests() {
                count.fetch_add(1, Ordering::SeqCst);
                handle_request(req, &backends);
            }
        });
        Ok(Self { server, port, requests, handle: Some(handle) })
    }

    pub fn url(&self) -> String {
        format!("http://127.0.0.1:{}", self.port)
    }

    pub fn request_count(&self) -> usize {
        self.requests.load(Ordering::SeqCst)
    }
}

impl Drop for MockServer {
    fn drop(&mut self) {
        self.server.unblock();
        if let Some(h) = self.handle.take() {
            let _ = h.join();
        }
    }
}

struct Reply {
    status: u16,
    body: String,
}

impl Reply {
    fn json<T: Serialize>(v: &T) -> Self {
        Self { status: 200, body: serde_json::to_string(v).expect("response serializes") }
    }

    fn error(status: u16, msg: impl std::fmt::Display) -> Self {
        Self { status, body: json!({ "error": msg.to_string() }).to_string() }
    }
}

fn handle_request(mut req: Request, b: &MockBackends) {
    let mut body = String::new();
    let reply = if req.as_reader().read_to_string(&mut body).is_err() {
        Reply::error(400, "unreadable body")
    } else {
        route(req.method(), req.url(), &body, b)
    };
    let header = Header::from_bytes("Content-Type", "application/json").expect("static header");
    let _ = req.respond(Response::from_string(reply.body).with_status_code(reply.status).with_header(header));
}

fn route(method: &Method, url: &str, body: &str, b: &MockBackends) -> Reply {
    if let Fault::Status(s) = b.fault {
        return Reply::error(s, "injected failure");
    }
    match (method, url) {
        (Method::Get, "/healthz") => Reply::json(&json!({
            "status": "ok",
            "models": {
                "segment": b.segmenter.descriptor().name,
                "inpaint": b.inpainter.descriptor().name,
                "classify": b.classifier.descriptor().name,
            }
        })),
        (Method::Post, "/v1/segment") => with_fault(b, segment(body, b)),
        (Method::Post, "/v1/inpaint") => with_fault(b, inpaint(body, b)),
        (Method::Post, "/v1/classify") => with_fault(b, classify(body, b)),
        _ => Reply::error(404, format!("no route {url}")),
    }
}

fn with_fault(b: &MockBackends, r: Result<Reply, Reply>) -> Reply {
    match (r, &b.fault) {
        (Ok(_), Fault::Malformed) => Reply { status: 200, body: r#"{"unexpected":true}"#.into() },
        (Ok(r), _) | (Err(r), _) => r,
    }
}

fn parse<T: serde::de::DeserializeOwned>(body: &str) -> Result<T, Reply> {
    serde_json::from_str(body).map_err(|e| Reply::error(400, format!("schema violation: {e}")))
}

fn image_arg(b64: &str, b: &MockBackends) -> Result<RasterImage, Reply> {
    let img = decode_image(b64).map_err(|e| Reply::error(422, e))?;
    if let Fault::FailImages(set) = &b.fault {
        if set.contains(&image_fingerprint(&img)) {
            return Err(Reply::error(500, "injected item failure"));
        }
    }
    Ok(img)
}

fn backend_reply(e: BackendError) -> Reply {
    match e {
        BackendError::UnknownImage => Reply::error(422, e),
        _ => Reply::error(500, e),
    }
}

fn widen_mask(m: &BinaryMask) -> BinaryMask {
    BinaryMask::from_fn(m.width() + 1, m.height(), |x, y| x < m.width() && m.get(x, y))
}

fn segment(body: &str, b: &MockBackends) -> Result<Reply, Reply> {
    let req: SegmentRequest = parse(body)?;
    let img = image_arg(&req.image, b)?;
    let part: PartLabel = req.part.parse().map_err(|e| Reply::error(400, e))?;
    let spec = PartSpec::new(part, req.points);
    spec.validate(img.width(), img.height()).map_err(|e| Reply::error(400, e))?;
    let mut seg = b.segmenter.segment(&img, &spec, req.seed).map_err(backend_reply)?;
    if b.fault == Fault::WrongSize {
        seg.mask = widen_mask(&seg.mask);
    }
    let mask = encode_mask(&seg.mask).map_err(backend_reply)?;
    Ok(Reply::json(&SegmentResponse { mask, model: seg.model }))
}

fn inpaint(body: &str, b: &MockBackends) -> Result<Reply, Reply> {
    let req: InpaintRequest = parse(body)?;
    let img = image_arg(&req.image, b)?;
    let mask = decode_mask(&req.mask).map_err(|e| Reply::error(422, e))?;
    if mask.dimensions() != img.dimensions() {
        return Err(Reply::error(400, "mask and image sizes differ"));
    }
    let mut out = b.inpainter.inpaint(&img, &mask).map_err(backend_reply)?.image;
    if b.fault == Fault::WrongSize {
        out = RasterImage::filled(img.width() + 1, img.height(), img.channels(), 0).expect("positive size");
    }
    let image = encode_image(&out).map_err(backend_reply)?;
    Ok(Reply::json(&InpaintResponse { image, model: b.inpainter.descriptor().name }))
}

fn classify(body: &str, b: &MockBackends) -> Result<Reply, Reply> {
    let req: ClassifyRequest = parse(body)?;
    let img = image_arg(&req.image, b)?;
    let c = b.classifier.classify(&img).map_err(backend_reply)?;
    Ok(Reply::json(&ClassifyResponse { label: c.label, scores: c.scores }))
}
