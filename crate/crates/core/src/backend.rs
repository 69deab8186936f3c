//! Shared pieces of the model-backend protocol: descriptors, errors, the
//! JSON wire types and a small blocking HTTP client.
//!
//! Routes (all `POST`, JSON bodies, images as base64 PNG):
//!
//! | route          | request                                   | response              |
//! |----------------|-------------------------------------------|-----------------------|
//! | `/v1/segment`  | `{image, part, points:[{x,y,positive}], seed}` | `{mask, model}`  |
//! | `/v1/inpaint`  | `{image, mask}`                           | `{image, model}`      |
//! | `/v1/classify` | `{image}`                                 | `{label, scores}`     |

use std::collections::BTreeMap;
use std::time::Duration;

use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::dataio::{BinaryMask, Label, RasterImage};
use crate::segpipe::PointPrompt;

/// Name and locality of a backend, recorded in run provenance.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BackendDescriptor {
    pub name: String,
    pub remote: bool,
}

impl BackendDescriptor {
    pub fn local(name: impl Into<String>) -> Self {
        Self { name: name.into(), remote: false }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BackendError {
    #[error("backend unreachable: {0}")]
    Unreachable(String),
    #[error("backend returned a malformed response: {0}")]
    MalformedResponse(String),
    #[error("backend has no data for this image")]
    UnknownImage,
    #[error("backend rejected the request: {0}")]
    Rejected(String),
}

/// Hex SHA-256 over shape and samples; keys oracle lookups and fingerprints.
pub fn image_fingerprint(img: &RasterImage) -> String {
    let mut h = Sha256::new();
    h.update(img.width().to_le_bytes());
    h.update(img.height().to_le_bytes());
    h.update([img.channels()]);
    h.update(img.data());
    hex_digest(h)
}

pub(crate) fn hex_digest(h: Sha256) -> String {
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

pub fn encode_image(img: &RasterImage) -> Result<String, BackendError> {
    img.to_png_bytes().map(|b| B64.encode(b)).map_err(|e| BackendError::Rejected(e.to_string()))
}

pub fn encode_mask(mask: &BinaryMask) -> Result<String, BackendError> {
    mask.to_png_bytes().map(|b| B64.encode(b)).map_err(|e| BackendError::Rejected(e.to_string()))
}

pub fn decode_image(b64: &str) -> Result<RasterImage, String> {
    let bytes = B64.decode(b64).map_err(|e| format!("invalid base64: {e}"))?;
    RasterImage::from_encoded_bytes(&bytes).map_err(|e| e.to_string())
}

pub fn decode_mask(b64: &str) -> Result<BinaryMask, String> {
    let img = decode_image(b64)?;
    if !img.is_gray() {
        return Err("mask must be a 1-channel PNG".into());
    }
    Ok(BinaryMask::from_image(&img))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SegmentRequest {
    pub image: String,
    pub part: String,
    pub points: Vec<PointPrompt>,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SegmentResponse {
    pub mask: String,
    pub model: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InpaintRequest {
    pub image: String,
    pub mask: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InpaintResponse {
    pub image: String,
    pub model: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassifyRequest {
    pub image: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassifyResponse {
    pub label: Label,
    pub scores: BTreeMap<Label, f64>,
}

/// Blocking JSON client bound to a base URL such as `http://127.0.0.1:8080`.
#[derive(Clone)]
pub struct HttpClient {
    base: String,
    agent: ureq::Agent,
}

impl std::fmt::Debug for HttpClient {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("HttpClient").field("base", &self.base).finish()
    }
}

impl HttpClient {
    pub fn new(base: impl Into<String>) -> Self {
        Self::with_timeout(base, Duration::from_secs(120))
    }

    pub fn with_timeout(base: impl Into<String>, timeout: Duration) -> Self {
        let config = ureq::Agent::config_builder()
            .http_status_as_error(false)
            .timeout_global(Some(timeout))
            .build();
        let base = base.into().trim_end_matches('/').to_string();
        Self { base, agent: ureq::Agent::new_with_config(config) }
    }

    pub fn base(&self) -> &str {
        &self.base
    }

    pub fn post_json<Req: Serialize, Resp: DeserializeOwned>(
        &self,
        route: &str,
        body: &Req,
    ) -> Result<Resp, BackendError> {
        let url = format!("{}{}", self.base, route);
        let mut resp = self.agent.post(&url).send_json(body).map_err(transport_error)?;
        let status = resp.status().as_u16();
        if status != 200 {
            let text = resp.body_mut().read_to_string().unwrap_or_default();
            return Err(BackendError::MalformedResponse(format!("status {status}: {}", text.trim())));
        }
        let text = resp
            .body_mut()
            .read_to_string()
            .map_err(|e| BackendError::MalformedResponse(e.to_string()))?;
        serde_json::from_str(&text).map_err(|e| BackendError::MalformedResponse(format!("schema violation: {e}")))
    }
}

fn transport_error(e: ureq::Error) -> BackendError {
    match e {
        ureq::Error::Io(_)
        | ureq::Error::ConnectionFailed
        | ureq::Error::HostNotFound
        | ureq::Error::Timeout(_) => BackendError::Unreachable(e.to_string()),
        ureq::Error::BadUri(u) => BackendError::Unreachable(format!("bad url {u}")),
        other => BackendError::MalformedResponse(other.to_string()),
    }
}
