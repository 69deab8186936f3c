//! Part segmentation: point-prompt sampling, pluggable segmenter backends
//! and fusion of per-part masks into one attribute mask.

use std::collections::{BTreeMap, HashMap, HashSet, VecDeque};
use std::fmt;
use std::str::FromStr;
use std::sync::RwLock;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backend::{
    decode_mask, encode_image, image_fingerprint, BackendDescriptor, BackendError, HttpClient, SegmentRequest,
    SegmentResponse,
};
use crate::dataio::{
    crop_instance, load_image, load_mask, BinaryMask, DataError, DatasetManifest, Label, PolygonLabel, RasterImage,
};
use crate::metrics::{seg_metrics, SegScores};
use crate::morphmod::{close, StructElement};
use crate::rng::SeededRng;

/// Default number of prompt points per part.
pub const DEFAULT_PROMPTS: usize = 3;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PointPrompt {
    pub x: u32,
    pub y: u32,
    #[serde(default = "positive_default")]
    pub positive: bool,
}

fn positive_default() -> bool {
    true
}

impl PointPrompt {
    pub fn positive(x: u32, y: u32) -> Self {
        Self { x, y, positive: true }
    }

    pub fn negative(x: u32, y: u32) -> Self {
        Self { x, y, positive: false }
    }
}

/// Segmentable sub-part of a fastener.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PartLabel {
    Pin0,
    Pin1,
    Pin2,
    Nut,
}

impl PartLabel {
    pub const PIN_PARTS: [PartLabel; 3] = [PartLabel::Pin0, PartLabel::Pin1, PartLabel::Pin2];

    pub fn as_str(self) -> &'static str {
        match self {
            PartLabel::Pin0 => "pin0",
            PartLabel::Pin1 => "pin1",
            PartLabel::Pin2 => "pin2",
            PartLabel::Nut => "nut",
        }
    }

    /// Parts whose union forms a polygon label (`pin` covers all pin parts).
    pub fn from_polygon(label: PolygonLabel) -> &'static [PartLabel] {
        match label {
            PolygonLabel::Pin0 => &[PartLabel::Pin0],
            PolygonLabel::Pin1 => &[PartLabel::Pin1],
            PolygonLabel::Pin2 => &[PartLabel::Pin2],
            PolygonLabel::Nut => &[PartLabel::Nut],
            PolygonLabel::Pin => &PartLabel::PIN_PARTS,
        }
    }

    pub fn to_polygon(self) -> PolygonLabel {
        match self {
            PartLabel::Pin0 => PolygonLabel::Pin0,
            PartLabel::Pin1 => PolygonLabel::Pin1,
            PartLabel::Pin2 => PolygonLabel::Pin2,
            PartLabel::Nut => PolygonLabel::Nut,
        }
    }
}

impl fmt::Display for PartLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for PartLabel {
    type Err = SegError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "pin0" => Ok(PartLabel::Pin0),
            "pin1" => Ok(PartLabel::Pin1),
            "pin2" => Ok(PartLabel::Pin2),
            "nut" => Ok(PartLabel::Nut),
            other => Err(SegError::UnknownPart(other.to_string())),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PartSpec {
    pub part: PartLabel,
    pub prompts: Vec<PointPrompt>,
}

impl PartSpec {
    pub fn new(part: PartLabel, prompts: Vec<PointPrompt>) -> Self {
        Self { part, prompts }
    }

    pub fn validate(&self, width: u32, height: u32) -> Result<(), SegError> {
        if !self.prompts.iter().any(|p| p.positive) {
            return Err(SegError::InvalidPrompt(format!("part {} has no positive prompt", self.part)));
        }
        if let Some(p) = self.prompts.iter().find(|p| p.x >= width || p.y >= height) {
            return Err(SegError::InvalidPrompt(format!("({}, {}) outside {width}x{height}", p.x, p.y)));
        }
        Ok(())
    }
}

#[derive(Debug, Error)]
pub enum SegError {
    #[error("ground-truth mask is empty")]
    EmptyMask,
    #[error("prompt count must be at least 1")]
    ZeroPrompts,
    #[error("invalid prompt: {0}")]
    InvalidPrompt(String),
    #[error("unknown part {0:?}")]
    UnknownPart(String),
    #[error("no part masks to fuse")]
    NoParts,
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Backend(#[from] BackendError),
}

/// Mask produced by a backend together with the model that produced it.
#[derive(Clone, Debug, PartialEq)]
pub struct Segmentation {
    pub mask: BinaryMask,
    pub model: String,
}

/// A point-prompted part segmenter. Must be deterministic for a fixed
/// `(image, prompts, seed)`.
pub trait SegmenterBackend: Send + Sync {
    fn descriptor(&self) -> BackendDescriptor;
    fn segment(&self, img: &RasterImage, spec: &PartSpec, seed: u64) -> Result<Segmentation, BackendError>;
}

/// Fastener attribute that an edit removes.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Attribute {
    Pin,
    Nut,
}

impl Attribute {
    pub fn as_str(self) -> &'static str {
        match self {
            Attribute::Pin => "pin",
            Attribute::Nut => "nut",
        }
    }

    pub fn parts(self) -> &'static [PartLabel] {
        match self {
            Attribute::Pin => &PartLabel::PIN_PARTS,
            Attribute::Nut => &[PartLabel::Nut],
        }
    }

    /// Defect class an image has once this attribute is removed.
    pub fn defect_label(self) -> Label {
        match self {
            Attribute::Pin => Label::PinLosing,
            Attribute::Nut => Label::NutLosing,
        }
    }
}

impl fmt::Display for Attribute {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Attribute {
    type Err = SegError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "pin" => Ok(Attribute::Pin),
            "nut" => Ok(Attribute::Nut),
            other => Err(SegError::UnknownPart(other.to_string())),
        }
    }
}

/// Prompts for `part`: the listed ones when present, otherwise one positive
/// point at the image center.
pub fn prompts_for(
    part: PartLabel,
    listed: &BTreeMap<PolygonLabel, Vec<PointPrompt>>,
    width: u32,
    height: u32,
) -> Vec<PointPrompt> {
    match listed.get(&part.to_polygon()) {
        Some(p) if !p.is_empty() => p.clone(),
        _ => vec![PointPrompt::positive(width / 2, height / 2)],
    }
}

/// Segment every part of `attr` and fuse the results.
pub fn segment_attribute(
    backend: &dyn SegmenterBackend,
    img: &RasterImage,
    attr: Attribute,
    prompts: &BTreeMap<PolygonLabel, Vec<PointPrompt>>,
    seed: u64,
) -> Result<BinaryMask, SegError> {
    let masks = attr
        .parts()
        .iter()
        .enumerate()
        .map(|(k, &part)| {
            let spec = PartSpec::new(part, prompts_for(part, prompts, img.width(), img.height()));
            segment_part(backend, img, &spec, seed.wrapping_add(k as u64)).map(|s| s.mask)
        })
        .collect::<Result<Vec<_>, _>>()?;
    fuse_parts(&masks)
}

/// Draw `n` distinct set pixels of `gt` as positive prompts. When the mask
/// has fewer than `n` set pixels, all of them are returned.
pub fn sample_prompts(gt: &BinaryMask, n: usize, seed: u64) -> Result<Vec<PointPrompt>, SegError> {
    if n == 0 {
        return Err(SegError::ZeroPrompts);
    }
    let pixels = gt.set_pixels();
    if pixels.is_empty() {
        return Err(SegError::EmptyMask);
    }
    let mut rng = SeededRng::new(seed);
    Ok(rng
        .sample_indices(pixels.len(), n)
        .into_iter()
        .map(|i| PointPrompt::positive(pixels[i].0, pixels[i].1))
        .collect())
}

/// Validate the prompts, call the backend and check the returned shape.
pub fn segment_part(
    backend: &dyn SegmenterBackend,
    img: &RasterImage,
    spec: &PartSpec,
    seed: u64,
) -> Result<Segmentation, SegError> {
    spec.validate(img.width(), img.height())?;
    let out = backend.segment(img, spec, seed)?;
    if out.mask.dimensions() != img.dimensions() {
        return Err(BackendError::MalformedResponse(format!(
            "mask {:?} does not match image {:?}",
            out.mask.dimensions(),
            img.dimensions()
        ))
        .into());
    }
    Ok(out)
}

/// Union of the part masks followed by a 3×3 closing. Pixels of the union
/// are always kept, so border pixels survive the closing as well.
pub fn fuse_parts(parts: &[BinaryMask]) -> Result<BinaryMask, SegError> {
    let (first, rest) = parts.split_first().ok_or(SegError::NoParts)?;
    let mut union = first.clone();
    for m in rest {
        union = union.union(m)?;
    }
    let closed = close(&union, &StructElement::square3());
    Ok(closed.union(&union)?)
}

/// Segmentation scores of a predicted mask against ground truth.
pub fn evaluate_segmentation(pred: &BinaryMask, gt: &BinaryMask) -> Result<SegScores, SegError> {
    Ok(seg_metrics(pred, gt)?)
}

/// Returns stored ground-truth masks for images it has been given.
#[derive(Default)]
pub struct OracleSegmenter {
    masks: RwLock<HashMap<String, HashMap<PartLabel, BinaryMask>>>,
}

impl OracleSegmenter {
    pub fn new() -> Self {
        Self::default()
    }

    /// Register a ground-truth mask for one part of `img`.
    pub fn insert(&self, img: &RasterImage, part: PartLabel, mask: BinaryMask) {
        let key = image_fingerprint(img);
        self.masks.write().expect("oracle lock").entry(key).or_default().insert(part, mask);
    }

    /// Register an image whose unlisted parts are empty.
    pub fn register(&self, img: &RasterImage) {
        let key = image_fingerprint(img);
        self.masks.write().expect("oracle lock").entry(key).or_default();
    }

    pub fn len(&self) -> usize {
        self.masks.read().expect("oracle lock").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

impl OracleSegmenter {
    /// Oracle holding every stored part mask of a manifest: whole-image
    /// masks of generation entries and crop-local masks of detection
    /// instances (registered against the cropped pixels). A combined `pin`
    /// mask is stored as `pin0`.
    pub fn from_manifest(m: &DatasetManifest) -> Result<Self, DataError> {
        let oracle = Self::new();
        for e in &m.entries {
            let has_instance_masks = e.instances.iter().any(|i| !i.masks.is_empty());
            if e.masks.is_empty() && !has_instance_masks {
                continue;
            }
            let img = load_image(m.resolve(&e.image))?;
            oracle.register_masks(m, &img, &e.masks)?;
            for inst in e.instances.iter().filter(|i| !i.masks.is_empty()) {
                let crop = crop_instance(&img, &inst.bbox)?;
                oracle.register_masks(m, &crop, &inst.masks)?;
            }
        }
        Ok(oracle)
    }

    fn register_masks(
        &self,
        m: &DatasetManifest,
        img: &RasterImage,
        masks: &BTreeMap<PolygonLabel, String>,
    ) -> Result<(), DataError> {
        if masks.is_empty() {
            return Ok(());
        }
        self.register(img);
        for (label, rel) in masks {
            let mask = load_mask(m.resolve(rel))?;
            if mask.dimensions() != img.dimensions() {
                return Err(DataError::DimensionMismatch { left: mask.dimensions(), right: img.dimensions() });
            }
            let part = match label {
                PolygonLabel::Pin => PartLabel::Pin0,
                other => PartLabel::from_polygon(*other)[0],
            };
            self.insert(img, part, mask);
        }
        Ok(())
    }
}

impl SegmenterBackend for OracleSegmenter {
    fn descriptor(&self) -> BackendDescriptor {
        BackendDescriptor::local("oracle")
    }

    fn segment(&self, img: &RasterImage, spec: &PartSpec, _seed: u64) -> Result<Segmentation, BackendError> {
        let map = self.masks.read().expect("oracle lock");
        let parts = map.get(&image_fingerprint(img)).ok_or(BackendError::UnknownImage)?;
        let mask = parts
            .get(&spec.part)
            .cloned()
            .unwrap_or_else(|| BinaryMask::empty(img.width(), img.height()));
        Ok(Segmentation { mask, model: "oracle".into() })
    }
}

/// Otsu threshold over a 256-bin luma histogram; pixels `<= t` form the dark class.
pub fn otsu_threshold(gray: &[u8]) -> u8 {
    let mut hist = [0u64; 256];
    for &v in gray {
        hist[v as usize] += 1;
    }
    let total = gray.len() as f64;
    let sum_all: f64 = hist.iter().enumerate().map(|(v, &c)| v as f64 * c as f64).sum();
    let (mut w0, mut sum0) = (0.0, 0.0);
    let (mut best_t, mut best) = (0u8, -1.0);
    for (t, &c) in hist.iter().enumerate() {
        w0 += c as f64;
        sum0 += t as f64 * c as f64;
        let w1 = total - w0;
        if w0 == 0.0 || w1 == 0.0 {
            continue;
        }
        let m0 = sum0 / w0;
        let m1 = (sum_all - sum0) / w1;
        let between = w0 * w1 * (m0 - m1) * (m0 - m1);
        if between > best {
            best = between;
            best_t = t as u8;
        }
    }
    best_t
}

/// Otsu split plus 4-connected flood fill from each positive prompt over
/// pixels on the prompt's side of the threshold. Components containing a
/// negative prompt are dropped.
#[derive(Clone, Copy, Debug, Default)]
pub struct ThresholdSegmenter;

impl ThresholdSegmenter {
    fn fill(gray: &RasterImage, dark: &[bool], seed: (u32, u32), seen: &mut [bool]) -> Vec<usize> {
        let w = gray.width() as usize;
        let h = gray.height() as usize;
        let start = seed.1 as usize * w + seed.0 as usize;
        let class = dark[start];
        let mut out = Vec::new();
        if seen[start] {
            return out;
        }
        let mut queue = VecDeque::from([start]);
        seen[start] = true;
        while let Some(i) = queue.pop_front() {
            out.push(i);
            let (x, y) = (i % w, i / w);
            let mut push = |j: usize| {
                if !seen[j] && dark[j] == class {
                    seen[j] = true;
                    queue.push_back(j);
                }
            };
            if x > 0 {
                push(i - 1);
            }
            if x + 1 < w {
                push(i + 1);
            }
            if y > 0 {
                push(i - w);
            }
            if y + 1 < h {
                push(i + w);
            }
        }
        out
    }
}

impl SegmenterBackend for ThresholdSegmenter {
    fn descriptor(&self) -> BackendDescriptor {
        BackendDescriptor::local("threshold")
    }

    fn segment(&self, img: &RasterImage, spec: &PartSpec, _seed: u64) -> Result<Segmentation, BackendError> {
        let gray = img.to_luma();
        let t = otsu_threshold(gray.data());
        let dark: Vec<bool> = gray.data().iter().map(|&v| v <= t).collect();
        let n = dark.len();
        let mut keep = vec![false; n];
        let mut seen = vec![false; n];
        for p in spec.prompts.iter().filter(|p| p.positive) {
            for i in Self::fill(&gray, &dark, (p.x, p.y), &mut seen) {
                keep[i] = true;
            }
        }
        let mut seen_neg = vec![false; n];
        for p in spec.prompts.iter().filter(|p| !p.positive) {
            let comp = Self::fill(&gray, &dark, (p.x, p.y), &mut seen_neg);
            let drop: HashSet<usize> = comp.into_iter().collect();
            for i in drop {
                keep[i] = false;
            }
        }
        let mask = BinaryMask::from_bits(img.width(), img.height(), keep.into_iter().map(u8::from).collect())
            .expect("shape preserved");
        Ok(Segmentation { mask, model: "threshold-otsu-v1".into() })
    }
}

/// Remote segmenter speaking the `/v1/segment` protocol.
#[derive(Clone, Debug)]
pub struct HttpSegmenter {
    client: HttpClient,
}

impl HttpSegmenter {
    pub fn new(base_url: impl Into<String>) -> Self {
        Self { client: HttpClient::new(base_url) }
    }

    pub fn with_client(client: HttpClient) -> Self {
        Self { client }
    }
}

impl SegmenterBackend for HttpSegmenter {
    fn descriptor(&self) -> BackendDescriptor {
        BackendDescriptor { name: format!("http:{}", self.client.base()), remote: true }
    }

    fn segment(&self, img: &RasterImage, spec: &PartSpec, seed: u64) -> Result<Segmentation, BackendError> {
        let req = SegmentRequest {
            image: encode_image(img)?,
            part: spec.part.as_str().to_string(),
            points: spec.prompts.clone(),
            seed,
        };
        let resp: SegmentResponse = self.client.post_json("/v1/segment", &req)?;
        let mask = decode_mask(&resp.mask).map_err(BackendError::MalformedResponse)?;
        Ok(Segmentation { mask, model: resp.model })
    }
}
