//! Attribute removal: optimize the part mask, inpaint it through a backend
//! and composite the result back over the untouched pixels.

use std::collections::VecDeque;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;
use tracing::{info, warn};

use crate::backend::{
    decode_image, encode_image, encode_mask, BackendDescriptor, BackendError, HttpClient, InpaintRequest,
    InpaintResponse,
};
use crate::dataio::{
    load_image, load_mask, save_image, save_mask, BinaryMask, DataError, DatasetManifest, DatasetRole, Label,
    ManifestEntry, PolygonLabel, Provenance, RasterImage,
};
use crate::morphmod::{mod_optimize, ModConfig, MorphError};
use crate::scalar::{quantize_u8, Scalar};
use crate::segpipe::{fuse_parts, segment_attribute, SegError, SegmenterBackend};

pub use crate::segpipe::Attribute;

/// Default convergence threshold of the harmonic fill, in gray levels.
pub const DEFAULT_TOL: f64 = 1e-3;

#[derive(Debug, Error)]
pub enum EditError {
    #[error("mask became empty after morphological optimization")]
    MaskBecameEmpty,
    #[error("mask {mask:?} does not match image {image:?}")]
    DimensionMismatch { image: (u32, u32), mask: (u32, u32) },
    #[error("no {0} masks in the manifest entry and no segmenter configured")]
    MissingMasks(Attribute),
    #[error("entry role must be generation, got {0:?}")]
    WrongRole(DatasetRole),
    #[error("parallelism must be at least 1")]
    ZeroParallelism,
    #[error(transparent)]
    Morph(#[from] MorphError),
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error(transparent)]
    Seg(#[from] SegError),
    #[error(transparent)]
    Data(#[from] DataError),
}

/// Stopping rule of the harmonic fill.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HarmonicConfig {
    pub tol: f64,
    /// Sweep limit; `None` means `10·(W + H)`.
    pub max_iter: Option<usize>,
    /// Record the squared-Laplacian energy after every sweep.
    #[serde(skip)]
    pub log_energy: bool,
}

impl Default for HarmonicConfig {
    fn default() -> Self {
        Self { tol: DEFAULT_TOL, max_iter: None, log_energy: false }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct HarmonicOutcome {
    pub image: RasterImage,
    pub iterations: usize,
    pub converged: bool,
    /// Largest `|mean of neighbors − value|` over masked samples at exit.
    pub residual: f64,
    /// Σ (mean of neighbors − value)² over masked samples, one per sweep
    /// (summed over channels).
    pub energy: Vec<f64>,
}

struct Channel<T> {
    u: Vec<T>,
    iterations: usize,
    converged: bool,
    residual: f64,
    energy: Vec<f64>,
}

fn neighbors(i: usize, w: usize, h: usize) -> impl Iterator<Item = usize> {
    let (x, y) = (i % w, i / w);
    [
        (x > 0).then(|| i - 1),
        (x + 1 < w).then(|| i + 1),
        (y > 0).then(|| i - w),
        (y + 1 < h).then(|| i + w),
    ]
    .into_iter()
    .flatten()
}

fn neighbor_mean<T: Scalar>(u: &[T], i: usize, w: usize, h: usize) -> T {
    let (mut s, mut n) = (T::zero(), 0u32);
    for j in neighbors(i, w, h) {
        s = s + u[j];
        n += 1;
    }
    if n == 0 {
        u[i]
    } else {
        s / T::of(n as f64)
    }
}

/// Initial guess: a half-resolution solve copied up, clamped to each
/// component's boundary range. Components with no boundary start at the
/// mean of all known samples. Every iterate then stays inside the range.
fn initialize<T: Scalar>(u: &mut [T], masked: &[bool], w: usize, h: usize, tol: T) {
    let known: Vec<T> = u.iter().zip(masked).filter(|(_, &m)| !m).map(|(v, _)| *v).collect();
    let fallback = if known.is_empty() {
        T::zero()
    } else {
        known.iter().copied().sum::<T>() / T::of(known.len() as f64)
    };
    let mut components = Vec::new();
    let mut seen = vec![false; u.len()];
    for start in 0..u.len() {
        if !masked[start] || seen[start] {
            continue;
        }
        let mut comp = Vec::new();
        let mut range: Option<(T, T)> = None;
        let mut queue = VecDeque::from([start]);
        seen[start] = true;
        while let Some(i) = queue.pop_front() {
            comp.push(i);
            for j in neighbors(i, w, h) {
                if masked[j] {
                    if !seen[j] {
                        seen[j] = true;
                        queue.push_back(j);
                    }
                } else {
                    range = Some(range.map_or((u[j], u[j]), |(lo, hi)| (lo.min(u[j]), hi.max(u[j]))));
                }
            }
        }
        components.push((comp, range));
    }
    coarse_guess(u, masked, w, h, tol);
    for (comp, range) in components {
        for i in comp {
            u[i] = match range {
                Some((lo, hi)) => u[i].max(lo).min(hi),
                None => fallback,
            };
        }
    }
}

/// Fill masked samples from the same problem on 2×2 blocks. A block is
/// known when any of its samples is, with their mean as its value.
fn coarse_guess<T: Scalar>(u: &mut [T], masked: &[bool], w: usize, h: usize, tol: T) {
    if w <= 2 && h <= 2 {
        return;
    }
    let (cw, ch) = (w.div_ceil(2), h.div_ceil(2));
    let cell = |i: usize| (i / w / 2) * cw + (i % w) / 2;
    let mut sum = vec![T::zero(); cw * ch];
    let mut count = vec![0u32; cw * ch];
    for i in (0..u.len()).filter(|&i| !masked[i]) {
        sum[cell(i)] = sum[cell(i)] + u[i];
        count[cell(i)] += 1;
    }
    let cmasked: Vec<bool> = count.iter().map(|&n| n == 0).collect();
    let mut cu: Vec<T> = sum.iter().zip(&count).map(|(&s, &n)| if n == 0 { T::zero() } else { s / T::of(n as f64) }).collect();
    let corder: Vec<usize> = (0..cw * ch).filter(|&k| cmasked[k]).collect();
    if !corder.is_empty() {
        initialize(&mut cu, &cmasked, cw, ch, tol);
        for _ in 0..10 * (cw + ch) {
            if sweep(&mut cu, &corder, cw, ch) < tol {
                break;
            }
        }
    }
    // bilinear between block centers, which sit at fine coordinate 2k + 0.5
    let axis = |v: usize, n: usize| {
        let t = (v as f64 - 0.5) / 2.0;
        let k0 = t.floor().clamp(0.0, (n - 1) as f64) as usize;
        let k1 = (k0 + 1).min(n - 1);
        (k0, k1, T::of((t - k0 as f64).clamp(0.0, 1.0)))
    };
    for i in (0..u.len()).filter(|&i| masked[i]) {
        let (x0, x1, fx) = axis(i % w, cw);
        let (y0, y1, fy) = axis(i / w, ch);
        let lerp = |a: T, b: T, f: T| a + (b - a) * f;
        let top = lerp(cu[y0 * cw + x0], cu[y0 * cw + x1], fx);
        let bottom = lerp(cu[y1 * cw + x0], cu[y1 * cw + x1], fx);
        u[i] = lerp(top, bottom, fy);
    }
}

/// One Gauss-Seidel pass; returns the largest update.
fn sweep<T: Scalar>(u: &mut [T], order: &[usize], w: usize, h: usize) -> T {
    let mut max_delta = T::zero();
    for &i in order {
        let v = neighbor_mean(u, i, w, h);
        max_delta = max_delta.max((v - u[i]).abs());
        u[i] = v;
    }
    max_delta
}

fn solve_channel<T: Scalar>(
    mut u: Vec<T>,
    masked: &[bool],
    order: &[usize],
    w: usize,
    h: usize,
    cfg: &HarmonicConfig,
    max_iter: usize,
) -> Channel<T> {
    let tol = T::of(cfg.tol);
    initialize(&mut u, masked, w, h, tol);
    let mut energy = Vec::new();
    let mut iterations = 0;
    let mut converged = false;
    while iterations < max_iter {
        let max_delta = sweep(&mut u, order, w, h);
        iterations += 1;
        if cfg.log_energy {
            energy.push(order.iter().map(|&i| (neighbor_mean(&u, i, w, h) - u[i]).powi(2)).sum::<T>().to_f64_lossy());
        }
        if max_delta < tol {
            converged = true;
            break;
        }
    }
    let residual = order
        .iter()
        .map(|&i| (neighbor_mean(&u, i, w, h) - u[i]).abs().to_f64_lossy())
        .fold(0.0, f64::max);
    Channel { u, iterations, converged, residual, energy }
}

/// Fill masked samples with the discrete harmonic extension of their
/// surroundings (each value the mean of its in-bounds 4-neighbors), solved
/// by Gauss-Seidel sweeps in raster order from a coarse-grid estimate.
/// Channels are independent; values are rounded half up once at the end.
pub fn harmonic_inpaint<T: Scalar>(
    img: &RasterImage,
    mask: &BinaryMask,
    cfg: &HarmonicConfig,
) -> Result<HarmonicOutcome, EditError> {
    if img.dimensions() != mask.dimensions() {
        return Err(EditError::DimensionMismatch { image: img.dimensions(), mask: mask.dimensions() });
    }
    let (w, h) = (img.width() as usize, img.height() as usize);
    let c = img.channels() as usize;
    let masked: Vec<bool> = mask.bits().iter().map(|&b| b != 0).collect();
    let order: Vec<usize> = (0..w * h).filter(|&i| masked[i]).collect();
    let max_iter = cfg.max_iter.unwrap_or(10 * (w + h));
    let mut out = img.clone();
    let mut outcome = HarmonicOutcome {
        image: img.clone(),
        iterations: 0,
        converged: true,
        residual: 0.0,
        energy: Vec::new(),
    };
    if order.is_empty() {
        return Ok(outcome);
    }
    for ch in 0..c {
        let u: Vec<T> = img.data().iter().skip(ch).step_by(c).map(|&v| T::of(v as f64)).collect();
        let res = solve_channel(u, &masked, &order, w, h, cfg, max_iter);
        for &i in &order {
            out.data_mut()[i * c + ch] = quantize_u8(res.u[i]);
        }
        outcome.iterations = outcome.iterations.max(res.iterations);
        outcome.converged &= res.converged;
        outcome.residual = outcome.residual.max(res.residual);
        if outcome.energy.len() < res.energy.len() {
            outcome.energy.resize(res.energy.len(), 0.0);
        }
        for (k, e) in res.energy.iter().enumerate() {
            outcome.energy[k] += e;
        }
    }
    outcome.image = out;
    Ok(outcome)
}

/// Result of an inpainting backend call.
#[derive(Clone, Debug, PartialEq)]
pub struct Inpainting {
    pub image: RasterImage,
    pub model: String,
    pub warning: Option<String>,
}

pub trait InpainterBackend: Send + Sync {
    fn descriptor(&self) -> BackendDescriptor;
    fn inpaint(&self, img: &RasterImage, mask: &BinaryMask) -> Result<Inpainting, BackendError>;
}

/// Built-in deterministic inpainter based on [`harmonic_inpaint`].
#[derive(Clone, Copy, Debug, Default)]
pub struct HarmonicInpainter {
    pub config: HarmonicConfig,
}

impl InpainterBackend for HarmonicInpainter {
    fn descriptor(&self) -> BackendDescriptor {
        BackendDescriptor::local("harmonic")
    }

    fn inpaint(&self, img: &RasterImage, mask: &BinaryMask) -> Result<Inpainting, BackendError> {
        let out = harmonic_inpaint::<f64>(img, mask, &self.config).map_err(|e| BackendError::Rejected(e.to_string()))?;
        let warning = (!out.converged).then(|| {
            format!("harmonic fill stopped after {} sweeps, residual {:.3e}", out.iterations, out.residual)
        });
        Ok(Inpainting { image: out.image, model: "harmonic-gs-v1".into(), warning })
    }
}

/// Returns its input unchanged; the editor of the copy-augmentation control.
#[derive(Clone, Copy, Debug, Default)]
pub struct IdentityInpainter;

impl InpainterBackend for IdentityInpainter {
    fn descriptor(&self) -> BackendDescriptor {
        BackendDescriptor::local("identity")
    }

    fn inpaint(&self, img: &RasterImage, _mask: &BinaryMask) -> Result<Inpainting, BackendError> {
        Ok(Inpainting { image: img.clone(), model: "identity".into(), warning: None })
    }
}

/// Remote inpainter speaking the `/v1/inpaint` protocol.
#[derive(Clone, Debug)]
pub struct HttpInpainter {
    client: HttpClient,
}

impl HttpInpainter {
    pub fn new(base_url: impl Into<String>) -> Self {
        Self { client: HttpClient::new(base_url) }
    }

    pub fn with_client(client: HttpClient) -> Self {
        Self { client }
    }
}

impl InpainterBackend for HttpInpainter {
    fn descriptor(&self) -> BackendDescriptor {
        BackendDescriptor { name: format!("http:{}", self.client.base()), remote: true }
    }

    fn inpaint(&self, img: &RasterImage, mask: &BinaryMask) -> Result<Inpainting, BackendError> {
        let req = InpaintRequest { image: encode_image(img)?, mask: encode_mask(mask)? };
        let resp: InpaintResponse = self.client.post_json("/v1/inpaint", &req)?;
        let image = decode_image(&resp.image).map_err(BackendError::MalformedResponse)?;
        if (image.width(), image.height(), image.channels()) != (img.width(), img.height(), img.channels()) {
            return Err(BackendError::MalformedResponse(format!(
                "returned {}x{}x{} for a {}x{}x{} request",
                image.width(),
                image.height(),
                image.channels(),
                img.width(),
                img.height(),
                img.channels()
            )));
        }
        Ok(Inpainting { image, model: resp.model, warning: None })
    }
}

/// Output of [`edit_attribute`].
#[derive(Clone, Debug, PartialEq)]
pub struct Edit {
    pub image: RasterImage,
    pub mask_raw: BinaryMask,
    pub mask_mod: BinaryMask,
    pub backend: String,
    pub model: String,
    pub warning: Option<String>,
    pub started_ms: u64,
    pub finished_ms: u64,
}

fn now_ms() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_millis() as u64).unwrap_or(0)
}

/// Inpaint `mod_optimize(m_seg)` and restore every pixel outside it from
/// `img`, whatever the backend returned there.
pub fn edit_attribute(
    img: &RasterImage,
    m_seg: &BinaryMask,
    cfg: &ModConfig,
    backend: &dyn InpainterBackend,
) -> Result<Edit, EditError> {
    if img.dimensions() != m_seg.dimensions() {
        return Err(EditError::DimensionMismatch { image: img.dimensions(), mask: m_seg.dimensions() });
    }
    cfg.validate()?;
    let started_ms = now_ms();
    let mask_mod = mod_optimize(m_seg, cfg);
    if mask_mod.is_empty() {
        return Err(EditError::MaskBecameEmpty);
    }
    let painted = backend.inpaint(img, &mask_mod)?;
    if (painted.image.width(), painted.image.height(), painted.image.channels())
        != (img.width(), img.height(), img.channels())
    {
        return Err(BackendError::MalformedResponse("inpainted image has a different shape".into()).into());
    }
    let mut image = img.clone();
    for (x, y) in mask_mod.set_pixels() {
        image.pixel_mut(x, y).copy_from_slice(painted.image.pixel(x, y));
    }
    Ok(Edit {
        image,
        mask_raw: m_seg.clone(),
        mask_mod,
        backend: backend.descriptor().name,
        model: painted.model,
        warning: painted.warning,
        started_ms,
        finished_ms: now_ms(),
    })
}

/// Provenance of one edited image. Paths are relative to the output root.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EditRecord {
    pub source: String,
    pub source_image: String,
    pub attribute: Attribute,
    pub mask_raw: String,
    pub mask_mod: String,
    pub edited: String,
    pub backend: String,
    pub model: String,
    pub mod_config: ModConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub warning: Option<String>,
    pub started_ms: u64,
    pub finished_ms: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ItemFailure {
    pub image: String,
    pub reason: String,
}

/// Settings of [`batch_edit`].
#[derive(Clone, Debug)]
pub struct BatchConfig {
    pub mod_cfg: ModConfig,
    pub out_dir: PathBuf,
    pub parallel: usize,
    pub seed: u64,
}

#[derive(Clone, Debug, Default)]
pub struct BatchReport {
    pub records: Vec<EditRecord>,
    pub failures: Vec<ItemFailure>,
    /// One generation entry per edited image, relative to `out_dir`.
    pub manifest: DatasetManifest,
}

fn part_labels(attr: Attribute) -> &'static [PolygonLabel] {
    match attr {
        Attribute::Pin => &[PolygonLabel::Pin0, PolygonLabel::Pin1, PolygonLabel::Pin2, PolygonLabel::Pin],
        Attribute::Nut => &[PolygonLabel::Nut],
    }
}

/// Fused attribute mask from stored part masks, if the entry has any.
pub fn stored_attribute_mask(
    manifest: &DatasetManifest,
    masks: &std::collections::BTreeMap<PolygonLabel, String>,
    attr: Attribute,
) -> Result<Option<BinaryMask>, EditError> {
    let parts = part_labels(attr)
        .iter()
        .filter_map(|l| masks.get(l))
        .map(|rel| load_mask(manifest.resolve(rel)))
        .collect::<Result<Vec<_>, _>>()?;
    if parts.is_empty() {
        return Ok(None);
    }
    Ok(Some(fuse_parts(&parts)?))
}

pub(crate) fn mkdirs(dir: &Path) -> Result<(), EditError> {
    fs::create_dir_all(dir).map_err(|e| EditError::Data(DataError::io(dir, e)))
}

fn edit_entry(
    manifest: &DatasetManifest,
    entry: &ManifestEntry,
    attr: Attribute,
    seg: Option<&dyn SegmenterBackend>,
    inpaint: &dyn InpainterBackend,
    cfg: &BatchConfig,
) -> Result<(EditRecord, ManifestEntry), EditError> {
    if entry.role != DatasetRole::Generation {
        return Err(EditError::WrongRole(entry.role));
    }
    let img = load_image(manifest.resolve(&entry.image))?;
    let m_seg = match stored_attribute_mask(manifest, &entry.masks, attr)? {
        Some(m) => m,
        None => {
            let seg = seg.ok_or(EditError::MissingMasks(attr))?;
            segment_attribute(seg, &img, attr, &entry.prompts, cfg.seed)?
        }
    };
    let edit = edit_attribute(&img, &m_seg, &cfg.mod_cfg, inpaint)?;
    let id = entry.image_id();
    let edited = format!("edited/{id}_{attr}.png");
    let mask_raw = format!("masks/{id}_{attr}_raw.png");
    let mask_mod = format!("masks/{id}_{attr}_mod.png");
    save_image(&edit.image, cfg.out_dir.join(&edited))?;
    save_mask(&edit.mask_raw, cfg.out_dir.join(&mask_raw))?;
    save_mask(&edit.mask_mod, cfg.out_dir.join(&mask_mod))?;
    if let Some(w) = &edit.warning {
        warn!(image = %id, "{w}");
    }
    let record = EditRecord {
        source: id,
        source_image: manifest.resolve(&entry.image).to_string_lossy().into_owned(),
        attribute: attr,
        mask_raw,
        mask_mod,
        edited: edited.clone(),
        backend: edit.backend,
        model: edit.model,
        mod_config: cfg.mod_cfg.clone(),
        warning: edit.warning,
        started_ms: edit.started_ms,
        finished_ms: edit.finished_ms,
    };
    let mut out = ManifestEntry::new(edited, entry.split, DatasetRole::Generation);
    out.provenance = Provenance::Edited;
    out.source = Some(record.source_image.clone());
    out.instances = entry
        .instances
        .iter()
        .map(|i| {
            let mut i = crate::dataio::InstanceRecord::new(i.bbox, i.label);
            if i.label == Label::Normal {
                i.label = attr.defect_label();
            }
            i
        })
        .collect();
    Ok((record, out))
}

/// Edit every entry of a generation manifest. Items fail independently;
/// results keep manifest order regardless of `parallel`.
pub fn batch_edit(
    manifest: &DatasetManifest,
    attr: Attribute,
    seg: Option<&dyn SegmenterBackend>,
    inpaint: &dyn InpainterBackend,
    cfg: &BatchConfig,
) -> Result<BatchReport, EditError> {
    if cfg.parallel == 0 {
        return Err(EditError::ZeroParallelism);
    }
    cfg.mod_cfg.validate()?;
    mkdirs(&cfg.out_dir.join("edited"))?;
    mkdirs(&cfg.out_dir.join("masks"))?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.parallel)
        .build()
        .map_err(|e| EditError::Backend(BackendError::Rejected(e.to_string())))?;
    let results: Vec<_> = pool.install(|| {
        manifest
            .entries
            .par_iter()
            .map(|e| (e, edit_entry(manifest, e, attr, seg, inpaint, cfg)))
            .collect()
    });
    let mut report = BatchReport { manifest: DatasetManifest::new(&cfg.out_dir, Vec::new()), ..Default::default() };
    for (entry, r) in results {
        match r {
            Ok((rec, out)) => {
                info!(image = %rec.source, attribute = %attr, "edited");
                report.records.push(rec);
                report.manifest.entries.push(out);
            }
            Err(e) => {
                warn!(image = %entry.image, error = %e, "edit failed");
                report.failures.push(ItemFailure { image: entry.image.clone(), reason: e.to_string() });
            }
        }
    }
    Ok(report)
}
