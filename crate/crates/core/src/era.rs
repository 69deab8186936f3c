//! Editing-recovery augmentation: edit eligible normal instances of
//! inspection scenes, paste the edited crops back, relabel them and append
//! the new scenes to the training split.

use std::collections::BTreeMap;
use std::fmt::{self, Write as _};
use std::path::Path;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;
use tracing::{info, warn};

use crate::dataio::{
    crop_instance, load_image, load_mask, save_image, ClassCounts, DataError, DatasetManifest, DatasetRole,
    InstanceAnnotation, Label, ManifestEntry, PixelBox, PolygonLabel, Provenance, RasterImage, Split,
};
use crate::editpipe::{edit_attribute, EditError, InpainterBackend, ItemFailure};
use crate::morphmod::ModConfig;
use crate::rng::SeededRng;
use crate::segpipe::{sample_prompts, segment_attribute, Attribute, PointPrompt, SegmenterBackend, DEFAULT_PROMPTS};

/// Instances must be strictly larger than this on both sides.
pub const DEFAULT_MIN_SIDE: u32 = 64;

#[derive(Debug, Error)]
pub enum EraError {
    #[error("crop is {crop:?} but the box is {bbox:?}")]
    CropSizeMismatch { crop: (u32, u32), bbox: (u32, u32) },
    #[error("crop has {crop} channels, scene has {scene}")]
    ChannelMismatch { crop: u8, scene: u8 },
    #[error("recovered label must be a defect class, got {0}")]
    NotADefect(Label),
    #[error("invalid policy {0:?}")]
    InvalidPolicy(String),
    #[error("parallelism must be at least 1")]
    ZeroParallelism,
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Edit(#[from] EditError),
}

/// Edited crop and where it goes.
#[derive(Clone, Debug, PartialEq)]
pub struct RecoverySpec {
    pub image_id: String,
    pub bbox: PixelBox,
    pub crop: RasterImage,
    pub new_label: Label,
}

/// Paste the crop into its box: pixels inside the box come from the crop,
/// all others from `ins`.
pub fn recover(ins: &RasterImage, spec: &RecoverySpec) -> Result<RasterImage, EraError> {
    if spec.new_label == Label::Normal {
        return Err(EraError::NotADefect(spec.new_label));
    }
    if !spec.bbox.fits_within(ins.width(), ins.height()) {
        return Err(DataError::BoxOutOfBounds { bbox: spec.bbox, width: ins.width(), height: ins.height() }.into());
    }
    if spec.crop.dimensions() != (spec.bbox.width(), spec.bbox.height()) {
        return Err(EraError::CropSizeMismatch {
            crop: spec.crop.dimensions(),
            bbox: (spec.bbox.width(), spec.bbox.height()),
        });
    }
    if spec.crop.channels() != ins.channels() {
        return Err(EraError::ChannelMismatch { crop: spec.crop.channels(), scene: ins.channels() });
    }
    let mut out = ins.clone();
    crate::dataio::embed_patch(&mut out, &spec.bbox, &spec.crop)?;
    Ok(out)
}

/// Position of an editable instance inside a manifest.
#[derive(Clone, Debug, PartialEq)]
pub struct EditableInstance {
    pub entry: usize,
    pub instance: usize,
    pub annotation: InstanceAnnotation,
}

/// Original train-split detection instances labeled normal whose box is
/// strictly wider and taller than `min_side`.
pub fn filter_editable(manifest: &DatasetManifest, min_side: u32) -> Vec<EditableInstance> {
    let mut out = Vec::new();
    for (ei, e) in manifest.entries.iter().enumerate() {
        if e.role != DatasetRole::Detection || e.split != Split::Train || e.provenance != Provenance::Original {
            continue;
        }
        for (ii, inst) in e.instances.iter().enumerate() {
            if inst.label == Label::Normal && inst.bbox.width() > min_side && inst.bbox.height() > min_side {
                out.push(EditableInstance {
                    entry: ei,
                    instance: ii,
                    annotation: InstanceAnnotation::new(e.image_id(), inst.bbox, inst.label),
                });
            }
        }
    }
    out
}

/// How edited attributes are assigned to instances.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum AttributePolicy {
    AllPin,
    AllNut,
    /// Pin with probability `p`, drawn from the seeded generator.
    Ratio(f64),
    RoundRobin,
}

impl fmt::Display for AttributePolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            AttributePolicy::AllPin => f.write_str("all_pin"),
            AttributePolicy::AllNut => f.write_str("all_nut"),
            AttributePolicy::Ratio(p) => write!(f, "ratio:{p}"),
            AttributePolicy::RoundRobin => f.write_str("round_robin"),
        }
    }
}

impl FromStr for AttributePolicy {
    type Err = EraError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "all_pin" | "pin" => Ok(AttributePolicy::AllPin),
            "all_nut" | "nut" => Ok(AttributePolicy::AllNut),
            "round_robin" => Ok(AttributePolicy::RoundRobin),
            _ => {
                let p: f64 = s
                    .strip_prefix("ratio:")
                    .and_then(|v| v.parse().ok())
                    .ok_or_else(|| EraError::InvalidPolicy(s.to_string()))?;
                if !(0.0..=1.0).contains(&p) {
                    return Err(EraError::InvalidPolicy(s.to_string()));
                }
                Ok(AttributePolicy::Ratio(p))
            }
        }
    }
}

impl Serialize for AttributePolicy {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for AttributePolicy {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        String::deserialize(d)?.parse().map_err(serde::de::Error::custom)
    }
}

/// Deterministic stream of attribute choices for a policy.
pub struct PolicyAssigner {
    policy: AttributePolicy,
    rng: SeededRng,
    count: u64,
}

impl PolicyAssigner {
    pub fn new(policy: AttributePolicy, seed: u64) -> Self {
        Self { policy, rng: SeededRng::new(seed), count: 0 }
    }

    pub fn next_attribute(&mut self) -> Attribute {
        let k = self.count;
        self.count += 1;
        match self.policy {
            AttributePolicy::AllPin => Attribute::Pin,
            AttributePolicy::AllNut => Attribute::Nut,
            AttributePolicy::RoundRobin => {
                if k.is_multiple_of(2) {
                    Attribute::Pin
                } else {
                    Attribute::Nut
                }
            }
            AttributePolicy::Ratio(p) => {
                if self.rng.unit_f64() < p {
                    Attribute::Pin
                } else {
                    Attribute::Nut
                }
            }
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EraMode {
    /// Edit and relabel eligible instances.
    #[default]
    Edit,
    /// Control group: duplicate the selected scenes unchanged.
    Copy,
}

impl EraMode {
    fn suffix(self) -> &'static str {
        match self {
            EraMode::Edit => "sbde",
            EraMode::Copy => "copy",
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Grouping {
    /// Every eligible instance of a selected scene is edited.
    #[default]
    AllPerImage,
    /// Only the first eligible instance of each scene is edited.
    OnePerImage,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EraConfig {
    pub min_side: u32,
    pub policy: AttributePolicy,
    pub seed: u64,
    pub mode: EraMode,
    pub grouping: Grouping,
    pub mod_cfg: ModConfig,
    pub n_prompts: usize,
    pub parallel: usize,
}

impl Default for EraConfig {
    fn default() -> Self {
        Self {
            min_side: DEFAULT_MIN_SIDE,
            policy: AttributePolicy::Ratio(0.69),
            seed: 0,
            mode: EraMode::Edit,
            grouping: Grouping::AllPerImage,
            mod_cfg: ModConfig::default(),
            n_prompts: DEFAULT_PROMPTS,
            parallel: 1,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SkippedInstance {
    pub image: String,
    pub instance: usize,
    pub attribute: Attribute,
    pub reason: String,
}

/// What an augmentation run added to the training split.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct AugmentationReport {
    pub mode: EraMode,
    /// `images` counts added scenes; the label fields count every instance
    /// on them.
    pub added: ClassCounts,
    pub edited_instances: u64,
    pub edited_by_attribute: BTreeMap<Attribute, u64>,
    pub skipped: Vec<SkippedInstance>,
    pub failed_images: Vec<ItemFailure>,
}

impl AugmentationReport {
    /// Per-class deltas add up to the instances on the added images.
    pub fn reconciles(&self) -> bool {
        self.added.is_consistent() && self.edited_by_attribute.values().sum::<u64>() == self.edited_instances
    }

    pub fn has_failures(&self) -> bool {
        !self.skipped.is_empty() || !self.failed_images.is_empty()
    }
}

struct ImageTask {
    entry: usize,
    jobs: Vec<(usize, Attribute)>,
}

struct ImageResult {
    entry: ManifestEntry,
    edited: Vec<Attribute>,
    skipped: Vec<SkippedInstance>,
}

/// Prompts per part: listed prompts first, then samples of the stored part
/// mask, then (inside `segment_attribute`) the crop center.
fn instance_prompts(
    manifest: &DatasetManifest,
    rec: &crate::dataio::InstanceRecord,
    attr: Attribute,
    n: usize,
    seed: u64,
) -> Result<BTreeMap<PolygonLabel, Vec<PointPrompt>>, EraError> {
    let mut out = BTreeMap::new();
    for (k, part) in attr.parts().iter().enumerate() {
        let label = part.to_polygon();
        if let Some(p) = rec.prompts.get(&label).filter(|p| !p.is_empty()) {
            out.insert(label, p.clone());
        } else if let Some(rel) = rec.masks.get(&label) {
            let mask = load_mask(manifest.resolve(rel))?;
            if let Ok(p) = sample_prompts(&mask, n, seed.wrapping_add(k as u64)) {
                out.insert(label, p);
            }
        }
    }
    Ok(out)
}

fn augmented_path(image: &str, suffix: &str) -> String {
    let p = Path::new(image);
    let stem = p.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    let name = format!("{stem}_{suffix}.png");
    match p.parent().filter(|d| !d.as_os_str().is_empty()) {
        Some(d) => d.join(name).to_string_lossy().into_owned(),
        None => name,
    }
}

fn item_seed(seed: u64, entry: usize, instance: usize) -> u64 {
    seed ^ ((entry as u64) << 32 | instance as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15)
}

fn process_image(
    manifest: &DatasetManifest,
    task: &ImageTask,
    seg: &dyn SegmenterBackend,
    inpaint: &dyn InpainterBackend,
    cfg: &EraConfig,
) -> Result<ImageResult, EraError> {
    let src = &manifest.entries[task.entry];
    let mut scene = load_image(manifest.resolve(&src.image))?;
    let mut entry = src.clone();
    entry.provenance = match cfg.mode {
        EraMode::Edit => Provenance::Edited,
        EraMode::Copy => Provenance::Copied,
    };
    entry.source = Some(src.image.clone());
    entry.image = augmented_path(&src.image, cfg.mode.suffix());
    entry.polygons = None;
    for inst in &mut entry.instances {
        inst.masks.clear();
        inst.prompts.clear();
    }
    let mut edited = Vec::new();
    let mut skipped = Vec::new();
    if cfg.mode == EraMode::Edit {
        for &(ii, attr) in &task.jobs {
            let rec = &src.instances[ii];
            let seed = item_seed(cfg.seed, task.entry, ii);
            let attempt = (|| -> Result<RasterImage, EraError> {
                let crop = crop_instance(&scene, &rec.bbox)?;
                let prompts = instance_prompts(manifest, rec, attr, cfg.n_prompts, seed)?;
                let m_seg = segment_attribute(seg, &crop, attr, &prompts, seed).map_err(EditError::from)?;
                let edit = edit_attribute(&crop, &m_seg, &cfg.mod_cfg, inpaint)?;
                let spec = RecoverySpec {
                    image_id: src.image_id(),
                    bbox: rec.bbox,
                    crop: edit.image,
                    new_label: attr.defect_label(),
                };
                recover(&scene, &spec)
            })();
            match attempt {
                Ok(out) => {
                    scene = out;
                    entry.instances[ii].label = attr.defect_label();
                    edited.push(attr);
                }
                Err(e) => {
                    warn!(image = %src.image, instance = ii, error = %e, "instance skipped");
                    skipped.push(SkippedInstance {
                        image: src.image.clone(),
                        instance: ii,
                        attribute: attr,
                        reason: e.to_string(),
                    });
                }
            }
        }
        if edited.is_empty() {
            return Ok(ImageResult { entry, edited, skipped });
        }
    }
    save_image(&scene, manifest.resolve(&entry.image))?;
    Ok(ImageResult { entry, edited, skipped })
}

/// Run the augmentation. Original entries are carried over unchanged and
/// new scenes are appended after them; the test split is never touched.
pub fn era_augment(
    manifest: &DatasetManifest,
    seg: &dyn SegmenterBackend,
    inpaint: &dyn InpainterBackend,
    cfg: &EraConfig,
) -> Result<(DatasetManifest, AugmentationReport), EraError> {
    if cfg.parallel == 0 {
        return Err(EraError::ZeroParallelism);
    }
    cfg.mod_cfg.validate().map_err(EditError::from)?;
    let mut assigner = PolicyAssigner::new(cfg.policy, cfg.seed);
    let mut tasks: Vec<ImageTask> = Vec::new();
    for e in filter_editable(manifest, cfg.min_side) {
        match tasks.last_mut() {
            Some(t) if t.entry == e.entry => {
                if cfg.grouping == Grouping::AllPerImage {
                    t.jobs.push((e.instance, assigner.next_attribute()));
                }
            }
            _ => tasks.push(ImageTask { entry: e.entry, jobs: vec![(e.instance, assigner.next_attribute())] }),
        }
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.parallel)
        .build()
        .map_err(|e| EraError::InvalidPolicy(e.to_string()))?;
    let results: Vec<(usize, Result<ImageResult, EraError>)> = pool.install(|| {
        tasks.par_iter().map(|t| (t.entry, process_image(manifest, t, seg, inpaint, cfg))).collect()
    });
    let mut out = manifest.clone();
    let mut report = AugmentationReport { mode: cfg.mode, ..Default::default() };
    for (entry_idx, r) in results {
        match r {
            Ok(res) => {
                report.skipped.extend(res.skipped);
                if cfg.mode == EraMode::Edit && res.edited.is_empty() {
                    continue;
                }
                report.added.images += 1;
                for inst in &res.entry.instances {
                    report.added.add_label(inst.label);
                }
                for a in res.edited {
                    report.edited_instances += 1;
                    *report.edited_by_attribute.entry(a).or_default() += 1;
                }
                info!(image = %res.entry.image, "augmented scene written");
                out.entries.push(res.entry);
            }
            Err(e) => {
                let image = manifest.entries[entry_idx].image.clone();
                warn!(image = %image, error = %e, "scene failed");
                report.failed_images.push(ItemFailure { image, reason: e.to_string() });
            }
        }
    }
    Ok((out, report))
}

/// Class × {Original, Copy-aug, SBDE-aug} table; augmented columns show
/// the added counts with a leading `+`.
type CountFn<'a> = &'a dyn Fn(&ClassCounts) -> u64;

pub fn render_augmentation_table(
    original: &ClassCounts,
    copy: Option<&AugmentationReport>,
    edit: Option<&AugmentationReport>,
) -> String {
    let delta = |r: Option<&AugmentationReport>, f: &dyn Fn(&ClassCounts) -> u64| match r {
        Some(r) => format!("+{}", f(&r.added)),
        None => "-".to_string(),
    };
    let mut out = String::new();
    let _ = writeln!(out, "{:<20}{:>10}{:>10}{:>10}", "Class", "Original", "Copy-aug", "SBDE-aug");
    let rows: [(&str, CountFn); 5] = [
        ("Inspection images", &|c| c.images),
        ("Normal", &|c| c.normal),
        ("Pin losing", &|c| c.pin_losing),
        ("Nut losing", &|c| c.nut_losing),
        ("All", &|c| c.all),
    ];
    for (k, (name, f)) in rows.iter().enumerate() {
        if k == 1 {
            let _ = writeln!(out, "Number of instances");
        }
        let _ = writeln!(out, "{:<20}{:>10}{:>10}{:>10}", name, f(original), delta(copy, *f), delta(edit, *f));
    }
    out
}
