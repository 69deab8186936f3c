use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{DataError, Label, PixelBox, PolygonLabel};
use crate::rng::SeededRng;
use crate::segpipe::PointPrompt;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DatasetRole {
    Detection,
    Generation,
    AttributeSegmentation,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Test,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    Original,
    Copied,
    Edited,
}

/// A labeled box inside a manifest record. Optional per-part masks and
/// prompts refer to the cropped instance (crop-local coordinates).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InstanceRecord {
    #[serde(rename = "box")]
    pub bbox: PixelBox,
    pub label: Label,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub masks: BTreeMap<PolygonLabel, String>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub prompts: BTreeMap<PolygonLabel, Vec<PointPrompt>>,
}

impl InstanceRecord {
    pub fn new(bbox: PixelBox, label: Label) -> Self {
        Self { bbox, label, masks: BTreeMap::new(), prompts: BTreeMap::new() }
    }
}

/// One line of `manifest.jsonl`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestEntry {
    pub image: String,
    pub split: Split,
    pub role: DatasetRole,
    pub provenance: Provenance,
    #[serde(default)]
    pub instances: Vec<InstanceRecord>,
    /// Whole-image part masks (generation / attribute segmentation roles).
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub masks: BTreeMap<PolygonLabel, String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub polygons: Option<String>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub prompts: BTreeMap<PolygonLabel, Vec<PointPrompt>>,
    /// Image this entry was derived from (augmented entries only).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source: Option<String>,
}

impl ManifestEntry {
    pub fn new(image: impl Into<String>, split: Split, role: DatasetRole) -> Self {
        Self {
            image: image.into(),
            split,
            role,
            provenance: Provenance::Original,
            instances: Vec::new(),
            masks: BTreeMap::new(),
            polygons: None,
            prompts: BTreeMap::new(),
            source: None,
        }
    }

    /// Identifier derived from the image path (file stem).
    pub fn image_id(&self) -> String {
        Path::new(&self.image)
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| self.image.clone())
    }

    fn referenced_files(&self) -> impl Iterator<Item = &String> {
        std::iter::once(&self.image)
            .chain(self.masks.values())
            .chain(self.polygons.iter())
            .chain(self.instances.iter().flat_map(|i| i.masks.values()))
    }
}

/// Declarative dataset listing; relative paths resolve against `base_dir`.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct DatasetManifest {
    pub base_dir: PathBuf,
    pub entries: Vec<ManifestEntry>,
}

impl DatasetManifest {
    pub fn new(base_dir: impl Into<PathBuf>, entries: Vec<ManifestEntry>) -> Self {
        Self { base_dir: base_dir.into(), entries }
    }

    /// Parse JSONL text without touching the filesystem.
    pub fn parse_jsonl(text: &str, base_dir: impl Into<PathBuf>) -> Result<Self, DataError> {
        let mut entries = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let entry: ManifestEntry = serde_json::from_str(line)
                .map_err(|e| DataError::MalformedLine { line: i + 1, reason: e.to_string() })?;
            entries.push(entry);
        }
        Ok(Self { base_dir: base_dir.into(), entries })
    }

    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for e in &self.entries {
            out.push_str(&serde_json::to_string(e).expect("manifest entries serialize"));
            out.push('\n');
        }
        out
    }

    pub fn resolve(&self, rel: &str) -> PathBuf {
        let p = Path::new(rel);
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    /// Every referenced file must exist.
    pub fn check_files(&self) -> Result<(), DataError> {
        for e in &self.entries {
            for f in e.referenced_files() {
                let p = self.resolve(f);
                if !p.is_file() {
                    return Err(DataError::NotFound(p));
                }
            }
        }
        Ok(())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), DataError> {
        let path = path.as_ref();
        fs::write(path, self.to_jsonl()).map_err(|e| DataError::io(path, e))
    }
}

/// Load `manifest.jsonl`, verifying that all referenced files exist.
pub fn load_manifest(path: impl AsRef<Path>) -> Result<DatasetManifest, DataError> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| DataError::io(path, e))?;
    let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
    let m = DatasetManifest::parse_jsonl(&text, base)?;
    m.check_files()?;
    Ok(m)
}

/// Image and per-class instance counts.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassCounts {
    pub images: u64,
    pub normal: u64,
    pub pin_losing: u64,
    pub nut_losing: u64,
    pub all: u64,
}

impl ClassCounts {
    pub fn add_label(&mut self, label: Label) {
        match label {
            Label::Normal => self.normal += 1,
            Label::PinLosing => self.pin_losing += 1,
            Label::NutLosing => self.nut_losing += 1,
        }
        self.all += 1;
    }

    pub fn get(&self, label: Label) -> u64 {
        match label {
            Label::Normal => self.normal,
            Label::PinLosing => self.pin_losing,
            Label::NutLosing => self.nut_losing,
        }
    }

    pub fn merge(&self, other: &ClassCounts) -> ClassCounts {
        ClassCounts {
            images: self.images + other.images,
            normal: self.normal + other.normal,
            pin_losing: self.pin_losing + other.pin_losing,
            nut_losing: self.nut_losing + other.nut_losing,
            all: self.all + other.all,
        }
    }

    pub fn is_consistent(&self) -> bool {
        self.normal + self.pin_losing + self.nut_losing == self.all
    }
}

fn count_entries<'a>(entries: impl Iterator<Item = &'a ManifestEntry>) -> ClassCounts {
    let mut c = ClassCounts::default();
    for e in entries {
        c.images += 1;
        for inst in &e.instances {
            c.add_label(inst.label);
        }
    }
    c
}

/// Per-class instance counts over the whole manifest.
pub fn manifest_stats(m: &DatasetManifest) -> ClassCounts {
    count_entries(m.entries.iter())
}

pub fn manifest_stats_by_split(m: &DatasetManifest) -> BTreeMap<Split, ClassCounts> {
    [Split::Train, Split::Test]
        .into_iter()
        .map(|s| (s, count_entries(m.entries.iter().filter(|e| e.split == s))))
        .collect()
}

/// Class × {Train, Test, Total} table of images and instances.
pub fn render_stats_table(m: &DatasetManifest) -> String {
    let by_split = manifest_stats_by_split(m);
    let train = by_split[&Split::Train];
    let test = by_split[&Split::Test];
    let total = train.merge(&test);
    let mut out = String::new();
    let row = |out: &mut String, name: &str, f: &dyn Fn(&ClassCounts) -> u64| {
        let _ = writeln!(out, "{:<20}{:>8}{:>8}{:>8}", name, f(&train), f(&test), f(&total));
    };
    let _ = writeln!(out, "{:<20}{:>8}{:>8}{:>8}", "Class", "Train", "Test", "Total");
    row(&mut out, "Inspection images", &|c| c.images);
    let _ = writeln!(out, "Number of instances");
    row(&mut out, "Normal", &|c| c.normal);
    row(&mut out, "Pin losing", &|c| c.pin_losing);
    row(&mut out, "Nut losing", &|c| c.nut_losing);
    row(&mut out, "All", &|c| c.all);
    out
}

/// Seeded reassignment of entries to train/test. `test_count` entries are
/// drawn without replacement for the test split; the rest become train.
pub fn split_entries(m: &DatasetManifest, test_count: usize, seed: u64) -> DatasetManifest {
    let mut rng = SeededRng::new(seed);
    let picked = rng.sample_indices(m.entries.len(), test_count);
    let mut is_test = vec![false; m.entries.len()];
    for i in picked {
        is_test[i] = true;
    }
    let entries = m
        .entries
        .iter()
        .zip(is_test)
        .map(|(e, t)| ManifestEntry { split: if t { Split::Test } else { Split::Train }, ..e.clone() })
        .collect();
    DatasetManifest { base_dir: m.base_dir.clone(), entries }
}
