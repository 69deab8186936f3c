//! Synthetic bolt fixtures: a bright plate with a dark split pin (head and
//! two legs), a mid-gray shaft and a dark nut, plus ground-truth part masks.
//! Used by the built-in heuristic classifier, tests and demos.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use crate::dataio::{
    save_image, save_mask, BinaryMask, DataError, DatasetManifest, DatasetRole, InstanceRecord, Label, ManifestEntry,
    PixelBox, PolygonLabel, RasterImage, Split,
};
use crate::rng::SeededRng;
use crate::segpipe::PartLabel;

/// Axis-aligned region in thousandths of the crop size.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Zone {
    pub x0: u32,
    pub x1: u32,
    pub y0: u32,
    pub y1: u32,
}

impl Zone {
    /// Pixel rectangle `(x0, y0, x1, y1)`, half-open, edges floored.
    pub fn rect(&self, width: u32, height: u32) -> (u32, u32, u32, u32) {
        let fx = |f: u32| (f as u64 * width as u64 / 1000) as u32;
        let fy = |f: u32| (f as u64 * height as u64 / 1000) as u32;
        (fx(self.x0), fy(self.y0), fx(self.x1), fy(self.y1))
    }
}

/// Pin head, left leg, right leg.
pub const PIN_ZONES: [Zone; 3] = [
    Zone { x0: 420, x1: 580, y0: 150, y1: 300 },
    Zone { x0: 350, x1: 450, y0: 300, y1: 500 },
    Zone { x0: 550, x1: 650, y0: 300, y1: 500 },
];
pub const NUT_ZONE: Zone = Zone { x0: 300, x1: 700, y0: 620, y1: 850 };
pub const SHAFT_ZONE: Zone = Zone { x0: 440, x1: 560, y0: 500, y1: 620 };

pub const PLATE_LEVEL: u8 = 190;
pub const PART_LEVEL: u8 = 60;
pub const SHAFT_LEVEL: u8 = 135;
const NOISE: i32 = 6;

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticBolt {
    pub image: RasterImage,
    pub parts: BTreeMap<PartLabel, BinaryMask>,
}

impl SyntheticBolt {
    /// Union of the three pin part masks.
    pub fn pin_mask(&self) -> BinaryMask {
        PartLabel::PIN_PARTS
            .iter()
            .map(|p| self.parts[p].clone())
            .reduce(|a, b| a.union(&b).expect("same shape"))
            .expect("three parts")
    }

    pub fn mask_for(&self, label: PolygonLabel) -> BinaryMask {
        match label {
            PolygonLabel::Pin => self.pin_mask(),
            other => {
                let part = PartLabel::from_polygon(other)[0];
                self.parts[&part].clone()
            }
        }
    }
}

fn zone_mask(z: &Zone, w: u32, h: u32) -> BinaryMask {
    let (x0, y0, x1, y1) = z.rect(w, h);
    BinaryMask::rect(w, h, x0, y0, x1, y1)
}

fn jitter(rng: &mut SeededRng, level: u8) -> u8 {
    let n = rng.below((2 * NOISE + 1) as u64) as i32 - NOISE;
    (level as i32 + n).clamp(0, 255) as u8
}

/// Render a `width × height` grayscale bolt crop. The same seed always
/// gives the same pixels.
pub fn synth_bolt(width: u32, height: u32, seed: u64) -> SyntheticBolt {
    let parts: BTreeMap<PartLabel, BinaryMask> = [
        (PartLabel::Pin0, zone_mask(&PIN_ZONES[0], width, height)),
        (PartLabel::Pin1, zone_mask(&PIN_ZONES[1], width, height)),
        (PartLabel::Pin2, zone_mask(&PIN_ZONES[2], width, height)),
        (PartLabel::Nut, zone_mask(&NUT_ZONE, width, height)),
    ]
    .into_iter()
    .collect();
    let shaft = zone_mask(&SHAFT_ZONE, width, height);
    let mut rng = SeededRng::new(seed);
    let image = RasterImage::gray_from_fn(width, height, |x, y| {
        let level = if parts.values().any(|m| m.get(x, y)) {
            PART_LEVEL
        } else if shaft.get(x, y) {
            SHAFT_LEVEL
        } else {
            PLATE_LEVEL
        };
        jitter(&mut rng, level)
    })
    .expect("positive size");
    SyntheticBolt { image, parts }
}

/// A bolt with the given parts painted over with plate gray.
pub fn synth_defective_bolt(width: u32, height: u32, seed: u64, missing: &[PartLabel]) -> SyntheticBolt {
    let mut bolt = synth_bolt(width, height, seed);
    let mut rng = SeededRng::new(seed ^ 0x9e37_79b9_7f4a_7c15);
    for p in missing {
        for (x, y) in bolt.parts[p].set_pixels() {
            bolt.image.set(x, y, 0, jitter(&mut rng, PLATE_LEVEL));
        }
        bolt.parts.insert(*p, BinaryMask::empty(width, height));
    }
    bolt
}

/// Instance placed in a synthetic inspection scene.
#[derive(Clone, Debug)]
pub struct SceneInstance {
    pub bbox: PixelBox,
    pub label: Label,
    pub bolt: SyntheticBolt,
}

/// Scene with bolts pasted into the given boxes over a darker plate.
pub fn synth_scene(width: u32, height: u32, layout: &[(PixelBox, Label)], seed: u64) -> (RasterImage, Vec<SceneInstance>) {
    let mut rng = SeededRng::new(seed);
    let mut image = RasterImage::gray_from_fn(width, height, |_, _| jitter(&mut rng, 170)).expect("positive size");
    let mut instances = Vec::new();
    for (k, &(bbox, label)) in layout.iter().enumerate() {
        let bseed = seed.wrapping_mul(1000).wrapping_add(k as u64);
        let missing: &[PartLabel] = match label {
            Label::Normal => &[],
            Label::PinLosing => &PartLabel::PIN_PARTS,
            Label::NutLosing => &[PartLabel::Pin0, PartLabel::Pin1, PartLabel::Pin2, PartLabel::Nut],
        };
        let bolt = synth_defective_bolt(bbox.width(), bbox.height(), bseed, missing);
        crate::dataio::embed_patch(&mut image, &bbox, &bolt.image).expect("layout fits the scene");
        instances.push(SceneInstance { bbox, label, bolt });
    }
    (image, instances)
}

/// Fixed layout of a 256×192 scene: two eligible normals, one small normal
/// and one exactly 64×64 box that alternates between normal and pin losing.
pub fn scene_layout(index: usize) -> Vec<(PixelBox, Label)> {
    vec![
        (PixelBox::new(10, 10, 106, 106), Label::Normal),
        (PixelBox::new(120, 20, 200, 100), Label::Normal),
        (PixelBox::new(210, 130, 250, 180), Label::Normal),
        (PixelBox::new(20, 120, 84, 184), if index.is_multiple_of(2) { Label::PinLosing } else { Label::Normal }),
    ]
}

pub const SCENE_SIZE: (u32, u32) = (256, 192);

fn mkdir(dir: &Path) -> Result<(), DataError> {
    fs::create_dir_all(dir).map_err(|e| DataError::io(dir, e))
}

/// Write `n_images` synthetic inspection scenes with crop-local part masks
/// and a detection manifest (`manifest.jsonl`) into `dir`. The last
/// `n_test` images go to the test split.
pub fn write_detection_fixture(dir: &Path, n_images: usize, n_test: usize, seed: u64) -> Result<DatasetManifest, DataError> {
    mkdir(&dir.join("images"))?;
    mkdir(&dir.join("masks"))?;
    let mut entries = Vec::new();
    for i in 0..n_images {
        let id = format!("scene_{i:03}");
        let (img, instances) = synth_scene(SCENE_SIZE.0, SCENE_SIZE.1, &scene_layout(i), seed.wrapping_add(i as u64));
        let rel = format!("images/{id}.png");
        save_image(&img, dir.join(&rel))?;
        let split = if i + n_test >= n_images { Split::Test } else { Split::Train };
        let mut entry = ManifestEntry::new(rel, split, DatasetRole::Detection);
        for (k, inst) in instances.iter().enumerate() {
            let mut rec = InstanceRecord::new(inst.bbox, inst.label);
            for label in [PolygonLabel::Pin0, PolygonLabel::Pin1, PolygonLabel::Pin2, PolygonLabel::Nut] {
                let mask_rel = format!("masks/{id}_{k}_{}.png", polygon_name(label));
                save_mask(&inst.bolt.mask_for(label), dir.join(&mask_rel))?;
                rec.masks.insert(label, mask_rel);
            }
            entry.instances.push(rec);
        }
        entries.push(entry);
    }
    let m = DatasetManifest::new(dir, entries);
    m.save(dir.join("manifest.jsonl"))?;
    Ok(m)
}

/// Write `n` normal bolt crops with whole-image part masks as a generation
/// manifest (`manifest.jsonl`) into `dir`.
pub fn write_generation_fixture(dir: &Path, n: usize, size: u32, seed: u64) -> Result<DatasetManifest, DataError> {
    mkdir(&dir.join("crops"))?;
    mkdir(&dir.join("masks"))?;
    let mut entries = Vec::new();
    for i in 0..n {
        let id = format!("bolt_{i:03}");
        let bolt = synth_bolt(size, size, seed.wrapping_add(i as u64));
        let rel = format!("crops/{id}.png");
        save_image(&bolt.image, dir.join(&rel))?;
        let mut entry = ManifestEntry::new(rel, Split::Train, DatasetRole::Generation);
        entry.instances.push(InstanceRecord::new(PixelBox::new(0, 0, size, size), Label::Normal));
        for label in [PolygonLabel::Pin0, PolygonLabel::Pin1, PolygonLabel::Pin2, PolygonLabel::Nut] {
            let mask_rel = format!("masks/{id}_{}.png", polygon_name(label));
            save_mask(&bolt.mask_for(label), dir.join(&mask_rel))?;
            entry.masks.insert(label, mask_rel);
        }
        entries.push(entry);
    }
    let m = DatasetManifest::new(dir, entries);
    m.save(dir.join("manifest.jsonl"))?;
    Ok(m)
}

fn polygon_name(label: PolygonLabel) -> &'static str {
    match label {
        PolygonLabel::Nut => "nut",
        PolygonLabel::Pin0 => "pin0",
        PolygonLabel::Pin1 => "pin1",
        PolygonLabel::Pin2 => "pin2",
        PolygonLabel::Pin => "pin",
    }
}
