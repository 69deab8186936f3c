use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::{BinaryMask, DataError, RasterImage};

/// Detection class of a fastener instance.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Label {
    Normal,
    PinLosing,
    NutLosing,
}

impl Label {
    pub const ALL: [Label; 3] = [Label::Normal, Label::PinLosing, Label::NutLosing];

    pub fn as_str(self) -> &'static str {
        match self {
            Label::Normal => "normal",
            Label::PinLosing => "pin_losing",
            Label::NutLosing => "nut_losing",
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Label {
    type Err = DataError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "normal" => Ok(Label::Normal),
            "pin_losing" => Ok(Label::PinLosing),
            "nut_losing" => Ok(Label::NutLosing),
            other => Err(DataError::UnknownLabel(other.to_string())),
        }
    }
}

/// Integer pixel box, half-open on the max edges: `[x_min, x_max) × [y_min, y_max)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct PixelBox {
    pub x_min: u32,
    pub y_min: u32,
    pub x_max: u32,
    pub y_max: u32,
}

impl PixelBox {
    pub fn new(x_min: u32, y_min: u32, x_max: u32, y_max: u32) -> Self {
        Self { x_min, y_min, x_max, y_max }
    }

    pub fn width(&self) -> u32 {
        self.x_max.saturating_sub(self.x_min)
    }

    pub fn height(&self) -> u32 {
        self.y_max.saturating_sub(self.y_min)
    }

    pub fn is_empty(&self) -> bool {
        self.width() == 0 || self.height() == 0
    }

    pub fn contains(&self, x: u32, y: u32) -> bool {
        x >= self.x_min && x < self.x_max && y >= self.y_min && y < self.y_max
    }

    pub fn fits_within(&self, width: u32, height: u32) -> bool {
        self.x_min < self.x_max && self.y_min < self.y_max && self.x_max <= width && self.y_max <= height
    }

    pub fn intersects(&self, other: &PixelBox) -> bool {
        self.x_min < other.x_max && other.x_min < self.x_max && self.y_min < other.y_max && other.y_min < self.y_max
    }

    pub fn to_array(self) -> [u32; 4] {
        [self.x_min, self.y_min, self.x_max, self.y_max]
    }

    pub fn from_array(a: [u32; 4]) -> Self {
        Self::new(a[0], a[1], a[2], a[3])
    }
}

impl Serialize for PixelBox {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        self.to_array().serialize(s)
    }
}

impl<'de> Deserialize<'de> for PixelBox {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        <[u32; 4]>::deserialize(d).map(PixelBox::from_array)
    }
}

/// One annotated fastener in an inspection image.
#[derive(Clone, Debug, PartialEq)]
pub struct InstanceAnnotation {
    pub image_id: String,
    pub bbox: PixelBox,
    pub label: Label,
    pub polygon: Option<Vec<(f64, f64)>>,
}

impl InstanceAnnotation {
    pub fn new(image_id: impl Into<String>, bbox: PixelBox, label: Label) -> Self {
        Self { image_id: image_id.into(), bbox, label, polygon: None }
    }

    pub fn validate(&self, width: u32, height: u32) -> Result<(), DataError> {
        if !self.bbox.fits_within(width, height) {
            return Err(DataError::BoxOutOfBounds { bbox: self.bbox, width, height });
        }
        if let Some(poly) = &self.polygon {
            let inside = poly
                .iter()
                .all(|&(x, y)| x >= 0.0 && y >= 0.0 && x <= width as f64 && y <= height as f64);
            if !inside {
                return Err(DataError::PolygonOutOfBounds);
            }
        }
        Ok(())
    }
}

/// Numeric class id to label mapping used by the normalized-box format.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ClassMap(pub BTreeMap<u32, Label>);

impl Default for ClassMap {
    fn default() -> Self {
        ClassMap(BTreeMap::from([(0, Label::Normal), (1, Label::PinLosing), (2, Label::NutLosing)]))
    }
}

impl ClassMap {
    pub fn get(&self, id: u32) -> Option<Label> {
        self.0.get(&id).copied()
    }

    pub fn id_of(&self, label: Label) -> Option<u32> {
        self.0.iter().find(|(_, &l)| l == label).map(|(&id, _)| id)
    }
}

#[inline]
fn round_half_up(v: f64) -> i64 {
    (v + 0.5).floor() as i64
}

/// Convert one normalized `cx cy w h` box into pixel edges.
pub fn normalized_to_pixel_box(cx: f64, cy: f64, w: f64, h: f64, image_w: u32, image_h: u32) -> PixelBox {
    let (iw, ih) = (image_w as f64, image_h as f64);
    let clamp = |v: i64, hi: u32| v.clamp(0, hi as i64) as u32;
    PixelBox {
        x_min: clamp(round_half_up(cx * iw - w * iw / 2.0), image_w),
        y_min: clamp(round_half_up(cy * ih - h * ih / 2.0), image_h),
        x_max: clamp(round_half_up(cx * iw + w * iw / 2.0), image_w),
        y_max: clamp(round_half_up(cy * ih + h * ih / 2.0), image_h),
    }
}

/// Parse normalized-box text (`class cx cy w h` per line).
pub fn parse_box_annotations_str(
    text: &str,
    image_id: &str,
    image_w: u32,
    image_h: u32,
    class_map: &ClassMap,
) -> Result<Vec<InstanceAnnotation>, DataError> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line_no = i + 1;
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let malformed = |reason: &str| DataError::MalformedLine { line: line_no, reason: reason.to_string() };
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 5 {
            return Err(malformed("expected 5 fields: class cx cy w h"));
        }
        let class: u32 = fields[0].parse().map_err(|_| malformed("class id is not an integer"))?;
        let mut vals = [0.0f64; 4];
        for (slot, f) in vals.iter_mut().zip(&fields[1..]) {
            let v: f64 = f.parse().map_err(|_| malformed("coordinate is not a number"))?;
            if !(0.0..=1.0).contains(&v) {
                return Err(malformed("coordinate outside [0, 1]"));
            }
            *slot = v;
        }
        let label = class_map.get(class).ok_or(DataError::UnknownClassId(class))?;
        let bbox = normalized_to_pixel_box(vals[0], vals[1], vals[2], vals[3], image_w, image_h);
        if bbox.is_empty() {
            return Err(DataError::DegenerateBox { line: line_no });
        }
        out.push(InstanceAnnotation::new(image_id, bbox, label));
    }
    Ok(out)
}

/// Read a normalized-box annotation file. The image id is the file stem.
pub fn parse_box_annotations(
    path: impl AsRef<Path>,
    image_w: u32,
    image_h: u32,
    class_map: &ClassMap,
) -> Result<Vec<InstanceAnnotation>, DataError> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| DataError::io(path, e))?;
    let id = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    parse_box_annotations_str(&text, &id, image_w, image_h, class_map)
}

/// Inverse of the box parser: emit `class cx cy w h` lines.
pub fn format_box_annotations(anns: &[InstanceAnnotation], image_w: u32, image_h: u32, class_map: &ClassMap) -> String {
    let (iw, ih) = (image_w as f64, image_h as f64);
    anns.iter()
        .filter_map(|a| {
            let id = class_map.id_of(a.label)?;
            let b = a.bbox;
            let cx = (b.x_min + b.x_max) as f64 / 2.0 / iw;
            let cy = (b.y_min + b.y_max) as f64 / 2.0 / ih;
            Some(format!("{id} {cx:.6} {cy:.6} {:.6} {:.6}\n", b.width() as f64 / iw, b.height() as f64 / ih))
        })
        .collect()
}

/// Copy the pixels of `ann.bbox` into a new image.
pub fn crop_instance(image: &RasterImage, bbox: &PixelBox) -> Result<RasterImage, DataError> {
    if bbox.is_empty() {
        return Err(DataError::EmptyBox(*bbox));
    }
    if !bbox.fits_within(image.width(), image.height()) {
        return Err(DataError::BoxOutOfBounds { bbox: *bbox, width: image.width(), height: image.height() });
    }
    let c = image.channels() as usize;
    let row_len = bbox.width() as usize * c;
    let mut data = Vec::with_capacity(row_len * bbox.height() as usize);
    for y in bbox.y_min..bbox.y_max {
        let start = (y as usize * image.width() as usize + bbox.x_min as usize) * c;
        data.extend_from_slice(&image.data()[start..start + row_len]);
    }
    RasterImage::new(bbox.width(), bbox.height(), image.channels(), data)
}

/// Write `patch` into `image` at the top-left corner of `bbox`.
pub fn embed_patch(image: &mut RasterImage, bbox: &PixelBox, patch: &RasterImage) -> Result<(), DataError> {
    if !bbox.fits_within(image.width(), image.height()) {
        return Err(DataError::BoxOutOfBounds { bbox: *bbox, width: image.width(), height: image.height() });
    }
    if patch.dimensions() != (bbox.width(), bbox.height()) || patch.channels() != image.channels() {
        return Err(DataError::DimensionMismatch {
            left: (bbox.width(), bbox.height()),
            right: patch.dimensions(),
        });
    }
    let c = image.channels() as usize;
    let row_len = bbox.width() as usize * c;
    let iw = image.width() as usize;
    for (row, y) in (bbox.y_min..bbox.y_max).enumerate() {
        let dst = (y as usize * iw + bbox.x_min as usize) * c;
        let src = row * row_len;
        image.data_mut()[dst..dst + row_len].copy_from_slice(&patch.data()[src..src + row_len]);
    }
    Ok(())
}

/// Part labels of the polygon attribute annotations.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolygonLabel {
    Nut,
    Pin0,
    Pin1,
    Pin2,
    Pin,
}

impl FromStr for PolygonLabel {
    type Err = DataError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "nut" => Ok(PolygonLabel::Nut),
            "pin0" => Ok(PolygonLabel::Pin0),
            "pin1" => Ok(PolygonLabel::Pin1),
            "pin2" => Ok(PolygonLabel::Pin2),
            "pin" => Ok(PolygonLabel::Pin),
            other => Err(DataError::UnknownLabel(other.to_string())),
        }
    }
}

#[derive(Deserialize)]
struct PolygonFile {
    shapes: Vec<PolygonShape>,
}

#[derive(Deserialize)]
struct PolygonShape {
    label: String,
    points: Vec<[f64; 2]>,
}

pub type LabeledPolygon = (PolygonLabel, Vec<(f64, f64)>);

/// Parse polygon-JSON (`{"shapes": [{"label", "points": [[x, y], ...]}]}`).
pub fn parse_polygon_annotations_str(json: &str) -> Result<Vec<LabeledPolygon>, DataError> {
    let file: PolygonFile = serde_json::from_str(json).map_err(|e| DataError::Json(e.to_string()))?;
    file.shapes
        .into_iter()
        .map(|shape| {
            let label: PolygonLabel = shape.label.parse()?;
            if shape.points.len() < 3 {
                return Err(DataError::TooFewVertices { label: shape.label, count: shape.points.len() });
            }
            Ok((label, shape.points.into_iter().map(|[x, y]| (x, y)).collect()))
        })
        .collect()
}

pub fn parse_polygon_annotations(path: impl AsRef<Path>) -> Result<Vec<LabeledPolygon>, DataError> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| DataError::io(path, e))?;
    parse_polygon_annotations_str(&text)
}

/// Even-odd scanline fill sampled at pixel centers `(x + 0.5, y + 0.5)`.
pub fn rasterize_polygon(polygon: &[(f64, f64)], width: u32, height: u32) -> BinaryMask {
    let mut mask = BinaryMask::empty(width, height);
    if polygon.len() < 3 {
        return mask;
    }
    let n = polygon.len();
    let mut crossings: Vec<f64> = Vec::with_capacity(n);
    for y in 0..height {
        let yc = y as f64 + 0.5;
        crossings.clear();
        for i in 0..n {
            let (x0, y0) = polygon[i];
            let (x1, y1) = polygon[(i + 1) % n];
            if (y0 > yc) != (y1 > yc) {
                crossings.push(x0 + (yc - y0) * (x1 - x0) / (y1 - y0));
            }
        }
        if crossings.is_empty() {
            continue;
        }
        crossings.sort_by(|a, b| a.total_cmp(b));
        // a center is inside when an odd number of crossings lie strictly to its right
        let mut k = 0;
        for x in 0..width {
            let xc = x as f64 + 0.5;
            while k < crossings.len() && crossings[k] <= xc {
                k += 1;
            }
            if (crossings.len() - k) % 2 == 1 {
                mask.set(x, y, true);
            }
        }
    }
    mask
}
