//! Image, mask and annotation I/O plus dataset manifests.

mod annotation;
mod grid;
mod manifest;
mod mask;
mod raster;

use std::io;
use std::path::{Path, PathBuf};

use thiserror::Error;

pub use annotation::{
    crop_instance, embed_patch, format_box_annotations, normalized_to_pixel_box, parse_box_annotations,
    parse_box_annotations_str, parse_polygon_annotations, parse_polygon_annotations_str, rasterize_polygon,
    ClassMap, InstanceAnnotation, Label, LabeledPolygon, PixelBox, PolygonLabel,
};
pub use grid::RealGrid;
pub use manifest::{
    load_manifest, manifest_stats, manifest_stats_by_split, render_stats_table, split_entries, ClassCounts,
    DatasetManifest, DatasetRole, InstanceRecord, ManifestEntry, Provenance, Split,
};
pub use mask::{load_mask, save_mask, BinaryMask};
pub use raster::{load_image, save_image, RasterImage};

#[derive(Debug, Error)]
pub enum DataError {
    #[error("file not found: {0}")]
    NotFound(PathBuf),
    #[error("i/o error on {path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("undecodable image: {0}")]
    Undecodable(String),
    #[error("unsupported bit depth or color type: {0}")]
    UnsupportedBitDepth(String),
    #[error("image encoding failed: {0}")]
    Encode(String),
    #[error("invalid dimensions {width}x{height}")]
    InvalidDimensions { width: u32, height: u32 },
    #[error("unsupported channel count {0}")]
    UnsupportedChannels(u8),
    #[error("buffer length {actual}, expected {expected}")]
    BufferLength { expected: usize, actual: usize },
    #[error("mask values must be 0 or 1")]
    NonBinaryMask,
    #[error("dimension mismatch: {left:?} vs {right:?}")]
    DimensionMismatch { left: (u32, u32), right: (u32, u32) },
    #[error("line {line}: {reason}")]
    MalformedLine { line: usize, reason: String },
    #[error("class id {0} not in class map")]
    UnknownClassId(u32),
    #[error("line {line}: box has zero area after rounding")]
    DegenerateBox { line: usize },
    #[error("unknown label {0:?}")]
    UnknownLabel(String),
    #[error("shape {label:?} has {count} vertices, need at least 3")]
    TooFewVertices { label: String, count: usize },
    #[error("invalid json: {0}")]
    Json(String),
    #[error("box {0:?} has zero width or height")]
    EmptyBox(PixelBox),
    #[error("box {bbox:?} outside {width}x{height} image")]
    BoxOutOfBounds { bbox: PixelBox, width: u32, height: u32 },
    #[error("polygon leaves the image bounds")]
    PolygonOutOfBounds,
}

impl DataError {
    pub fn io(path: &Path, e: io::Error) -> Self {
        if e.kind() == io::ErrorKind::NotFound {
            DataError::NotFound(path.to_path_buf())
        } else {
            DataError::Io { path: path.to_path_buf(), source: e }
        }
    }
}
