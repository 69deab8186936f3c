//! 16-bit storage for real-valued components: `q = round(v · scale) + 32768`
//! in a 1-channel PNG, with a JSON sidecar holding the scale and the exact
//! extremes.

use std::fs;
use std::path::Path;

use image::{ImageBuffer, Luma};
use serde::{Deserialize, Serialize};

use crate::dataio::{DataError, RealGrid};
use crate::scalar::Scalar;

pub const COMPONENT_OFFSET: i32 = 32768;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ComponentSidecar {
    pub width: u32,
    pub height: u32,
    pub offset: i32,
    /// Codes per unit; decoding error is at most `0.5 / scale`.
    pub scale: f64,
    pub min: f64,
    pub max: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EncodedComponent {
    pub codes: Vec<u16>,
    pub sidecar: ComponentSidecar,
}

/// Quantize with the largest scale that keeps every code in range.
pub fn encode_component<T: Scalar>(grid: &RealGrid<T>) -> EncodedComponent {
    let values: Vec<f64> = grid.data().iter().map(|v| v.to_f64_lossy()).collect();
    let (min, max) = values.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    let peak = min.abs().max(max.abs());
    let scale = if peak > 0.0 { 32767.0 / peak } else { 1.0 };
    let codes = values
        .iter()
        .map(|&v| ((v * scale + 0.5).floor() as i32 + COMPONENT_OFFSET).clamp(0, 65535) as u16)
        .collect();
    EncodedComponent {
        codes,
        sidecar: ComponentSidecar { width: grid.width(), height: grid.height(), offset: COMPONENT_OFFSET, scale, min, max },
    }
}

impl EncodedComponent {
    pub fn decode(&self) -> RealGrid<f64> {
        let s = &self.sidecar;
        let data = self.codes.iter().map(|&q| (q as i32 - s.offset) as f64 / s.scale).collect();
        RealGrid::new(s.width, s.height, data).expect("codes match sidecar")
    }

    /// Write `png` and its sidecar `json`.
    pub fn save(&self, png: &Path, json: &Path) -> Result<(), DataError> {
        let s = &self.sidecar;
        let buf: ImageBuffer<Luma<u16>, Vec<u16>> =
            ImageBuffer::from_raw(s.width, s.height, self.codes.clone()).expect("codes match sidecar");
        buf.save(png).map_err(|e| DataError::Encode(e.to_string()))?;
        let text = serde_json::to_string_pretty(s).map_err(|e| DataError::Encode(e.to_string()))?;
        fs::write(json, text + "\n").map_err(|e| DataError::io(json, e))
    }

    pub fn load(png: &Path, json: &Path) -> Result<Self, DataError> {
        let text = fs::read_to_string(json).map_err(|e| DataError::io(json, e))?;
        let sidecar: ComponentSidecar =
            serde_json::from_str(&text).map_err(|e| DataError::Undecodable(format!("{}: {e}", json.display())))?;
        let img = image::open(png).map_err(|e| DataError::Undecodable(e.to_string()))?;
        if img.color() != image::ColorType::L16 {
            return Err(DataError::UnsupportedBitDepth(format!("{:?}", img.color())));
        }
        let buf = img.into_luma16();
        if buf.dimensions() != (sidecar.width, sidecar.height) {
            return Err(DataError::DimensionMismatch {
                left: buf.dimensions(),
                right: (sidecar.width, sidecar.height),
            });
        }
        Ok(Self { codes: buf.into_raw(), sidecar })
    }
}
