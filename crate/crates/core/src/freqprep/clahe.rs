use serde::{Deserialize, Serialize};

use super::FreqError;
use crate::dataio::RasterImage;

/// Contrast-limited adaptive histogram equalization settings.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ClaheParams {
    pub tiles_x: u32,
    pub tiles_y: u32,
    /// Multiple of the uniform bin height; `f64::INFINITY` disables clipping.
    #[serde(with = "crate::scalar::serde_inf")]
    pub clip_limit: f64,
    pub bins: u32,
}

impl Default for ClaheParams {
    fn default() -> Self {
        Self { tiles_x: 8, tiles_y: 8, clip_limit: 4.0, bins: 256 }
    }
}

impl ClaheParams {
    pub fn unclipped(tiles_x: u32, tiles_y: u32) -> Self {
        Self { tiles_x, tiles_y, clip_limit: f64::INFINITY, bins: 256 }
    }

    pub fn validate(&self) -> Result<(), FreqError> {
        if self.tiles_x == 0 || self.tiles_y == 0 {
            return Err(FreqError::InvalidClahe("tile counts must be at least 1".into()));
        }
        if self.clip_limit.is_nan() || self.clip_limit < 1.0 {
            return Err(FreqError::InvalidClahe(format!("clip limit {} below 1.0", self.clip_limit)));
        }
        if !matches!(self.bins, 64 | 128 | 256) {
            return Err(FreqError::InvalidClahe(format!("bins {} not in {{64, 128, 256}}", self.bins)));
        }
        Ok(())
    }
}

fn tile_edges(len: u32, tiles: u32) -> Vec<u32> {
    (0..=tiles).map(|t| (t as u64 * len as u64 / tiles as u64) as u32).collect()
}

/// Clip the histogram at `limit`, spread the excess evenly over all bins and
/// give the leftover counts to the lowest bins.
fn clip_histogram(hist: &mut [u32], limit: u32) {
    let mut excess: u64 = 0;
    for h in hist.iter_mut() {
        if *h > limit {
            excess += (*h - limit) as u64;
            *h = limit;
        }
    }
    let n = hist.len() as u64;
    let per = (excess / n) as u32;
    let rem = (excess % n) as usize;
    for (b, h) in hist.iter_mut().enumerate() {
        *h += per + (b < rem) as u32;
    }
}

fn tile_lut(img: &RasterImage, x0: u32, x1: u32, y0: u32, y1: u32, p: &ClaheParams) -> Vec<u8> {
    let bins = p.bins as usize;
    let mut hist = vec![0u32; bins];
    for y in y0..y1 {
        for x in x0..x1 {
            hist[img.get(x, y, 0) as usize * bins / 256] += 1;
        }
    }
    let npix = ((x1 - x0) * (y1 - y0)) as u64;
    if p.clip_limit.is_finite() {
        let limit = ((p.clip_limit * npix as f64 / bins as f64).floor() as u32).max(1);
        clip_histogram(&mut hist, limit);
    }
    let mut cdf = 0u64;
    hist.iter()
        .map(|&h| {
            cdf += h as u64;
            ((510 * cdf + npix) / (2 * npix)).min(255) as u8
        })
        .collect()
}

/// Per-tile clipped equalization, bilinearly blended between the four
/// nearest tile centers. Single-channel input only.
pub fn clahe(img: &RasterImage, p: &ClaheParams) -> Result<RasterImage, FreqError> {
    p.validate()?;
    if !img.is_gray() {
        return Err(FreqError::NotGrayscale);
    }
    let (w, h) = img.dimensions();
    if p.tiles_x > w || p.tiles_y > h {
        return Err(FreqError::TilesLargerThanImage { tiles: (p.tiles_x, p.tiles_y), image: (w, h) });
    }
    let xs = tile_edges(w, p.tiles_x);
    let ys = tile_edges(h, p.tiles_y);
    let (tx, ty) = (p.tiles_x as usize, p.tiles_y as usize);
    let mut luts = Vec::with_capacity(tx * ty);
    for j in 0..ty {
        for i in 0..tx {
            luts.push(tile_lut(img, xs[i], xs[i + 1], ys[j], ys[j + 1], p));
        }
    }
    let centers = |edges: &[u32]| -> Vec<f64> {
        edges.windows(2).map(|e| (e[0] as f64 + e[1] as f64 - 1.0) / 2.0).collect()
    };
    let cx = centers(&xs);
    let cy = centers(&ys);
    // (lower tile, upper tile, weight of upper)
    let locate = |c: &[f64], v: f64| -> (usize, usize, f64) {
        if v <= c[0] {
            return (0, 0, 0.0);
        }
        let last = c.len() - 1;
        if v >= c[last] {
            return (last, last, 0.0);
        }
        let t = c.partition_point(|&ct| ct <= v) - 1;
        (t, t + 1, (v - c[t]) / (c[t + 1] - c[t]))
    };
    let bins = p.bins as usize;
    let mut out = img.clone();
    for y in 0..h {
        let (t0, t1, b) = locate(&cy, y as f64);
        for x in 0..w {
            let (s0, s1, a) = locate(&cx, x as f64);
            let bin = img.get(x, y, 0) as usize * bins / 256;
            let l = |ti: usize, si: usize| luts[ti * tx + si][bin] as f64;
            let v = (1.0 - b) * ((1.0 - a) * l(t0, s0) + a * l(t0, s1)) + b * ((1.0 - a) * l(t1, s0) + a * l(t1, s1));
            out.set(x, y, 0, (v + 0.5).floor().clamp(0.0, 255.0) as u8);
        }
    }
    Ok(out)
}
