//! Binary morphology for mask optimization: erosion, dilation, opening and
//! the opening-then-dilation pipeline applied to raw segmentation masks.
//!
//! Pixels outside the grid are background for every operator. Kernels run on
//! rows packed into 64-bit words; [`reference`] holds the direct per-pixel
//! definitions that the packed kernels must match bit for bit.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataio::BinaryMask;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum MorphError {
    #[error("structural element has no set bit")]
    EmptyElement,
    #[error("anchor ({0}, {1}) outside the element")]
    AnchorOutside(u32, u32),
    #[error("element bits length {actual}, expected {expected}")]
    BitsLength { expected: usize, actual: usize },
    #[error("cannot parse structural element {0:?}")]
    Parse(String),
    #[error("dilate_passes must be at least 1")]
    ZeroPasses,
}

/// Small binary kernel with an explicit anchor.
#[derive(Clone, PartialEq, Eq, Hash)]
pub struct StructElement {
    width: u32,
    height: u32,
    bits: Vec<bool>,
    anchor: (u32, u32),
}

impl StructElement {
    pub fn new(width: u32, height: u32, bits: Vec<bool>, anchor: (u32, u32)) -> Result<Self, MorphError> {
        let expected = width as usize * height as usize;
        if bits.len() != expected {
            return Err(MorphError::BitsLength { expected, actual: bits.len() });
        }
        if !bits.iter().any(|&b| b) {
            return Err(MorphError::EmptyElement);
        }
        if anchor.0 >= width || anchor.1 >= height {
            return Err(MorphError::AnchorOutside(anchor.0, anchor.1));
        }
        Ok(Self { width, height, bits, anchor })
    }

    /// All-ones rectangle anchored at `((w-1)/2, (h-1)/2)`: centered for odd
    /// sizes, top-left of the central block for even ones.
    pub fn rect(width: u32, height: u32) -> Result<Self, MorphError> {
        Self::rect_anchored(width, height, ((width.max(1) - 1) / 2, (height.max(1) - 1) / 2))
    }

    pub fn rect_anchored(width: u32, height: u32, anchor: (u32, u32)) -> Result<Self, MorphError> {
        Self::new(width, height, vec![true; width as usize * height as usize], anchor)
    }

    /// 2×2 all-ones anchored at (0, 0).
    pub fn square2() -> Self {
        Self::rect_anchored(2, 2, (0, 0)).expect("valid element")
    }

    /// 3×3 all-ones anchored at the center.
    pub fn square3() -> Self {
        Self::rect_anchored(3, 3, (1, 1)).expect("valid element")
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn anchor(&self) -> (u32, u32) {
        self.anchor
    }

    pub fn bit(&self, i: u32, j: u32) -> bool {
        self.bits[j as usize * self.width as usize + i as usize]
    }

    /// Offsets `(i - ax, j - ay)` of the set bits, row-major.
    pub fn offsets(&self) -> Vec<(i64, i64)> {
        let (ax, ay) = (self.anchor.0 as i64, self.anchor.1 as i64);
        (0..self.height)
            .flat_map(|j| (0..self.width).map(move |i| (i, j)))
            .filter(|&(i, j)| self.bit(i, j))
            .map(|(i, j)| (i as i64 - ax, j as i64 - ay))
            .collect()
    }

    pub fn contains_anchor(&self) -> bool {
        self.bit(self.anchor.0, self.anchor.1)
    }

    /// Point reflection through the anchor.
    pub fn reflected(&self) -> Self {
        let (w, h) = (self.width, self.height);
        let mut bits = vec![false; self.bits.len()];
        for j in 0..h {
            for i in 0..w {
                bits[(h - 1 - j) as usize * w as usize + (w - 1 - i) as usize] = self.bit(i, j);
            }
        }
        Self { width: w, height: h, bits, anchor: (w - 1 - self.anchor.0, h - 1 - self.anchor.1) }
    }

    fn is_full(&self) -> bool {
        self.bits.iter().all(|&b| b)
    }
}

impl fmt::Debug for StructElement {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "StructElement({self})")
    }
}

/// `WxH`, `WxH@ax,ay`, or a row pattern like `010/111/010@1,1`.
impl fmt::Display for StructElement {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_full() {
            write!(f, "{}x{}", self.width, self.height)?;
        } else {
            let rows: Vec<String> = (0..self.height)
                .map(|j| (0..self.width).map(|i| if self.bit(i, j) { '1' } else { '0' }).collect())
                .collect();
            f.write_str(&rows.join("/"))?;
        }
        write!(f, "@{},{}", self.anchor.0, self.anchor.1)
    }
}

impl FromStr for StructElement {
    type Err = MorphError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || MorphError::Parse(s.to_string());
        let (shape, anchor) = match s.split_once('@') {
            Some((shape, a)) => {
                let (ax, ay) = a.split_once(',').ok_or_else(bad)?;
                (shape, Some((ax.trim().parse().map_err(|_| bad())?, ay.trim().parse().map_err(|_| bad())?)))
            }
            None => (s, None),
        };
        let shape = shape.trim();
        if let Some((w, h)) = shape.split_once(['x', 'X']) {
            let w: u32 = w.parse().map_err(|_| bad())?;
            let h: u32 = h.parse().map_err(|_| bad())?;
            if w == 0 || h == 0 {
                return Err(MorphError::EmptyElement);
            }
            return match anchor {
                Some(a) => Self::rect_anchored(w, h, a),
                None => Self::rect(w, h),
            };
        }
        let rows: Vec<&str> = shape.split('/').collect();
        let width = rows[0].len() as u32;
        if width == 0 || rows.iter().any(|r| r.len() as u32 != width) {
            return Err(bad());
        }
        let mut bits = Vec::new();
        for r in &rows {
            for ch in r.chars() {
                bits.push(match ch {
                    '1' => true,
                    '0' => false,
                    _ => return Err(bad()),
                });
            }
        }
        let height = rows.len() as u32;
        let anchor = anchor.unwrap_or(((width - 1) / 2, (height - 1) / 2));
        Self::new(width, height, bits, anchor)
    }
}

impl Serialize for StructElement {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for StructElement {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Mask optimization settings.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModConfig {
    pub open_se: StructElement,
    pub dilate_se: StructElement,
    pub dilate_passes: u32,
}

impl Default for ModConfig {
    fn default() -> Self {
        Self { open_se: StructElement::square2(), dilate_se: StructElement::square3(), dilate_passes: 1 }
    }
}

impl ModConfig {
    pub fn validate(&self) -> Result<(), MorphError> {
        if self.dilate_passes == 0 {
            return Err(MorphError::ZeroPasses);
        }
        Ok(())
    }
}

/// Rows packed into 64-bit words; bits past the row width are always zero.
struct Packed {
    width: usize,
    height: usize,
    words: usize,
    data: Vec<u64>,
}

impl Packed {
    fn zeros(width: usize, height: usize) -> Self {
        let words = width.div_ceil(64);
        Self { width, height, words, data: vec![0; words * height] }
    }

    fn from_mask(m: &BinaryMask) -> Self {
        let mut p = Self::zeros(m.width() as usize, m.height() as usize);
        for (i, &b) in m.bits().iter().enumerate() {
            if b != 0 {
                let (y, x) = (i / p.width, i % p.width);
                p.data[y * p.words + x / 64] |= 1u64 << (x % 64);
            }
        }
        p
    }

    fn to_mask(&self) -> BinaryMask {
        let mut bits = vec![0u8; self.width * self.height];
        for y in 0..self.height {
            let row = &self.data[y * self.words..(y + 1) * self.words];
            for x in 0..self.width {
                bits[y * self.width + x] = ((row[x / 64] >> (x % 64)) & 1) as u8;
            }
        }
        BinaryMask::from_bits(self.width as u32, self.height as u32, bits).expect("shape preserved")
    }

    fn row(&self, y: usize) -> &[u64] {
        &self.data[y * self.words..(y + 1) * self.words]
    }

    fn tail_mask(&self) -> u64 {
        match self.width % 64 {
            0 => u64::MAX,
            r => (1u64 << r) - 1,
        }
    }

    /// `out[x] = src[x + dx]`, zero outside the row.
    fn shift_row_into(src: &[u64], dx: i64, out: &mut [u64]) {
        let n = src.len() as i64;
        let q = dx.div_euclid(64);
        let r = dx.rem_euclid(64) as u32;
        let word = |k: i64| if k >= 0 && k < n { src[k as usize] } else { 0 };
        for (k, o) in out.iter_mut().enumerate() {
            let k = k as i64 + q;
            *o = if r == 0 { word(k) } else { (word(k) >> r) | (word(k + 1) << (64 - r)) };
        }
    }

    /// Combine shifted copies `src(x + dx, y + dy)` for every offset.
    fn combine(&self, offsets: &[(i64, i64)], and: bool) -> Packed {
        let mut out = Packed::zeros(self.width, self.height);
        let tail = self.tail_mask();
        let mut tmp = vec![0u64; self.words];
        for y in 0..self.height {
            let acc = &mut out.data[y * self.words..(y + 1) * self.words];
            acc.fill(if and { u64::MAX } else { 0 });
            for &(dx, dy) in offsets {
                let sy = y as i64 + dy;
                if sy < 0 || sy >= self.height as i64 {
                    if and {
                        acc.fill(0);
                        break;
                    }
                    continue;
                }
                Self::shift_row_into(self.row(sy as usize), dx, &mut tmp);
                for (a, t) in acc.iter_mut().zip(&tmp) {
                    if and {
                        *a &= *t;
                    } else {
                        *a |= *t;
                    }
                }
            }
            if let Some(last) = acc.last_mut() {
                *last &= tail;
            }
        }
        out
    }
}

/// `out(x, y) = 1` iff every set bit `(i, j)` of `s` lands on a set pixel
/// `m(x + i - ax, y + j - ay)`.
pub fn erode(m: &BinaryMask, s: &StructElement) -> BinaryMask {
    Packed::from_mask(m).combine(&s.offsets(), true).to_mask()
}

/// `out(x, y) = 1` iff some set bit of the reflected element, translated to
/// `(x, y)`, overlaps a set pixel: `m(x - (i - ax), y - (j - ay))` for any set `(i, j)`.
pub fn dilate(m: &BinaryMask, s: &StructElement) -> BinaryMask {
    let neg: Vec<_> = s.offsets().into_iter().map(|(dx, dy)| (-dx, -dy)).collect();
    Packed::from_mask(m).combine(&neg, false).to_mask()
}

pub fn open(m: &BinaryMask, s: &StructElement) -> BinaryMask {
    dilate(&erode(m, s), s)
}

pub fn close(m: &BinaryMask, s: &StructElement) -> BinaryMask {
    erode(&dilate(m, s), s)
}

/// Opening with `open_se`, then `dilate_passes` dilations with `dilate_se`.
pub fn mod_optimize(m_seg: &BinaryMask, cfg: &ModConfig) -> BinaryMask {
    let mut out = open(m_seg, &cfg.open_se);
    for _ in 0..cfg.dilate_passes.max(1) {
        out = dilate(&out, &cfg.dilate_se);
    }
    out
}

/// Direct per-pixel evaluation of the operator definitions, O(N·|s|).
pub mod reference {
    use super::*;

    pub fn erode(m: &BinaryMask, s: &StructElement) -> BinaryMask {
        let offs = s.offsets();
        BinaryMask::from_fn(m.width(), m.height(), |x, y| {
            offs.iter().all(|&(dx, dy)| m.get_or_zero(x as i64 + dx, y as i64 + dy))
        })
    }

    pub fn dilate(m: &BinaryMask, s: &StructElement) -> BinaryMask {
        let offs = s.offsets();
        BinaryMask::from_fn(m.width(), m.height(), |x, y| {
            offs.iter().any(|&(dx, dy)| m.get_or_zero(x as i64 - dx, y as i64 - dy))
        })
    }

    pub fn open(m: &BinaryMask, s: &StructElement) -> BinaryMask {
        dilate(&erode(m, s), s)
    }

    pub fn mod_optimize(m: &BinaryMask, cfg: &ModConfig) -> BinaryMask {
        let mut out = open(m, &cfg.open_se);
        for _ in 0..cfg.dilate_passes.max(1) {
            out = dilate(&out, &cfg.dilate_se);
        }
        out
    }
}
