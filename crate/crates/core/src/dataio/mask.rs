use std::fs;
use std::io::Cursor;
use std::path::Path;

use image::{GrayImage, ImageFormat};

use super::{DataError, RasterImage};

/// Per-pixel {0,1} grid, row-major.
#[derive(Clone, PartialEq, Eq, Hash)]
pub struct BinaryMask {
    width: u32,
    height: u32,
    bits: Vec<u8>,
}

impl std::fmt::Debug for BinaryMask {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        writeln!(f, "BinaryMask {}x{} ({} set)", self.width, self.height, self.count())?;
        if self.width <= 32 && self.height <= 32 {
            for y in 0..self.height {
                let row: String =
                    (0..self.width).map(|x| if self.get(x, y) { '#' } else { '.' }).collect();
                writeln!(f, "  {row}")?;
            }
        }
        Ok(())
    }
}

impl BinaryMask {
    pub fn empty(width: u32, height: u32) -> Self {
        assert!(width > 0 && height > 0, "mask dimensions must be positive");
        Self { width, height, bits: vec![0; width as usize * height as usize] }
    }

    pub fn full(width: u32, height: u32) -> Self {
        let mut m = Self::empty(width, height);
        m.bits.fill(1);
        m
    }

    /// Build from a row-major buffer; every value must be 0 or 1.
    pub fn from_bits(width: u32, height: u32, bits: Vec<u8>) -> Result<Self, DataError> {
        if width == 0 || height == 0 {
            return Err(DataError::InvalidDimensions { width, height });
        }
        let expected = width as usize * height as usize;
        if bits.len() != expected {
            return Err(DataError::BufferLength { expected, actual: bits.len() });
        }
        if bits.iter().any(|&b| b > 1) {
            return Err(DataError::NonBinaryMask);
        }
        Ok(Self { width, height, bits })
    }

    pub fn from_fn(width: u32, height: u32, mut f: impl FnMut(u32, u32) -> bool) -> Self {
        let mut m = Self::empty(width, height);
        for y in 0..height {
            for x in 0..width {
                if f(x, y) {
                    m.set(x, y, true);
                }
            }
        }
        m
    }

    /// Rectangle `[x0, x1) × [y0, y1)` set, clipped to the grid.
    pub fn rect(width: u32, height: u32, x0: u32, y0: u32, x1: u32, y1: u32) -> Self {
        Self::from_fn(width, height, |x, y| x >= x0 && x < x1 && y >= y0 && y < y1)
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn dimensions(&self) -> (u32, u32) {
        (self.width, self.height)
    }

    pub fn bits(&self) -> &[u8] {
        &self.bits
    }

    #[inline]
    pub fn get(&self, x: u32, y: u32) -> bool {
        self.bits[y as usize * self.width as usize + x as usize] != 0
    }

    /// Out-of-bounds coordinates read as background.
    #[inline]
    pub fn get_or_zero(&self, x: i64, y: i64) -> bool {
        x >= 0
            && y >= 0
            && x < self.width as i64
            && y < self.height as i64
            && self.get(x as u32, y as u32)
    }

    #[inline]
    pub fn set(&mut self, x: u32, y: u32, v: bool) {
        self.bits[y as usize * self.width as usize + x as usize] = v as u8;
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|&&b| b != 0).count()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.iter().all(|&b| b == 0)
    }

    pub fn same_shape(&self, other: &BinaryMask) -> bool {
        self.dimensions() == other.dimensions()
    }

    fn zip_with(&self, other: &BinaryMask, f: impl Fn(u8, u8) -> u8) -> Result<BinaryMask, DataError> {
        if !self.same_shape(other) {
            return Err(DataError::DimensionMismatch {
                left: self.dimensions(),
                right: other.dimensions(),
            });
        }
        let bits = self.bits.iter().zip(&other.bits).map(|(&a, &b)| f(a, b)).collect();
        Ok(BinaryMask { width: self.width, height: self.height, bits })
    }

    pub fn union(&self, other: &BinaryMask) -> Result<BinaryMask, DataError> {
        self.zip_with(other, |a, b| a | b)
    }

    pub fn intersection(&self, other: &BinaryMask) -> Result<BinaryMask, DataError> {
        self.zip_with(other, |a, b| a & b)
    }

    pub fn complement(&self) -> BinaryMask {
        BinaryMask {
            width: self.width,
            height: self.height,
            bits: self.bits.iter().map(|&b| 1 - b).collect(),
        }
    }

    /// True when every set pixel of `self` is also set in `other`.
    pub fn is_subset_of(&self, other: &BinaryMask) -> bool {
        self.same_shape(other) && self.bits.iter().zip(&other.bits).all(|(&a, &b)| a <= b)
    }

    /// Set pixel coordinates in raster order.
    pub fn set_pixels(&self) -> Vec<(u32, u32)> {
        let w = self.width as usize;
        self.bits
            .iter()
            .enumerate()
            .filter(|(_, &b)| b != 0)
            .map(|(i, _)| ((i % w) as u32, (i / w) as u32))
            .collect()
    }

    /// 1-channel image with values {0, 255}.
    pub fn to_image(&self) -> RasterImage {
        RasterImage::new(self.width, self.height, 1, self.bits.iter().map(|&b| b * 255).collect())
            .expect("mask shape is valid")
    }

    /// Threshold an image at 128 on its luma channel.
    pub fn from_image(img: &RasterImage) -> BinaryMask {
        let luma = img.to_luma();
        BinaryMask {
            width: img.width(),
            height: img.height(),
            bits: luma.data().iter().map(|&v| (v >= 128) as u8).collect(),
        }
    }

    pub fn to_png_bytes(&self) -> Result<Vec<u8>, DataError> {
        let gray = GrayImage::from_raw(self.width, self.height, self.bits.iter().map(|&b| b * 255).collect())
            .expect("mask shape is valid");
        let mut buf = Cursor::new(Vec::new());
        gray.write_to(&mut buf, ImageFormat::Png)
            .map_err(|e| DataError::Encode(e.to_string()))?;
        Ok(buf.into_inner())
    }

    pub fn from_png_bytes(bytes: &[u8]) -> Result<BinaryMask, DataError> {
        Ok(Self::from_image(&RasterImage::from_encoded_bytes(bytes)?))
    }
}

pub fn load_mask(path: impl AsRef<Path>) -> Result<BinaryMask, DataError> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| DataError::io(path, e))?;
    BinaryMask::from_png_bytes(&bytes)
}

pub fn save_mask(mask: &BinaryMask, path: impl AsRef<Path>) -> Result<(), DataError> {
    let path = path.as_ref();
    fs::write(path, mask.to_png_bytes()?).map_err(|e| DataError::io(path, e))
}
