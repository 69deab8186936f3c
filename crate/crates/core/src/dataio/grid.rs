use crate::scalar::Scalar;

use super::{DataError, RasterImage};

/// Dense real-valued grid, row-major. Holds signed intermediate results
/// (high-frequency components, probability maps) that must not be quantized.
#[derive(Clone, Debug, PartialEq)]
pub struct RealGrid<T> {
    width: u32,
    height: u32,
    data: Vec<T>,
}

impl<T: Scalar> RealGrid<T> {
    pub fn new(width: u32, height: u32, data: Vec<T>) -> Result<Self, DataError> {
        if width == 0 || height == 0 {
            return Err(DataError::InvalidDimensions { width, height });
        }
        let expected = width as usize * height as usize;
        if data.len() != expected {
            return Err(DataError::BufferLength { expected, actual: data.len() });
        }
        Ok(Self { width, height, data })
    }

    pub fn zeros(width: u32, height: u32) -> Self {
        assert!(width > 0 && height > 0, "grid dimensions must be positive");
        Self { width, height, data: vec![T::zero(); width as usize * height as usize] }
    }

    pub fn from_fn(width: u32, height: u32, mut f: impl FnMut(u32, u32) -> T) -> Self {
        let mut g = Self::zeros(width, height);
        for y in 0..height {
            for x in 0..width {
                g.set(x, y, f(x, y));
            }
        }
        g
    }

    /// Luma channel of an image as reals.
    pub fn from_image(img: &RasterImage) -> Self {
        let data = img.luma_f64().into_iter().map(T::of).collect();
        Self { width: img.width(), height: img.height(), data }
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

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    #[inline]
    pub fn get(&self, x: u32, y: u32) -> T {
        self.data[y as usize * self.width as usize + x as usize]
    }

    #[inline]
    pub fn set(&mut self, x: u32, y: u32, v: T) {
        self.data[y as usize * self.width as usize + x as usize] = v;
    }

    pub fn min_max(&self) -> (T, T) {
        self.data.iter().fold((T::infinity(), T::neg_infinity()), |(lo, hi), &v| (lo.min(v), hi.max(v)))
    }

    pub fn max_abs_diff(&self, other: &RealGrid<T>) -> T {
        self.data
            .iter()
            .zip(&other.data)
            .fold(T::zero(), |m, (&a, &b)| m.max((a - b).abs()))
    }
}
