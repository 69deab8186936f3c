use num_complex::Complex;
use rustfft::{Fft, FftPlanner};
use std::sync::Arc;

use crate::dataio::{RasterImage, RealGrid};
use crate::scalar::Scalar;

/// Unitary 2-D spectrum, center-shifted so the zero-frequency bin sits at
/// `(width / 2, height / 2)` (integer division).
#[derive(Clone, Debug, PartialEq)]
pub struct FreqGrid<T> {
    width: u32,
    height: u32,
    values: Vec<Complex<T>>,
}

impl<T: Scalar> FreqGrid<T> {
    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn values(&self) -> &[Complex<T>] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [Complex<T>] {
        &mut self.values
    }

    /// Bin at row `i`, column `j` of the centered layout.
    pub fn get(&self, i: u32, j: u32) -> Complex<T> {
        self.values[i as usize * self.width as usize + j as usize]
    }

    pub fn energy(&self) -> T {
        self.values.iter().map(|c| c.norm_sqr()).sum()
    }
}

struct Plans<T: Scalar> {
    row: Arc<dyn Fft<T>>,
    col: Arc<dyn Fft<T>>,
}

fn plans<T: Scalar>(w: usize, h: usize, inverse: bool) -> Plans<T> {
    let mut planner = FftPlanner::new();
    if inverse {
        Plans { row: planner.plan_fft_inverse(w), col: planner.plan_fft_inverse(h) }
    } else {
        Plans { row: planner.plan_fft_forward(w), col: planner.plan_fft_forward(h) }
    }
}

/// In-place separable transform with `1/sqrt(w·h)` scaling.
fn transform_2d<T: Scalar>(buf: &mut [Complex<T>], w: usize, h: usize, inverse: bool) {
    let p = plans::<T>(w, h, inverse);
    for row in buf.chunks_exact_mut(w) {
        p.row.process(row);
    }
    let mut col = vec![Complex::new(T::zero(), T::zero()); h];
    for x in 0..w {
        for y in 0..h {
            col[y] = buf[y * w + x];
        }
        p.col.process(&mut col);
        for y in 0..h {
            buf[y * w + x] = col[y];
        }
    }
    let scale = T::one() / T::of((w * h) as f64).sqrt();
    for v in buf.iter_mut() {
        *v = *v * scale;
    }
}

/// Move index `k` of an unshifted axis of length `n` to its centered slot.
#[inline]
fn shift_index(k: usize, n: usize) -> usize {
    (k + n / 2) % n
}

#[inline]
fn unshift_index(s: usize, n: usize) -> usize {
    (s + n - n / 2) % n
}

/// Forward transform of a real grid.
pub fn fft2_centered_grid<T: Scalar>(grid: &RealGrid<T>) -> FreqGrid<T> {
    let (w, h) = (grid.width() as usize, grid.height() as usize);
    let mut buf: Vec<Complex<T>> = grid.data().iter().map(|&v| Complex::new(v, T::zero())).collect();
    transform_2d(&mut buf, w, h, false);
    let mut values = vec![Complex::new(T::zero(), T::zero()); w * h];
    for y in 0..h {
        for x in 0..w {
            values[shift_index(y, h) * w + shift_index(x, w)] = buf[y * w + x];
        }
    }
    FreqGrid { width: grid.width(), height: grid.height(), values }
}

/// Forward transform of an image's luma channel.
pub fn fft2_centered<T: Scalar>(img: &RasterImage) -> FreqGrid<T> {
    fft2_centered_grid(&RealGrid::from_image(img))
}

/// Inverse transform keeping the complex result.
pub fn ifft2_centered_complex<T: Scalar>(g: &FreqGrid<T>) -> Vec<Complex<T>> {
    let (w, h) = (g.width as usize, g.height as usize);
    let mut buf = vec![Complex::new(T::zero(), T::zero()); w * h];
    for s in 0..h {
        for t in 0..w {
            buf[unshift_index(s, h) * w + unshift_index(t, w)] = g.values[s * w + t];
        }
    }
    transform_2d(&mut buf, w, h, true);
    buf
}

/// Inverse transform, real part.
pub fn ifft2_centered<T: Scalar>(g: &FreqGrid<T>) -> RealGrid<T> {
    let data = ifft2_centered_complex(g).into_iter().map(|c| c.re).collect();
    RealGrid::new(g.width, g.height, data).expect("shape preserved")
}
