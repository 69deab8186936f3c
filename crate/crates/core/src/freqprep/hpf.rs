use num_complex::Complex;

use super::{clahe, fft2_centered_grid, ifft2_centered, ClaheParams, FreqError, FreqGrid};
use crate::dataio::{RasterImage, RealGrid};
use crate::scalar::Scalar;

/// Default low-frequency threshold.
pub const DEFAULT_TAU: f64 = 0.25;

/// High-pass mask over a centered spectrum.
///
/// Bin `(i, j)` is zero iff `4·|(i − H/2)(j − W/2)| / (H·W) ≤ τ`, with the
/// halves taken as exact reals.
#[derive(Clone, Debug, PartialEq)]
pub struct HpfMask {
    width: u32,
    height: u32,
    tau: f64,
    bits: Vec<u8>,
}

impl HpfMask {
    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }

    pub fn bits(&self) -> &[u8] {
        &self.bits
    }

    pub fn get(&self, i: u32, j: u32) -> bool {
        self.bits[i as usize * self.width as usize + j as usize] != 0
    }

    pub fn zero_count(&self) -> usize {
        self.bits.iter().filter(|&&b| b == 0).count()
    }

    /// Multiply a spectrum by the mask in place.
    pub fn apply<T: Scalar>(&self, g: &mut FreqGrid<T>) {
        assert_eq!((g.width(), g.height()), (self.width, self.height), "mask/spectrum shape mismatch");
        let zero = Complex::new(T::zero(), T::zero());
        for (v, &b) in g.values_mut().iter_mut().zip(&self.bits) {
            if b == 0 {
                *v = zero;
            }
        }
    }
}

pub fn build_hpf_mask(h: u32, w: u32, tau: f64) -> HpfMask {
    assert!(h > 0 && w > 0, "mask dimensions must be positive");
    let (hf, wf) = (h as f64, w as f64);
    let area = hf * wf;
    let mut bits = Vec::with_capacity(h as usize * w as usize);
    for i in 0..h {
        let di = i as f64 - hf / 2.0;
        for j in 0..w {
            let dj = j as f64 - wf / 2.0;
            let low = 4.0 * (di * dj).abs() / area <= tau;
            bits.push(u8::from(!low));
        }
    }
    HpfMask { width: w, height: h, tau, bits }
}

/// `IFFT(FFT(grid) · M_hpf)`, real part.
pub fn high_pass_filter_grid<T: Scalar>(grid: &RealGrid<T>, tau: f64) -> RealGrid<T> {
    let mut spec = fft2_centered_grid(grid);
    build_hpf_mask(grid.height(), grid.width(), tau).apply(&mut spec);
    ifft2_centered(&spec)
}

/// High-frequency component of a CLAHE-enhanced grayscale image, unquantized.
pub fn high_freq_component<T: Scalar>(
    img: &RasterImage,
    p: &ClaheParams,
    tau: f64,
) -> Result<RealGrid<T>, FreqError> {
    let enhanced = clahe(img, p)?;
    Ok(high_pass_filter_grid(&RealGrid::from_image(&enhanced), tau))
}
