use serde::{Deserialize, Serialize};

use super::MetricsError;
use crate::dataio::RasterImage;

/// Side of the Gaussian SSIM window.
pub const SSIM_WINDOW: u32 = 11;
const SSIM_SIGMA: f64 = 1.5;
const K1: f64 = 0.01;
const K2: f64 = 0.03;
const PEAK: f64 = 255.0;

/// PSNR in dB. Identical inputs give `f64::INFINITY`, written as `"inf"`.
#[derive(Clone, Copy, Debug, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Psnr(#[serde(with = "crate::scalar::serde_inf")] pub f64);

impl Psnr {
    pub fn is_infinite(self) -> bool {
        self.0.is_infinite()
    }
}

fn check_shape(a: &RasterImage, b: &RasterImage) -> Result<(), MetricsError> {
    let sa = (a.width(), a.height(), a.channels());
    let sb = (b.width(), b.height(), b.channels());
    if sa != sb {
        return Err(MetricsError::ShapeMismatch { left: sa, right: sb });
    }
    Ok(())
}

/// `10·log10(255² / MSE)` over every sample of every channel.
pub fn psnr(a: &RasterImage, b: &RasterImage) -> Result<Psnr, MetricsError> {
    check_shape(a, b)?;
    let sse: u64 = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| {
            let d = x.abs_diff(y) as u64;
            d * d
        })
        .sum();
    if sse == 0 {
        return Ok(Psnr(f64::INFINITY));
    }
    let mse = sse as f64 / a.data().len() as f64;
    Ok(Psnr(10.0 * (PEAK * PEAK / mse).log10()))
}

fn gaussian_window() -> Vec<f64> {
    let r = (SSIM_WINDOW / 2) as i32;
    let w: Vec<f64> = (-r..=r).map(|k| (-(k * k) as f64 / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp()).collect();
    let s: f64 = w.iter().sum();
    w.into_iter().map(|v| v / s).collect()
}

/// Separable weighted sum over every full window position.
fn filter_valid(src: &[f64], width: usize, height: usize, w: &[f64]) -> Vec<f64> {
    let k = w.len();
    let ow = width - k + 1;
    let oh = height - k + 1;
    let mut rows = vec![0.0; ow * height];
    for y in 0..height {
        let line = &src[y * width..(y + 1) * width];
        for x in 0..ow {
            rows[y * ow + x] = w.iter().zip(&line[x..x + k]).map(|(a, b)| a * b).sum();
        }
    }
    let mut out = vec![0.0; ow * oh];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = w.iter().enumerate().map(|(i, wi)| wi * rows[(y + i) * ow + x]).sum();
        }
    }
    out
}

/// Mean local SSIM over the luma channel with an 11×11 Gaussian window
/// (σ = 1.5), windows fully inside the image.
pub fn ssim(a: &RasterImage, b: &RasterImage) -> Result<f64, MetricsError> {
    check_shape(a, b)?;
    let (w, h) = (a.width(), a.height());
    if w < SSIM_WINDOW || h < SSIM_WINDOW {
        return Err(MetricsError::ImageTooSmall { width: w, height: h, window: SSIM_WINDOW });
    }
    let (wu, hu) = (w as usize, h as usize);
    let la = a.luma_f64();
    let lb = b.luma_f64();
    let g = gaussian_window();
    let aa: Vec<f64> = la.iter().map(|v| v * v).collect();
    let bb: Vec<f64> = lb.iter().map(|v| v * v).collect();
    let ab: Vec<f64> = la.iter().zip(&lb).map(|(x, y)| x * y).collect();
    let mu_a = filter_valid(&la, wu, hu, &g);
    let mu_b = filter_valid(&lb, wu, hu, &g);
    let e_aa = filter_valid(&aa, wu, hu, &g);
    let e_bb = filter_valid(&bb, wu, hu, &g);
    let e_ab = filter_valid(&ab, wu, hu, &g);
    let c1 = (K1 * PEAK).powi(2);
    let c2 = (K2 * PEAK).powi(2);
    let n = mu_a.len();
    let total: f64 = (0..n)
        .map(|i| {
            let (ma, mb) = (mu_a[i], mu_b[i]);
            let va = e_aa[i] - ma * ma;
            let vb = e_bb[i] - mb * mb;
            let cov = e_ab[i] - ma * mb;
            ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2))
        })
        .sum();
    Ok(total / n as f64)
}
