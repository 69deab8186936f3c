use serde::{Deserialize, Serialize};

use super::MetricsError;
use crate::dataio::{BinaryMask, RealGrid};
use crate::scalar::Scalar;

const P_CLAMP: f64 = 1e-7;

/// Weights of the focal + dice mask loss.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossConfig {
    pub alpha: f64,
    pub beta: f64,
    pub focal_gamma: f64,
    pub focal_alpha_f: f64,
    pub dice_eps: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self { alpha: 1.0, beta: 1.0, focal_gamma: 2.0, focal_alpha_f: 0.25, dice_eps: 1e-6 }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<(), MetricsError> {
        let bad = |what: &str| Err(MetricsError::InvalidConfig(what.to_string()));
        if self.alpha.is_nan() || self.beta.is_nan() || self.alpha < 0.0 || self.beta < 0.0 {
            return bad("alpha and beta must be non-negative");
        }
        if self.focal_gamma.is_nan() || self.focal_gamma < 0.0 {
            return bad("focal_gamma must be non-negative");
        }
        if self.dice_eps.is_nan() || self.dice_eps <= 0.0 {
            return bad("dice_eps must be positive");
        }
        if !self.focal_alpha_f.is_finite() {
            return bad("focal_alpha_f must be finite");
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown<T> {
    pub total: T,
    pub focal: T,
    pub dice: T,
}

/// `α·focal + β·dice` for a probability map against a binary target.
pub fn composite_loss<T: Scalar>(
    pred: &RealGrid<T>,
    gt: &BinaryMask,
    cfg: &LossConfig,
) -> Result<LossBreakdown<T>, MetricsError> {
    cfg.validate()?;
    if pred.dimensions() != gt.dimensions() {
        let (pw, ph) = pred.dimensions();
        let (gw, gh) = gt.dimensions();
        return Err(MetricsError::ShapeMismatch { left: (pw, ph, 1), right: (gw, gh, 1) });
    }
    if let Some(p) = pred.data().iter().find(|p| !(**p >= T::zero() && **p <= T::one())) {
        return Err(MetricsError::InvalidProbability(p.to_f64_lossy()));
    }
    let lo = T::of(P_CLAMP);
    let hi = T::one() - lo;
    let gamma = T::of(cfg.focal_gamma);
    let alpha_f = T::of(cfg.focal_alpha_f);
    let (mut focal_sum, mut pg, mut sp, mut sg) = (T::zero(), T::zero(), T::zero(), T::zero());
    for (&p, &g) in pred.data().iter().zip(gt.bits()) {
        let fg = g != 0;
        let pt = if fg { p } else { T::one() - p }.max(lo).min(hi);
        focal_sum = focal_sum - alpha_f * (T::one() - pt).powf(gamma) * pt.ln();
        sp = sp + p;
        if fg {
            pg = pg + p;
            sg = sg + T::one();
        }
    }
    let n = T::of(pred.data().len() as f64);
    let focal = if pred.data().is_empty() { T::zero() } else { focal_sum / n };
    let eps = T::of(cfg.dice_eps);
    let dice = T::one() - (T::of(2.0) * pg + eps) / (sp + sg + eps);
    let total = T::of(cfg.alpha) * focal + T::of(cfg.beta) * dice;
    Ok(LossBreakdown { total, focal, dice })
}
