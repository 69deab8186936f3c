use serde::{Deserialize, Serialize};

use crate::dataio::{BinaryMask, DataError};

/// Mask agreement scores. `iou_fg` / `iou_bg` are `None` when the class is
/// absent from both masks, in which case it does not enter `miou`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SegScores {
    pub miou: f64,
    pub dice: f64,
    pub pa: f64,
    pub iou_fg: Option<f64>,
    pub iou_bg: Option<f64>,
}

pub fn seg_metrics(pred: &BinaryMask, gt: &BinaryMask) -> Result<SegScores, DataError> {
    if !pred.same_shape(gt) {
        return Err(DataError::DimensionMismatch { left: pred.dimensions(), right: gt.dimensions() });
    }
    let (mut tp, mut fp, mut fn_, mut tn) = (0u64, 0u64, 0u64, 0u64);
    for (&p, &g) in pred.bits().iter().zip(gt.bits()) {
        match (p != 0, g != 0) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fn_ += 1,
            (false, false) => tn += 1,
        }
    }
    let iou = |inter: u64, union: u64| (union > 0).then(|| inter as f64 / union as f64);
    let iou_fg = iou(tp, tp + fp + fn_);
    let iou_bg = iou(tn, tn + fp + fn_);
    let present: Vec<f64> = [iou_fg, iou_bg].into_iter().flatten().collect();
    let miou = if present.is_empty() { 1.0 } else { present.iter().sum::<f64>() / present.len() as f64 };
    let denom = 2 * tp + fp + fn_;
    let dice = if denom == 0 { 1.0 } else { 2.0 * tp as f64 / denom as f64 };
    let total = tp + fp + fn_ + tn;
    let pa = if total == 0 { 1.0 } else { (tp + tn) as f64 / total as f64 };
    Ok(SegScores { miou, dice, pa, iou_fg, iou_bg })
}
