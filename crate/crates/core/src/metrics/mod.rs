//! Segmentation, image-quality, loss and editing-evaluation metrics.

mod classify;
mod human;
mod loss;
mod quality;
mod seg;

use thiserror::Error;

pub use classify::{
    classify, Classification, ClassifierBackend, HeuristicClassifier, HttpClassifier,
};
pub use human::{compute_aea, compute_hps, hps_table, HpsBallot, HpsSummary};
pub use loss::{composite_loss, LossBreakdown, LossConfig};
pub use quality::{psnr, ssim, Psnr, SSIM_WINDOW};
pub use seg::{seg_metrics, SegScores};

use crate::backend::BackendError;
use crate::dataio::DataError;

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("shape mismatch: {left:?} vs {right:?}")]
    ShapeMismatch { left: (u32, u32, u8), right: (u32, u32, u8) },
    #[error("image {width}x{height} is smaller than the {window}x{window} window")]
    ImageTooSmall { width: u32, height: u32, window: u32 },
    #[error("probability {0} outside [0, 1]")]
    InvalidProbability(f64),
    #[error("invalid loss configuration: {0}")]
    InvalidConfig(String),
    #[error("no predictions")]
    EmptyPredictions,
    #[error("ballot of expert {expert:?} on image {image:?} is not a permutation of 1..={m}")]
    NotAPermutation { expert: String, image: String, m: usize },
    #[error("ballot of expert {expert:?} on image {image:?} does not score config {config:?}")]
    MissingConfig { expert: String, image: String, config: String },
    #[error("ballots do not cover every expert x image pair exactly once: {0}")]
    IncompleteGrid(String),
    #[error("no ballots")]
    NoBallots,
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Backend(#[from] BackendError),
}
