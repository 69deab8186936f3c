//! Segmentation-driven fastener defect editing.
//!
//! Normal bolt crops are turned into defect crops (missing pin, missing
//! nut) by segmenting the attribute, cleaning the mask morphologically and
//! inpainting it. Edited crops can be pasted back into inspection scenes to
//! augment detection datasets.
//!
//! Numeric kernels are generic over [`Scalar`] (`f32` / `f64`); the aliases
//! below fix the common choices.

pub mod backend;
pub mod dataio;
pub mod editpipe;
pub mod era;
pub mod freqprep;
pub mod metrics;
pub mod mock;
pub mod morphmod;
pub mod rng;
pub mod scalar;
pub mod segpipe;
pub mod synth;

pub use scalar::Scalar;

pub type RealGridF64 = dataio::RealGrid<f64>;
pub type RealGridF32 = dataio::RealGrid<f32>;
pub type FreqGridF64 = freqprep::FreqGrid<f64>;
pub type FreqGridF32 = freqprep::FreqGrid<f32>;
pub type AdapterParamsF64 = freqprep::AdapterParams<f64>;
pub type AdapterParamsF32 = freqprep::AdapterParams<f32>;
pub type LossBreakdownF64 = metrics::LossBreakdown<f64>;
/// Exact human-preference score.
pub type HpsScore = num_rational::Ratio<u64>;
