//! Frequency-domain preprocessing: CLAHE enhancement, centered FFT pair,
//! high-pass masking and the adapter forward pass.

mod adapter;
mod clahe;
mod encode;
mod fft;
mod hpf;

use thiserror::Error;

pub use adapter::{adapter_forward, gelu, AdapterParams, Matrix};
pub use clahe::{clahe, ClaheParams};
pub use encode::{encode_component, ComponentSidecar, EncodedComponent, COMPONENT_OFFSET};
pub use fft::{fft2_centered, fft2_centered_grid, ifft2_centered, ifft2_centered_complex, FreqGrid};
pub use hpf::{build_hpf_mask, high_freq_component, high_pass_filter_grid, HpfMask, DEFAULT_TAU};

#[derive(Debug, Error, PartialEq)]
pub enum FreqError {
    #[error("invalid CLAHE parameters: {0}")]
    InvalidClahe(String),
    #[error("{tiles:?} tiles do not fit a {image:?} image")]
    TilesLargerThanImage { tiles: (u32, u32), image: (u32, u32) },
    #[error("expected a single-channel image")]
    NotGrayscale,
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },
    #[error("adapter weights contain non-finite values")]
    NonFiniteWeights,
}
