//! Ptychographic phase retrieval.
//!
//! The crate is organised bottom-up:
//!
//! - [`image`]: row-major complex/real arrays, masks, the complex signum and
//!   the raw `PTYF` dump format.
//! - [`forward`]: the ptychographic measurement operator (frame extraction,
//!   probe multiplication, 2D DFT), its adjoint and its Lipschitz constant.
//! - [`loss`]: the amplitude loss, its Wirtinger gradient and the smoothed
//!   family used for derivative checks.
//! - [`solvers`]: Wirtinger flow (fixed step and line search), accelerated
//!   Wirtinger flow, nonlinear conjugate gradients and the alternating
//!   projection baselines (ER, DM, RAAR, ePIE), plus joint probe recovery.
//! - [`sim`]: probes, hexagonal scans, phantoms, noise and misalignment.
//! - [`metrics`]: phase/scale-corrected reconstruction errors, FFT
//!   accounting and CSV run logs.

// `!(x > 0.0)` is the idiom for rejecting NaN along with out-of-range
// values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod forward;
pub mod image;
pub mod loss;
pub mod metrics;
pub mod sim;
pub mod solvers;

pub use forward::{DftNormalization, DiffractionStack, FieldStack, FrameStack, PtychoOperator, ScanPattern};
pub use image::{complex_sgn, masked_norm, ComplexImage, Image, MaskRegion, RealImage};
pub use metrics::FftCounter;
pub use num_complex::Complex64;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("non-finite value in {0}")]
    NonFinite(String),
    #[error("mask is empty")]
    EmptyMask,
    #[error("mask out of bounds: {0}")]
    MaskOutOfBounds(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("probe has no energy; step size undefined")]
    ZeroProbe,
    #[error("dense matrix of {entries} entries exceeds cap {cap}")]
    DenseCapExceeded { entries: usize, cap: usize },
    #[error("malformed data: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
