//! Desk-scale MRI field-strength enhancement.
//!
//! The crate trains a small conditioned velocity network with rectified-flow
//! matching under a band-weighted spatial/spectral loss, runs enhancement by
//! integrating the learned ODE from noise to image, and ships everything
//! needed around that: an orthonormal 3D FFT with an independent naive
//! oracle, phantom generation with field-specific degradations, percentile /
//! resampling / resize preprocessing, NRMSE / PSNR / SSIM metrics, and a
//! minimal NIfTI-1 reader/writer.

pub mod error;
pub mod fasrm;
pub mod flow;
pub mod fourier;
pub mod metrics;
pub mod net;
pub mod nifti;
pub mod preprocess;
pub mod synth;
pub mod task;
pub mod volume;

pub use error::{Error, Result};
pub use task::{FieldStrength, FieldTask, Modality};
pub use volume::{linf_distance, Spectrum3D, Volume3D};
