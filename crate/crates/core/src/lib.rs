//! Feature-space Wiener deconvolution for non-blind image deblurring.
//!
//! The observation model is `y = x * k + n`: a sharp image `x` convolved
//! with a known point-spread function `k` plus additive noise `n`. Instead
//! of deconvolving intensities directly, the image is first mapped through
//! a bank of filters (fixed derivative stencils or a small learned
//! extractor), each feature plane is deconvolved with a closed-form Wiener
//! operator regularized by per-feature signal/noise power estimates, and a
//! multi-scale convolutional refiner reconstructs the final image
//! coarse-to-fine.
//!
//! Modules:
//! - [`image`], [`kernel`], [`fft`], [`convolve`], [`resample`], [`metrics`]:
//!   numeric substrate (containers, 2-D FFT, convolution, bicubic
//!   resampling, PSNR/SSIM).
//! - [`blur`]: observation synthesis (trajectory PSFs, calibrated Gaussian
//!   noise, fixture datasets) plus [`toy`] procedural test scenes.
//! - [`bank`]: the feature extractors.
//! - [`wiener`]: power estimation and the frequency-domain Wiener operator.
//! - [`refine`]: feature pyramids and the multi-scale refinement pipeline.
//! - [`nn`], [`train`], [`weights`]: a small reverse-mode autodiff engine,
//!   Adam training of extractor + refiner, and the checkpoint format.

pub mod bank;
pub mod blur;
pub mod convolve;
pub mod error;
pub mod fft;
pub mod image;
pub mod io;
pub mod kernel;
pub mod metrics;
pub mod nn;
pub mod refine;
pub mod resample;
pub mod tensor;
pub mod toy;
pub mod train;
pub mod weights;
pub mod wiener;

pub use bank::{BankKind, FeatureStack, FilterBank};
pub use blur::{NoiseSpec, TrajectoryKernelSpec};
pub use convolve::Boundary;
pub use error::{Error, Result};
pub use image::Image;
pub use kernel::Kernel;
pub use refine::{PipelineConfig, Refiner};
pub use train::TrainConfig;
pub use weights::RefinerWeights;
pub use wiener::{StatsConfig, StatsOrRatio, WienerOperator, WienerStats};
