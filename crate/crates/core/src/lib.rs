//! Blur pixel discretization for blind motion deblurring.
//!
//! The pipeline deconvolves a blur image with a small basis of motion kernels
//! in the logarithmic Fourier domain (where deconvolution is a subtraction),
//! labels every pixel with the kernel class that best explains it, fits the
//! basis by alternating minimization, and finally regresses a continuous
//! residual `x - y` from the blur image and its class map.

pub mod d2c;
pub mod discretize;
pub mod error;
pub mod eval;
pub mod image;
pub mod io;
pub mod kernel;
pub mod manifest;
pub mod metrics;
pub mod pipeline;
pub mod spectral;
pub mod synth;

pub use error::{Error, Result};
pub use image::{residual_error, Image, Plane};
pub use io::{load_image, save_image};
pub use kernel::{BasisKernelSet, Kernel};
pub use manifest::DatasetManifest;
