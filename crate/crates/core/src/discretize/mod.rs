//! Deconvolved class images, blur segmentation maps, and the basis fit.

mod classes;
mod fit;
mod objective;
mod precond;
mod segmap;

pub use classes::{assemble, class_loss, deconvolve_class_images, latent_estimate, oracle_assign, DeconvolvedClassImages, LogKernelSet};
pub use fit::{fit_basis_kernels, fit_basis_kernels_on, linear_spread, FitConfig, FitOutput, FitReport, InitMode};
pub use objective::{kernel_gradient, kernel_loss, KernelGradient, KernelObjective, LatentSource};
pub use segmap::{soft_to_onehot, BlurSegmentationMap};
