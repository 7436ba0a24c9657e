//! Synthetic motion blur: kernels, uniform and region-wise blur, datasets.

mod blur;
mod dataset;
mod kernels;
mod scene;

pub use blur::{apply_nonuniform_blur, apply_uniform_blur, RegionMask};
pub use dataset::{config_kernels, generate_pair, make_dataset, BlurMode, GeneratedPair, StoredFormat, SynthConfig};
pub use kernels::{linear_motion_kernel, motion_kernel, random_trajectory_kernel, MotionSpec, SUPERSAMPLING};
pub use scene::synthetic_scene;
