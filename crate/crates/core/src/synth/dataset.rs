use std::path::PathBuf;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{ensure, Error, Result};
use crate::image::Image;
use crate::io::{load_image, save_image_as, ImageFormat};
use crate::kernel::{BasisKernelSet, Kernel};
use crate::manifest::{DatasetManifest, KernelRecord, ManifestEntry, ManifestMetadata};

use super::blur::{apply_nonuniform_blur, apply_uniform_blur, RegionMask};
use super::kernels::{motion_kernel, MotionSpec};
use super::scene::synthetic_scene;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum BlurMode {
    /// One kernel per pair.
    #[default]
    Uniform,
    /// Two kernels split by a random straight seam.
    TwoRegion,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum StoredFormat {
    #[default]
    Pfm,
    Png8,
    Png16,
}

impl From<StoredFormat> for ImageFormat {
    fn from(f: StoredFormat) -> Self {
        match f {
            StoredFormat::Pfm => ImageFormat::Pfm,
            StoredFormat::Png8 => ImageFormat::Png8,
            StoredFormat::Png16 => ImageFormat::Png16,
        }
    }
}

/// Parameters for [`make_dataset`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthConfig {
    pub output_dir: PathBuf,
    #[serde(default)]
    pub seed: u64,
    pub pairs: usize,
    #[serde(default = "default_side")]
    pub height: usize,
    #[serde(default = "default_side")]
    pub width: usize,
    #[serde(default = "default_channels")]
    pub channels: usize,
    #[serde(default = "default_kernel_size")]
    pub kernel_size: usize,
    pub kernels: Vec<MotionSpec>,
    #[serde(default)]
    pub mode: BlurMode,
    #[serde(default)]
    pub feather: usize,
    #[serde(default)]
    pub noise_sigma: f64,
    #[serde(default)]
    pub format: StoredFormat,
    /// Sharp source images; procedural scenes are generated when empty.
    #[serde(default)]
    pub sources: Vec<PathBuf>,
}

fn default_side() -> usize {
    64
}
fn default_channels() -> usize {
    1
}
fn default_kernel_size() -> usize {
    15
}

impl SynthConfig {
    pub fn new(output_dir: impl Into<PathBuf>, pairs: usize, kernels: Vec<MotionSpec>) -> Self {
        SynthConfig {
            output_dir: output_dir.into(),
            seed: 0,
            pairs,
            height: default_side(),
            width: default_side(),
            channels: default_channels(),
            kernel_size: default_kernel_size(),
            kernels,
            mode: BlurMode::Uniform,
            feather: 0,
            noise_sigma: 0.0,
            format: StoredFormat::Pfm,
            sources: Vec::new(),
        }
    }
}

/// One generated pair, kept in memory.
#[derive(Debug, Clone)]
pub struct GeneratedPair {
    pub blur: Image,
    pub sharp: Image,
    pub kernel_ids: Vec<usize>,
    pub mask: Option<RegionMask>,
}

/// Generates pair `index` of the dataset described by `cfg`.
///
/// Each pair draws from its own ChaCha stream `(seed, index + 1)`, so pairs
/// can be produced in any order.
pub fn generate_pair(cfg: &SynthConfig, kernels: &BasisKernelSet, index: usize) -> Result<GeneratedPair> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(index as u64 + 1);
    let sharp = if cfg.sources.is_empty() {
        synthetic_scene(cfg.height, cfg.width, cfg.channels, &mut rng)?
    } else {
        load_image(&cfg.sources[index % cfg.sources.len()])?
    };
    let noise_seed: u64 = rng.random();
    let n = kernels.len();
    match cfg.mode {
        BlurMode::Uniform => {
            let id = rng.random_range(0..n);
            let sigma = cfg.noise_sigma + kernel_noise(cfg, id);
            let blur = apply_uniform_blur(&sharp, kernels.get(id), sigma, noise_seed)?;
            Ok(GeneratedPair { blur, sharp, kernel_ids: vec![id], mask: None })
        }
        BlurMode::TwoRegion => {
            ensure!(n >= 2, Parameter, "two-region blur needs at least two kernels");
            let a = rng.random_range(0..n);
            let b = (a + rng.random_range(1..n)) % n;
            let (h, w) = sharp.dims();
            let theta = rng.random_range(0.0..std::f64::consts::TAU);
            let cy = h as f64 / 2.0 + rng.random_range(-0.15..0.15) * h as f64;
            let cx = w as f64 / 2.0 + rng.random_range(-0.15..0.15) * w as f64;
            let mask = RegionMask::half_plane(h, w, theta, cy, cx);
            let pair = BasisKernelSet::new(vec![kernels.get(a).clone(), kernels.get(b).clone()])?;
            let sigma = cfg.noise_sigma + kernel_noise(cfg, a).max(kernel_noise(cfg, b));
            let blur = apply_nonuniform_blur(&sharp, &pair, &mask, cfg.feather, sigma, noise_seed)?;
            Ok(GeneratedPair { blur, sharp, kernel_ids: vec![a, b], mask: Some(mask) })
        }
    }
}

fn kernel_noise(cfg: &SynthConfig, id: usize) -> f64 {
    cfg.kernels[id].noise_sigma
}

/// Kernels described by `cfg`, in order.
pub fn config_kernels(cfg: &SynthConfig) -> Result<BasisKernelSet> {
    ensure!(!cfg.kernels.is_empty(), Parameter, "dataset config lists no kernels");
    let ks = cfg.kernels.iter().map(|m| motion_kernel(m, cfg.kernel_size)).collect::<Result<Vec<Kernel>>>()?;
    BasisKernelSet::new(ks)
}

/// Writes blur/sharp pairs, region masks, kernel files and `manifest.jsonl`
/// under `cfg.output_dir`.
pub fn make_dataset(cfg: &SynthConfig) -> Result<DatasetManifest> {
    ensure!(cfg.pairs >= 1, Parameter, "dataset needs at least one pair");
    ensure!(cfg.channels == 1 || cfg.channels == 3, Parameter, "channels must be 1 or 3");
    let kernels = config_kernels(cfg)?;
    let root = &cfg.output_dir;
    for sub in ["blur", "sharp", "kernels", "masks"] {
        let d = root.join(sub);
        std::fs::create_dir_all(&d).map_err(|e| Error::io(&d, e))?;
    }
    let mut records = Vec::with_capacity(kernels.len());
    for (id, (k, motion)) in kernels.iter().zip(&cfg.kernels).enumerate() {
        let rel = format!("kernels/k{id}.txt");
        k.save(&root.join(&rel), id)?;
        records.push(KernelRecord { id, path: rel, motion: *motion });
    }

    let format = ImageFormat::from(cfg.format);
    let ext = format.extension();
    let entries = (0..cfg.pairs)
        .into_par_iter()
        .map(|i| -> Result<ManifestEntry> {
            let pair = generate_pair(cfg, &kernels, i)?;
            let blur_path = format!("blur/{i:05}.{ext}");
            let sharp_path = format!("sharp/{i:05}.{ext}");
            save_image_as(&pair.blur, &root.join(&blur_path), format)?;
            save_image_as(&pair.sharp, &root.join(&sharp_path), format)?;
            let region_mask_path = match &pair.mask {
                Some(m) => {
                    let p = format!("masks/{i:05}.png");
                    m.save(&root.join(&p))?;
                    Some(p)
                }
                None => None,
            };
            Ok(ManifestEntry { blur_path, sharp_path, ground_truth_kernel_ids: pair.kernel_ids, region_mask_path })
        })
        .collect::<Result<Vec<_>>>()?;

    let manifest =
        DatasetManifest::new(ManifestMetadata { seed: cfg.seed, kernel_size: cfg.kernel_size, kernels: records }, entries, root.clone());
    manifest.write(&root.join("manifest.jsonl"))?;
    Ok(manifest)
}
