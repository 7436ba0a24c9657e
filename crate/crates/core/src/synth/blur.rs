use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{ensure, Error, Result};
use crate::image::{Image, Plane};
use crate::io::{load_gray8, save_gray8};
use crate::kernel::{BasisKernelSet, Kernel};
use crate::spectral::SpectralPlan;

/// Per-pixel region index into a kernel list.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RegionMask {
    pub height: usize,
    pub width: usize,
    pub labels: Vec<u8>,
}

impl RegionMask {
    pub fn new(height: usize, width: usize, labels: Vec<u8>) -> Result<Self> {
        ensure!(labels.len() == height * width, Dimension, "mask of {height}x{width} needs {} labels", height * width);
        Ok(RegionMask { height, width, labels })
    }

    pub fn uniform(height: usize, width: usize, label: u8) -> Self {
        RegionMask { height, width, labels: vec![label; height * width] }
    }

    /// Two regions split by a line through `(cy, cx)` with normal angle `theta`.
    /// Pixels on the positive side of the normal get label 1.
    pub fn half_plane(height: usize, width: usize, theta: f64, cy: f64, cx: f64) -> Self {
        let (ny, nx) = (theta.sin(), theta.cos());
        let labels = (0..height * width)
            .map(|i| {
                let (y, x) = ((i / width) as f64, (i % width) as f64);
                u8::from((y - cy) * ny + (x - cx) * nx > 0.0)
            })
            .collect();
        RegionMask { height, width, labels }
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn region_count(&self) -> usize {
        self.labels.iter().copied().max().map_or(0, |m| m as usize + 1)
    }

    /// Stored as an 8-bit gray PNG whose levels are the raw labels.
    pub fn save(&self, path: &Path) -> Result<()> {
        save_gray8(&self.labels, self.height, self.width, path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let (labels, h, w) = load_gray8(path)?;
        Self::new(h, w, labels)
    }
}

fn blur_planes(x: &Image, k: &Kernel) -> Result<Vec<Plane>> {
    ensure!(
        k.size() <= x.height() && k.size() <= x.width(),
        Parameter,
        "kernel side {} exceeds image {}x{}",
        k.size(),
        x.height(),
        x.width()
    );
    let plan = SpectralPlan::new(x.height(), x.width());
    x.planes().iter().map(|p| plan.convolve(p, k)).collect()
}

/// Adds seeded Gaussian noise in sample order, then clamps to `[0, 1]`.
fn finish(planes: &[Plane], noise_sigma: f64, seed: u64) -> Result<Image> {
    ensure!(noise_sigma >= 0.0 && noise_sigma.is_finite(), Parameter, "noise sigma must be >= 0, got {noise_sigma}");
    let (h, w) = planes[0].dims();
    let c = planes.len();
    let mut data = vec![0f64; h * w * c];
    for (ci, p) in planes.iter().enumerate() {
        for (i, v) in p.data.iter().enumerate() {
            data[i * c + ci] = *v;
        }
    }
    if noise_sigma > 0.0 {
        let normal = Normal::new(0.0, noise_sigma).map_err(|e| Error::Parameter(e.to_string()))?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for v in data.iter_mut() {
            *v += normal.sample(&mut rng);
        }
    }
    Image::new(h, w, c, data.into_iter().map(|v| (v as f32).clamp(0.0, 1.0)).collect())
}

/// Periodic convolution of every channel with `k`, plus seeded noise.
pub fn apply_uniform_blur(x: &Image, k: &Kernel, noise_sigma: f64, seed: u64) -> Result<Image> {
    let planes = blur_planes(x, k)?;
    finish(&planes, noise_sigma, seed)
}

/// Region-wise uniform blurs composited with linear seams.
///
/// Each region's indicator is box filtered over `2 * (feather / 2) + 1` pixels
/// (borders replicated), so seams ramp linearly across roughly `feather`
/// pixels; `feather` 0 or 1 gives hard seams.
pub fn apply_nonuniform_blur(
    x: &Image,
    kernels: &BasisKernelSet,
    mask: &RegionMask,
    feather: usize,
    noise_sigma: f64,
    seed: u64,
) -> Result<Image> {
    ensure!(mask.dims() == x.dims(), Dimension, "mask {:?} does not match image {:?}", mask.dims(), x.dims());
    ensure!(
        mask.region_count() <= kernels.len(),
        Parameter,
        "mask references region {} but only {} kernels were given",
        mask.region_count().saturating_sub(1),
        kernels.len()
    );
    let (h, w) = x.dims();
    let c = x.channels();
    let mut out = vec![Plane::zeros(h, w); c];
    for r in 0..mask.region_count() {
        let indicator: Vec<f64> = mask.labels.iter().map(|&l| f64::from(l as usize == r)).collect();
        if indicator.iter().all(|&v| v == 0.0) {
            continue;
        }
        let weight = box_filter(&indicator, h, w, feather / 2);
        let blurred = blur_planes(x, kernels.get(r))?;
        for (o, b) in out.iter_mut().zip(&blurred) {
            for ((v, &wt), &bv) in o.data.iter_mut().zip(&weight).zip(&b.data) {
                if wt != 0.0 {
                    *v += wt * bv;
                }
            }
        }
    }
    finish(&out, noise_sigma, seed)
}

fn box_filter(src: &[f64], h: usize, w: usize, radius: usize) -> Vec<f64> {
    if radius == 0 {
        return src.to_vec();
    }
    let r = radius as isize;
    let norm = (2 * radius + 1) as f64;
    let mut tmp = vec![0.0; h * w];
    for y in 0..h {
        for x in 0..w {
            let s: f64 = (-r..=r).map(|d| src[y * w + (x as isize + d).clamp(0, w as isize - 1) as usize]).sum();
            tmp[y * w + x] = s / norm;
        }
    }
    let mut out = vec![0.0; h * w];
    for y in 0..h {
        for x in 0..w {
            let s: f64 = (-r..=r).map(|d| tmp[(y as isize + d).clamp(0, h as isize - 1) as usize * w + x]).sum();
            out[y * w + x] = s / norm;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{linear_motion_kernel, MotionSpec};
    use rand::Rng;

    fn random_image(h: usize, w: usize, c: usize, seed: u64) -> Image {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Image::from_fn(h, w, c, |_, _, _| rng.random::<f32>()).unwrap()
    }

    fn hline(len: f64, size: usize) -> Kernel {
        linear_motion_kernel(&MotionSpec::linear(len, 0.0), size).unwrap()
    }

    #[test]
    fn delta_blur_is_identity() {
        let x = random_image(16, 12, 3, 1);
        assert_eq!(apply_uniform_blur(&x, &Kernel::delta(5).unwrap(), 0.0, 0).unwrap(), x);
    }

    #[test]
    fn constant_image_is_unchanged() {
        let x = Image::filled(16, 16, 1, 0.37).unwrap();
        let y = apply_uniform_blur(&x, &hline(7.0, 9), 0.0, 0).unwrap();
        assert_eq!(y, x);
    }

    #[test]
    fn step_edge_becomes_linear_ramp() {
        let (h, w) = (8, 32);
        let x = Image::from_fn(h, w, 1, |_, c, _| if (8..24).contains(&c) { 1.0 } else { 0.0 }).unwrap();
        let k = hline(5.0, 7);
        let y = apply_uniform_blur(&x, &k, 0.0, 0).unwrap();
        // Direct spatial periodic convolution.
        for row in 0..h {
            for col in 0..w {
                let mut acc = 0.0;
                for (dy, dx, t) in k.offsets() {
                    let sy = (row as isize - dy).rem_euclid(h as isize) as usize;
                    let sx = (col as isize - dx).rem_euclid(w as isize) as usize;
                    acc += t * x.get(sy, sx, 0) as f64;
                }
                assert!((y.get(row, col, 0) as f64 - acc).abs() < 1e-6);
            }
        }
        let ramp: Vec<f32> = (6..11).map(|c| y.get(0, c, 0)).collect();
        for (i, v) in ramp.iter().enumerate() {
            assert!((v - 0.2 * (i as f32 + 1.0)).abs() < 1e-6, "{ramp:?}");
        }
    }

    #[test]
    fn oversized_kernel_is_rejected() {
        let x = Image::filled(4, 4, 1, 0.5).unwrap();
        assert!(matches!(apply_uniform_blur(&x, &hline(5.0, 5), 0.0, 0), Err(Error::Parameter(_))));
    }

    #[test]
    fn noise_is_seeded() {
        let x = Image::filled(8, 8, 1, 0.5).unwrap();
        let k = Kernel::delta(3).unwrap();
        let a = apply_uniform_blur(&x, &k, 0.05, 7).unwrap();
        assert_eq!(a, apply_uniform_blur(&x, &k, 0.05, 7).unwrap());
        assert_ne!(a, apply_uniform_blur(&x, &k, 0.05, 8).unwrap());
    }

    #[test]
    fn zero_mask_matches_uniform_blur() {
        let x = random_image(16, 16, 3, 2);
        let set = BasisKernelSet::new(vec![hline(5.0, 7), Kernel::delta(7).unwrap()]).unwrap();
        let mask = RegionMask::uniform(16, 16, 0);
        let a = apply_nonuniform_blur(&x, &set, &mask, 4, 0.01, 3).unwrap();
        let b = apply_uniform_blur(&x, set.get(0), 0.01, 3).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn half_planes_match_their_own_blur_away_from_seam() {
        let x = random_image(32, 32, 1, 4);
        let ka = hline(5.0, 7);
        let kb = linear_motion_kernel(&MotionSpec::linear(5.0, std::f64::consts::FRAC_PI_2), 7).unwrap();
        let set = BasisKernelSet::new(vec![ka.clone(), kb.clone()]).unwrap();
        // Vertical seam at column 15.5: columns >= 16 are region 1.
        let mask = RegionMask::half_plane(32, 32, 0.0, 0.0, 15.5);
        let y = apply_nonuniform_blur(&x, &set, &mask, 0, 0.0, 0).unwrap();
        let ya = apply_uniform_blur(&x, &ka, 0.0, 0).unwrap();
        let yb = apply_uniform_blur(&x, &kb, 0.0, 0).unwrap();
        for row in 0..32 {
            for col in 0..32 {
                let v = y.get(row, col, 0);
                if col < 16 {
                    assert_eq!(v, ya.get(row, col, 0));
                } else {
                    assert_eq!(v, yb.get(row, col, 0));
                }
            }
        }
    }

    #[test]
    fn feathered_seam_blends_linearly() {
        let mask = RegionMask::half_plane(4, 20, 0.0, 0.0, 9.5);
        let w = box_filter(&mask.labels.iter().map(|&l| l as f64).collect::<Vec<_>>(), 4, 20, 2);
        let row: Vec<f64> = w[..20].to_vec();
        assert_eq!(&row[..8], &[0.0; 8]);
        assert!((row[8] - 0.2).abs() < 1e-12 && (row[9] - 0.4).abs() < 1e-12 && (row[10] - 0.6).abs() < 1e-12);
        assert_eq!(&row[12..], &[1.0; 8]);
    }

    #[test]
    fn delta_kernels_everywhere_is_identity() {
        let x = random_image(12, 12, 1, 5);
        let d = Kernel::delta(3).unwrap();
        let set = BasisKernelSet::new(vec![d.clone(), d]).unwrap();
        let mask = RegionMask::half_plane(12, 12, 0.7, 6.0, 6.0);
        let y = apply_nonuniform_blur(&x, &set, &mask, 3, 0.0, 0).unwrap();
        for (a, b) in y.data().iter().zip(x.data()) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn out_of_range_region_is_rejected() {
        let x = Image::filled(4, 4, 1, 0.5).unwrap();
        let set = BasisKernelSet::new(vec![Kernel::delta(3).unwrap()]).unwrap();
        let mask = RegionMask::half_plane(4, 4, 0.0, 0.0, 1.5);
        assert!(matches!(apply_nonuniform_blur(&x, &set, &mask, 0, 0.0, 0), Err(Error::Parameter(_))));
        let wrong = RegionMask::uniform(3, 4, 0);
        assert!(matches!(apply_nonuniform_blur(&x, &set, &wrong, 0, 0.0, 0), Err(Error::Dimension(_))));
    }

    #[test]
    fn mask_png_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let mask = RegionMask::half_plane(9, 7, 1.0, 4.0, 3.0);
        let p = dir.path().join("m.png");
        mask.save(&p).unwrap();
        assert_eq!(RegionMask::load(&p).unwrap(), mask);
    }
}
