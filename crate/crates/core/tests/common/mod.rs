//! Helpers shared by the integration tests.
#![allow(dead_code)]

use std::f64::consts::PI;

use blurseg::synth::{config_kernels, generate_pair, synthetic_scene, BlurMode, MotionSpec, SynthConfig};
use blurseg::{BasisKernelSet, Image, Kernel, Plane};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub type C = (f64, f64);

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn uniform_image(h: usize, w: usize, c: usize, seed: u64) -> Image {
    let mut r = rng(seed);
    Image::from_fn(h, w, c, |_, _, _| r.random::<f32>()).unwrap()
}

pub fn scene(h: usize, w: usize, c: usize, seed: u64) -> Image {
    synthetic_scene(h, w, c, &mut rng(seed)).unwrap()
}

/// Isotropic Gaussian of standard deviation `sigma`, normalized.
pub fn gaussian_kernel(size: usize, sigma: f64) -> Kernel {
    let r = (size / 2) as f64;
    let taps = (0..size * size)
        .map(|i| {
            let (y, x) = ((i / size) as f64 - r, (i % size) as f64 - r);
            (-(x * x + y * y) / (2.0 * sigma * sigma)).exp()
        })
        .collect();
    Kernel::normalized(size, taps).unwrap()
}

/// Textbook `O(N^2)` 2-D DFT with the kernel-style origin convention.
pub fn naive_dft2(h: usize, w: usize, values: &[C], inverse: bool) -> Vec<C> {
    let sign = if inverse { 1.0 } else { -1.0 };
    let mut out = vec![(0.0, 0.0); h * w];
    for u in 0..h {
        for v in 0..w {
            let (mut re, mut im) = (0.0, 0.0);
            for y in 0..h {
                for x in 0..w {
                    let phase = sign * 2.0 * PI * ((u * y) as f64 / h as f64 + (v * x) as f64 / w as f64);
                    let (a, b) = values[y * w + x];
                    re += a * phase.cos() - b * phase.sin();
                    im += a * phase.sin() + b * phase.cos();
                }
            }
            let scale = if inverse { 1.0 / (h * w) as f64 } else { 1.0 };
            out[u * w + v] = (re * scale, im * scale);
        }
    }
    out
}

/// Kernel placed with its center tap at the origin of an `h x w` grid.
pub fn embed_kernel(k: &Kernel, h: usize, w: usize) -> Vec<C> {
    let mut out = vec![(0.0, 0.0); h * w];
    for (dy, dx, v) in k.offsets() {
        let y = dy.rem_euclid(h as isize) as usize;
        let x = dx.rem_euclid(w as isize) as usize;
        out[y * w + x].0 += v;
    }
    out
}

pub fn plane_values(p: &Plane) -> Vec<C> {
    p.data.iter().map(|&v| (v, 0.0)).collect()
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(p, q)| (p - q).abs()).fold(0.0, f64::max)
}

/// In-memory two-region dataset drawn from `specs`.
pub fn two_region_pairs(
    specs: &[MotionSpec],
    kernel_size: usize,
    n: usize,
    side: usize,
    seed: u64,
) -> (Vec<(Image, Image)>, BasisKernelSet) {
    let mut cfg = SynthConfig::new("unused", n, specs.to_vec());
    cfg.seed = seed;
    cfg.kernel_size = kernel_size;
    cfg.height = side;
    cfg.width = side;
    cfg.mode = BlurMode::TwoRegion;
    let ks = config_kernels(&cfg).unwrap();
    ((0..n).map(|i| generate_pair(&cfg, &ks, i).map(|g| (g.blur, g.sharp)).unwrap()).collect(), ks)
}

/// Permutation of `0..n` minimizing the largest per-tap difference.
pub fn best_permutation_error(fitted: &BasisKernelSet, truth: &BasisKernelSet) -> f64 {
    fn rec(i: usize, used: &mut Vec<bool>, fitted: &BasisKernelSet, truth: &BasisKernelSet, worst: f64, best: &mut f64) {
        if i == truth.len() {
            *best = best.min(worst);
            return;
        }
        for j in 0..fitted.len() {
            if !used[j] {
                used[j] = true;
                rec(i + 1, used, fitted, truth, worst.max(fitted.get(j).max_tap_difference(truth.get(i))), best);
                used[j] = false;
            }
        }
    }
    let mut best = f64::INFINITY;
    rec(0, &mut vec![false; fitted.len()], fitted, truth, 0.0, &mut best);
    best
}
