mod common;

use blurseg::metrics::{mse, psnr, psnr_from_mse, ssim, PSNR_CAP};
use blurseg::Image;
use common::*;
use rand::Rng;
use rand_distr::{Distribution, Normal};

/// SSIM written out window by window: Gaussian-weighted moments of each
/// fully contained 11x11 window.
fn direct_ssim(a: &Image, b: &Image) -> f64 {
    let (h, w) = a.dims();
    let g: Vec<f64> = (0..11).map(|i| (-((i as f64 - 5.0).powi(2)) / 4.5).exp()).collect();
    let norm: f64 = g.iter().sum::<f64>().powi(2);
    let (c1, c2) = (0.01f64.powi(2), 0.03f64.powi(2));
    let mut total = 0.0;
    for c in 0..a.channels() {
        let mut acc = 0.0;
        let mut count = 0;
        for top in 0..=h - 11 {
            for left in 0..=w - 11 {
                let mut m = [0.0; 5];
                for i in 0..11 {
                    for j in 0..11 {
                        let wt = g[i] * g[j] / norm;
                        let (p, q) = (a.get(top + i, left + j, c) as f64, b.get(top + i, left + j, c) as f64);
                        m[0] += wt * p;
                        m[1] += wt * q;
                        m[2] += wt * p * p;
                        m[3] += wt * q * q;
                        m[4] += wt * p * q;
                    }
                }
                let (va, vb, cov) = (m[2] - m[0] * m[0], m[3] - m[1] * m[1], m[4] - m[0] * m[1]);
                acc += (2.0 * m[0] * m[1] + c1) * (2.0 * cov + c2) / ((m[0] * m[0] + m[1] * m[1] + c1) * (va + vb + c2));
                count += 1;
            }
        }
        total += acc / count as f64;
    }
    total / a.channels() as f64
}

fn noisy(x: &Image, sigma: f64, seed: u64) -> Image {
    let mut r = rng(seed);
    let n = Normal::new(0.0, sigma).unwrap();
    let data = x.data().iter().map(|&v| (v as f64 + n.sample(&mut r)).clamp(0.0, 1.0) as f32).collect();
    Image::new(x.height(), x.width(), x.channels(), data).unwrap()
}

#[test]
fn ssim_matches_windowed_definition() {
    let mut r = rng(1);
    for case in 0..20u64 {
        let (h, w, c) = (r.random_range(11..24), r.random_range(11..24), if case % 3 == 0 { 3 } else { 1 });
        let x = scene(h, w, c, case);
        let y = noisy(&x, r.random_range(0.01..0.3), case + 100);
        assert!((ssim(&x, &y).unwrap() - direct_ssim(&x, &y)).abs() < 1e-6, "case {case}");
    }
}

#[test]
fn ssim_of_identical_images_is_one() {
    let x = uniform_image(16, 16, 3, 2);
    assert!((ssim(&x, &x).unwrap() - 1.0).abs() < 1e-12);
    assert_eq!(ssim(&Image::filled(8, 8, 1, 0.0).unwrap(), &Image::filled(8, 8, 1, 0.0).unwrap()).unwrap_err().kind(), "parameter");
}

#[test]
fn psnr_closed_forms() {
    let zero = Image::filled(8, 8, 1, 0.0).unwrap();
    let eighth = Image::filled(8, 8, 1, 0.125).unwrap();
    assert_eq!(psnr(&zero, &eighth).unwrap(), -10.0 * (1.0f64 / 64.0).log10());
    let half_on = Image::from_fn(8, 8, 1, |y, _, _| if y < 4 { 1.0 } else { 0.0 }).unwrap();
    assert_eq!(psnr(&zero, &half_on).unwrap(), -10.0 * 0.5f64.log10());
    assert_eq!(psnr(&zero, &zero).unwrap(), PSNR_CAP);
    assert_eq!(psnr_from_mse(0.01), 20.0);
    assert_eq!(psnr_from_mse(1e-4), 40.0);
    assert_eq!(psnr(&zero, &Image::filled(4, 4, 1, 0.0).unwrap()).unwrap_err().kind(), "dimension");
}

#[test]
fn psnr_is_symmetric_and_falls_with_noise() {
    let x = scene(24, 24, 3, 4);
    for seed in 0..20 {
        let a = noisy(&x, 0.02, seed);
        let b = noisy(&x, 0.1, seed);
        assert_eq!(psnr(&a, &x).unwrap(), psnr(&x, &a).unwrap());
        assert_eq!(mse(&a, &x).unwrap(), mse(&x, &a).unwrap());
        assert!(psnr(&a, &x).unwrap() > psnr(&b, &x).unwrap());
        assert!(ssim(&a, &x).unwrap() > ssim(&b, &x).unwrap());
    }
}
