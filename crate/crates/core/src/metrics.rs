//! PSNR and SSIM for images with peak value 1.0.

use serde::{Deserialize, Serialize};

use crate::error::{ensure, Result};
use crate::image::{Image, Plane};

/// Upper bound reported for identical images.
pub const PSNR_CAP: f64 = 100.0;

/// Mean squared error over all samples of all channels.
pub fn mse(a: &Image, b: &Image) -> Result<f64> {
    a.ensure_same_shape(b, "mse operands")?;
    let sum: f64 = a.data().iter().zip(b.data()).map(|(p, q)| (*p as f64 - *q as f64).powi(2)).sum();
    Ok(sum / a.data().len() as f64)
}

/// `10 log10(1 / mse)`, capped at [`PSNR_CAP`].
pub fn psnr_from_mse(mse: f64) -> f64 {
    if mse <= 0.0 {
        return PSNR_CAP;
    }
    (-10.0 * mse.log10()).min(PSNR_CAP)
}

/// Peak signal-to-noise ratio in dB over all channels jointly.
pub fn psnr(a: &Image, b: &Image) -> Result<f64> {
    Ok(psnr_from_mse(mse(a, b)?))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SsimParams {
    pub window: usize,
    pub sigma: f64,
    pub k1: f64,
    pub k2: f64,
}

impl Default for SsimParams {
    fn default() -> Self {
        SsimParams { window: 11, sigma: 1.5, k1: 0.01, k2: 0.03 }
    }
}

impl SsimParams {
    fn weights(&self) -> Vec<f64> {
        let r = (self.window / 2) as f64;
        let g: Vec<f64> = (0..self.window).map(|i| (-((i as f64 - r).powi(2)) / (2.0 * self.sigma * self.sigma)).exp()).collect();
        let s: f64 = g.iter().sum();
        g.into_iter().map(|v| v / s).collect()
    }
}

/// Mean SSIM with the default 11x11 Gaussian window.
pub fn ssim(a: &Image, b: &Image) -> Result<f64> {
    ssim_with(a, b, &SsimParams::default())
}

/// Mean local SSIM over all window positions fully inside the image
/// (no padding), computed per channel and averaged across channels.
pub fn ssim_with(a: &Image, b: &Image, params: &SsimParams) -> Result<f64> {
    a.ensure_same_shape(b, "ssim operands")?;
    ensure!(params.window % 2 == 1 && params.window >= 1, Parameter, "ssim window must be odd");
    ensure!(
        a.height() >= params.window && a.width() >= params.window,
        Parameter,
        "image {}x{} is smaller than the {}x{} ssim window",
        a.height(),
        a.width(),
        params.window,
        params.window
    );
    let w = params.weights();
    let c1 = params.k1 * params.k1;
    let c2 = params.k2 * params.k2;
    let mut total = 0.0;
    for c in 0..a.channels() {
        let pa = a.channel(c);
        let pb = b.channel(c);
        let mu_a = filter_valid(&pa, &w);
        let mu_b = filter_valid(&pb, &w);
        let aa = filter_valid(&product(&pa, &pa), &w);
        let bb = filter_valid(&product(&pb, &pb), &w);
        let ab = filter_valid(&product(&pa, &pb), &w);
        let n = mu_a.data.len();
        let mut acc = 0.0;
        for i in 0..n {
            let (ma, mb) = (mu_a.data[i], mu_b.data[i]);
            let va = aa.data[i] - ma * ma;
            let vb = bb.data[i] - mb * mb;
            let cov = ab.data[i] - ma * mb;
            acc += ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
        }
        total += acc / n as f64;
    }
    Ok(total / a.channels() as f64)
}

fn product(a: &Plane, b: &Plane) -> Plane {
    Plane { height: a.height, width: a.width, data: a.data.iter().zip(&b.data).map(|(p, q)| p * q).collect() }
}

/// Separable correlation keeping only fully supported outputs.
fn filter_valid(p: &Plane, w: &[f64]) -> Plane {
    let k = w.len();
    let (h, wd) = p.dims();
    let ow = wd - k + 1;
    let oh = h - k + 1;
    let mut rows = Plane::zeros(h, ow);
    for y in 0..h {
        for x in 0..ow {
            rows.data[y * ow + x] = (0..k).map(|i| w[i] * p.data[y * wd + x + i]).sum();
        }
    }
    let mut out = Plane::zeros(oh, ow);
    for y in 0..oh {
        for x in 0..ow {
            out.data[y * ow + x] = (0..k).map(|i| w[i] * rows.data[(y + i) * ow + x]).sum();
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identical_images_hit_the_cap() {
        let a = Image::filled(4, 4, 3, 0.2).unwrap();
        assert_eq!(psnr(&a, &a).unwrap(), 100.0);
    }

    #[test]
    fn closed_form_mse_cases() {
        assert_eq!(psnr_from_mse(0.01), 20.0);
        assert_eq!(psnr_from_mse(1e-4), 40.0);
        let a = Image::filled(2, 2, 1, 0.0).unwrap();
        let b = Image::filled(2, 2, 1, 0.1).unwrap();
        assert!((psnr(&a, &b).unwrap() - 20.0).abs() < 1e-6);
    }

    #[test]
    fn shape_mismatch_is_an_error() {
        let a = Image::filled(4, 4, 1, 0.0).unwrap();
        let b = Image::filled(4, 4, 3, 0.0).unwrap();
        assert!(psnr(&a, &b).is_err());
        assert!(ssim(&a, &b).is_err());
    }

    #[test]
    fn ssim_of_identical_image_is_one() {
        let a = Image::from_fn(16, 16, 1, |y, x, _| ((y * 3 + x * 5) % 11) as f32 / 10.0).unwrap();
        assert!((ssim(&a, &a).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn ssim_of_inverted_image_is_below_one() {
        let a = Image::from_fn(16, 16, 1, |y, x, _| ((y * 3 + x * 5) % 11) as f32 / 10.0).unwrap();
        let b = a.map(|v| 1.0 - v).unwrap();
        assert!(ssim(&a, &b).unwrap() < 1.0);
    }

    #[test]
    fn ssim_needs_room_for_the_window() {
        let a = Image::filled(10, 16, 1, 0.5).unwrap();
        assert!(matches!(ssim(&a, &a), Err(crate::Error::Parameter(_))));
    }
}
