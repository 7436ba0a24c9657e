//! Raster containers.
//!
//! [`Image`] stores `f32` samples row-major with channels interleaved
//! (`data[(y * width + x) * channels + c]`). [`Plane`] is a single `f64`
//! channel used as working storage by the spectral and regression code.

use crate::error::{ensure, Error, Result};

/// Luma weights applied to RGB images before segmentation.
pub const LUMA_WEIGHTS: [f64; 3] = [0.299, 0.587, 0.114];

#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    height: usize,
    width: usize,
    channels: usize,
    data: Vec<f32>,
}

impl Image {
    pub fn new(height: usize, width: usize, channels: usize, data: Vec<f32>) -> Result<Self> {
        ensure!(height >= 1 && width >= 1, Dimension, "image must be at least 1x1, got {height}x{width}");
        ensure!(channels == 1 || channels == 3, Parameter, "images have 1 or 3 channels, got {channels}");
        ensure!(
            data.len() == height * width * channels,
            Dimension,
            "expected {} samples for {height}x{width}x{channels}, got {}",
            height * width * channels,
            data.len()
        );
        ensure!(data.iter().all(|v| v.is_finite()), Parameter, "image samples must be finite");
        Ok(Image { height, width, channels, data })
    }

    pub fn filled(height: usize, width: usize, channels: usize, value: f32) -> Result<Self> {
        Self::new(height, width, channels, vec![value; height * width * channels])
    }

    /// Builds an image from a per-sample function `f(row, col, channel)`.
    pub fn from_fn(height: usize, width: usize, channels: usize, mut f: impl FnMut(usize, usize, usize) -> f32) -> Result<Self> {
        let mut data = Vec::with_capacity(height * width * channels);
        for y in 0..height {
            for x in 0..width {
                for c in 0..channels {
                    data.push(f(y, x, c));
                }
            }
        }
        Self::new(height, width, channels, data)
    }

    /// Interleaves single-channel planes into an image, rounding to `f32`.
    pub fn from_planes(planes: &[Plane]) -> Result<Self> {
        ensure!(!planes.is_empty(), Parameter, "no planes given");
        let (h, w) = planes[0].dims();
        ensure!(planes.iter().all(|p| p.dims() == (h, w)), Dimension, "planes have differing dimensions");
        let c = planes.len();
        let mut data = vec![0f32; h * w * c];
        for (ci, p) in planes.iter().enumerate() {
            for (i, v) in p.data.iter().enumerate() {
                data[i * c + ci] = *v as f32;
            }
        }
        Self::new(h, w, c, data)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn pixel_count(&self) -> usize {
        self.height * self.width
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize, c: usize) -> f32 {
        self.data[(y * self.width + x) * self.channels + c]
    }

    #[inline]
    pub fn set(&mut self, y: usize, x: usize, c: usize, v: f32) {
        self.data[(y * self.width + x) * self.channels + c] = v;
    }

    /// Samples of pixel `i` (row-major index) across channels.
    #[inline]
    pub fn pixel(&self, i: usize) -> &[f32] {
        &self.data[i * self.channels..(i + 1) * self.channels]
    }

    #[inline]
    pub fn pixel_mut(&mut self, i: usize) -> &mut [f32] {
        &mut self.data[i * self.channels..(i + 1) * self.channels]
    }

    pub fn channel(&self, c: usize) -> Plane {
        let data = self.data.iter().skip(c).step_by(self.channels).map(|&v| v as f64).collect();
        Plane { height: self.height, width: self.width, data }
    }

    pub fn planes(&self) -> Vec<Plane> {
        (0..self.channels).map(|c| self.channel(c)).collect()
    }

    /// Luma projection as a working plane. Single-channel images are returned as is.
    pub fn luma_plane(&self) -> Plane {
        if self.channels == 1 {
            return self.channel(0);
        }
        let data = self
            .data
            .chunks_exact(3)
            .map(|p| LUMA_WEIGHTS[0] * p[0] as f64 + LUMA_WEIGHTS[1] * p[1] as f64 + LUMA_WEIGHTS[2] * p[2] as f64)
            .collect();
        Plane { height: self.height, width: self.width, data }
    }

    pub fn luma(&self) -> Image {
        if self.channels == 1 {
            return self.clone();
        }
        Image::from_planes(&[self.luma_plane()]).expect("luma of a valid image is valid")
    }

    pub fn map(&self, f: impl Fn(f32) -> f32) -> Result<Image> {
        Image::new(self.height, self.width, self.channels, self.data.iter().map(|&v| f(v)).collect())
    }

    pub fn clamped(&self) -> Image {
        self.map(|v| v.clamp(0.0, 1.0)).expect("clamping keeps samples finite")
    }

    pub fn same_shape(&self, other: &Image) -> bool {
        self.height == other.height && self.width == other.width && self.channels == other.channels
    }

    pub fn ensure_same_shape(&self, other: &Image, what: &str) -> Result<()> {
        if self.same_shape(other) {
            Ok(())
        } else {
            Err(Error::Dimension(format!(
                "{what}: {}x{}x{} vs {}x{}x{}",
                self.height, self.width, self.channels, other.height, other.width, other.channels
            )))
        }
    }

    pub fn mean(&self) -> f64 {
        self.data.iter().map(|&v| v as f64).sum::<f64>() / self.data.len() as f64
    }
}

/// Signed residual `x - y`, without clamping.
pub fn residual_error(x: &Image, y: &Image) -> Result<Image> {
    x.ensure_same_shape(y, "residual operands")?;
    let data = x.data.iter().zip(&y.data).map(|(a, b)| a - b).collect();
    Image::new(x.height, x.width, x.channels, data)
}

/// A single `f64` channel, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Plane {
    pub height: usize,
    pub width: usize,
    pub data: Vec<f64>,
}

impl Plane {
    pub fn zeros(height: usize, width: usize) -> Self {
        Plane { height, width, data: vec![0.0; height * width] }
    }

    pub fn from_vec(height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        ensure!(data.len() == height * width, Dimension, "plane of {height}x{width} needs {} samples, got {}", height * width, data.len());
        Ok(Plane { height, width, data })
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize) -> f64 {
        self.data[y * self.width + x]
    }

    /// Periodic lookup with signed coordinates.
    #[inline]
    pub fn get_wrapped(&self, y: isize, x: isize) -> f64 {
        let yy = y.rem_euclid(self.height as isize) as usize;
        let xx = x.rem_euclid(self.width as isize) as usize;
        self.data[yy * self.width + xx]
    }

    /// Differences between horizontally and vertically adjacent samples.
    fn forward_differences(&self) -> impl Iterator<Item = f64> + '_ {
        (0..self.height).flat_map(move |y| {
            (0..self.width).flat_map(move |x| {
                let v = self.get(y, x);
                let dx = (x + 1 < self.width).then(|| self.get(y, x + 1) - v);
                let dy = (y + 1 < self.height).then(|| self.get(y + 1, x) - v);
                dx.into_iter().chain(dy)
            })
        })
    }

    /// Sum of absolute differences between horizontally and vertically adjacent samples.
    pub fn total_variation(&self) -> f64 {
        self.forward_differences().map(f64::abs).sum()
    }

    /// Total variation divided by the l2 norm of the same differences.
    ///
    /// Scale-free and lower for sparse, sharp gradients; blur spreads edges
    /// and raises it. A constant plane scores 0.
    pub fn normalized_variation(&self) -> f64 {
        let (l1, l2) = self.forward_differences().fold((0.0, 0.0), |(a, b), d| (a + d.abs(), b + d * d));
        if l2 == 0.0 {
            0.0
        } else {
            l1 / l2.sqrt()
        }
    }

    /// Central-difference gradient magnitude with replicated borders.
    pub fn gradient_magnitude(&self) -> Plane {
        let (h, w) = self.dims();
        let mut out = Plane::zeros(h, w);
        for y in 0..h {
            for x in 0..w {
                let xl = self.get(y, x.saturating_sub(1));
                let xr = self.get(y, (x + 1).min(w - 1));
                let yu = self.get(y.saturating_sub(1), x);
                let yd = self.get((y + 1).min(h - 1), x);
                let gx = 0.5 * (xr - xl);
                let gy = 0.5 * (yd - yu);
                out.data[y * w + x] = (gx * gx + gy * gy).sqrt();
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn residual_of_identical_images_is_zero() {
        let x = Image::from_fn(4, 5, 3, |y, x, c| (y * 7 + x * 3 + c) as f32 / 50.0).unwrap();
        let e = residual_error(&x, &x).unwrap();
        assert!(e.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn residual_arithmetic() {
        let x = Image::filled(1, 1, 1, 1.0).unwrap();
        let y = Image::filled(1, 1, 1, 0.25).unwrap();
        assert_eq!(residual_error(&x, &y).unwrap().data(), &[0.75]);
    }

    #[test]
    fn residual_rejects_shape_mismatch() {
        let x = Image::filled(2, 2, 1, 0.0).unwrap();
        let y = Image::filled(2, 3, 1, 0.0).unwrap();
        assert!(matches!(residual_error(&x, &y), Err(Error::Dimension(_))));
    }

    #[test]
    fn rejects_bad_construction() {
        assert!(Image::new(0, 3, 1, vec![]).is_err());
        assert!(Image::new(1, 1, 2, vec![0.0, 0.0]).is_err());
        assert!(Image::new(1, 1, 1, vec![f32::NAN]).is_err());
        assert!(Image::new(2, 2, 1, vec![0.0; 3]).is_err());
    }

    #[test]
    fn luma_weights() {
        let img = Image::new(1, 1, 3, vec![1.0, 0.0, 0.0]).unwrap();
        assert!((img.luma_plane().data[0] - 0.299).abs() < 1e-12);
        let gray = Image::filled(2, 2, 1, 0.3).unwrap();
        assert_eq!(gray.luma(), gray);
    }

    #[test]
    fn planes_round_trip() {
        let img = Image::from_fn(3, 4, 3, |y, x, c| (y + 2 * x + 5 * c) as f32 / 32.0).unwrap();
        assert_eq!(Image::from_planes(&img.planes()).unwrap(), img);
    }
}
