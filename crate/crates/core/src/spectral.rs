//! 2-D DFT, logarithmic Fourier transform, and deconvolution by
//! log-spectrum subtraction.
//!
//! All transforms treat images as periodic. Kernels are embedded with their
//! center tap at the origin, so convolving or deconvolving never shifts the
//! image. The complex logarithm uses the principal branch with the magnitude
//! floored at `eps`; bins with zero magnitude get phase zero.

use std::f64::consts::PI;
use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};

use crate::error::{ensure, Result};
use crate::image::Plane;
use crate::kernel::Kernel;

pub type C64 = Complex<f64>;

/// Default magnitude floor, relative to the peak magnitude of a spectrum.
pub const DEFAULT_EPS_REL: f64 = 1e-6;

/// Complex DFT coefficients of a (padded) plane, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrum {
    pub height: usize,
    pub width: usize,
    pub data: Vec<C64>,
}

impl Spectrum {
    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn peak_magnitude(&self) -> f64 {
        self.data.iter().map(|z| z.norm()).fold(0.0, f64::max)
    }

    /// Absolute floor for `log_fourier` given a floor relative to the peak.
    pub fn relative_eps(&self, eps_rel: f64) -> f64 {
        let peak = self.peak_magnitude();
        if peak > 0.0 {
            eps_rel * peak
        } else {
            eps_rel
        }
    }
}

/// Complex log spectrum: real part is log-magnitude, imaginary part is phase.
#[derive(Debug, Clone, PartialEq)]
pub struct LogSpectrum {
    pub height: usize,
    pub width: usize,
    pub data: Vec<C64>,
}

impl LogSpectrum {
    /// Wraps arbitrary complex values, reducing phases to `(-pi, pi]`.
    pub fn from_values(height: usize, width: usize, mut data: Vec<C64>) -> Result<Self> {
        ensure!(data.len() == height * width, Dimension, "log spectrum {height}x{width} needs {} bins", height * width);
        for z in data.iter_mut() {
            z.im = wrap_phase(z.im);
        }
        Ok(LogSpectrum { height, width, data })
    }

    pub fn zeros(height: usize, width: usize) -> Self {
        LogSpectrum { height, width, data: vec![C64::new(0.0, 0.0); height * width] }
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn sub(&self, other: &LogSpectrum) -> Result<LogSpectrum> {
        ensure!(self.dims() == other.dims(), Dimension, "log spectra {:?} and {:?} differ", self.dims(), other.dims());
        let data = self.data.iter().zip(&other.data).map(|(a, b)| a - b).collect();
        Ok(LogSpectrum { height: self.height, width: self.width, data })
    }

    pub fn add(&self, other: &LogSpectrum) -> Result<LogSpectrum> {
        ensure!(self.dims() == other.dims(), Dimension, "log spectra {:?} and {:?} differ", self.dims(), other.dims());
        let data = self.data.iter().zip(&other.data).map(|(a, b)| a + b).collect();
        Ok(LogSpectrum { height: self.height, width: self.width, data })
    }

    /// Per-bin complex exponential.
    pub fn exp(&self) -> Spectrum {
        Spectrum { height: self.height, width: self.width, data: self.data.iter().map(|z| z.exp()).collect() }
    }
}

/// Reduces an angle to `(-pi, pi]`.
pub fn wrap_phase(phi: f64) -> f64 {
    if phi > -PI && phi <= PI {
        return phi;
    }
    let w = phi - 2.0 * PI * ((phi + PI) / (2.0 * PI)).floor();
    if w <= -PI {
        w + 2.0 * PI
    } else {
        w
    }
}

/// Transform sizes for a plane of the given dimensions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Padding {
    /// Exact size; the image is treated as one period.
    #[default]
    Periodic,
    /// Next power of two on each side, zero padded.
    PowerOfTwo,
}

impl Padding {
    pub fn dims_for(self, dims: (usize, usize)) -> (usize, usize) {
        match self {
            Padding::Periodic => dims,
            Padding::PowerOfTwo => (dims.0.next_power_of_two(), dims.1.next_power_of_two()),
        }
    }
}

/// Output of an inverse transform: the real part, plus the RMS of the
/// discarded imaginary part as a diagnostic.
#[derive(Debug, Clone)]
pub struct InverseOutput {
    pub plane: Plane,
    pub imag_residue: f64,
}

/// FFT plans for one transform size. Plans are cheap to clone; create one
/// per worker.
#[derive(Clone)]
pub struct SpectralPlan {
    height: usize,
    width: usize,
    row_fwd: Arc<dyn Fft<f64>>,
    row_inv: Arc<dyn Fft<f64>>,
    col_fwd: Arc<dyn Fft<f64>>,
    col_inv: Arc<dyn Fft<f64>>,
}

impl std::fmt::Debug for SpectralPlan {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SpectralPlan").field("height", &self.height).field("width", &self.width).finish()
    }
}

impl SpectralPlan {
    pub fn new(height: usize, width: usize) -> Self {
        assert!(height >= 1 && width >= 1, "transform size must be positive");
        let mut planner = FftPlanner::new();
        SpectralPlan {
            height,
            width,
            row_fwd: planner.plan_fft_forward(width),
            row_inv: planner.plan_fft_inverse(width),
            col_fwd: planner.plan_fft_forward(height),
            col_inv: planner.plan_fft_inverse(height),
        }
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn len(&self) -> usize {
        self.height * self.width
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    fn transform(&self, buf: &mut [C64], rows: &Arc<dyn Fft<f64>>, cols: &Arc<dyn Fft<f64>>) {
        debug_assert_eq!(buf.len(), self.len());
        let scratch_len = rows.get_inplace_scratch_len().max(cols.get_inplace_scratch_len());
        let mut scratch = vec![C64::default(); scratch_len];
        for row in buf.chunks_exact_mut(self.width) {
            rows.process_with_scratch(row, &mut scratch);
        }
        let mut col = vec![C64::default(); self.height];
        for x in 0..self.width {
            for (y, v) in col.iter_mut().enumerate() {
                *v = buf[y * self.width + x];
            }
            cols.process_with_scratch(&mut col, &mut scratch);
            for (y, v) in col.iter().enumerate() {
                buf[y * self.width + x] = *v;
            }
        }
    }

    /// Unnormalized forward DFT in place.
    pub fn forward_in_place(&self, buf: &mut [C64]) {
        self.transform(buf, &self.row_fwd, &self.col_fwd);
    }

    /// Inverse DFT in place, including the `1/N` factor.
    pub fn inverse_in_place(&self, buf: &mut [C64]) {
        self.transform(buf, &self.row_inv, &self.col_inv);
        let scale = 1.0 / self.len() as f64;
        buf.iter_mut().for_each(|v| *v *= scale);
    }

    /// Forward DFT of `plane`, zero-padded to the plan size.
    pub fn fft2(&self, plane: &Plane) -> Result<Spectrum> {
        ensure!(
            plane.height <= self.height && plane.width <= self.width,
            Dimension,
            "cannot pad {}x{} to {}x{}",
            plane.height,
            plane.width,
            self.height,
            self.width
        );
        let mut buf = vec![C64::default(); self.len()];
        for y in 0..plane.height {
            for x in 0..plane.width {
                buf[y * self.width + x] = C64::new(plane.get(y, x), 0.0);
            }
        }
        self.forward_in_place(&mut buf);
        Ok(Spectrum { height: self.height, width: self.width, data: buf })
    }

    /// Inverse DFT, returning the real part cropped to `out_dims`.
    pub fn ifft2(&self, spec: &Spectrum, out_dims: (usize, usize)) -> Result<InverseOutput> {
        ensure!(spec.dims() == self.dims(), Dimension, "spectrum {:?} does not match plan {:?}", spec.dims(), self.dims());
        let (oh, ow) = out_dims;
        ensure!(oh >= 1 && ow >= 1 && oh <= self.height && ow <= self.width, Dimension, "crop {oh}x{ow} outside {:?}", self.dims());
        let mut buf = spec.data.clone();
        self.inverse_in_place(&mut buf);
        let mut plane = Plane::zeros(oh, ow);
        let mut imag_sq = 0.0;
        for y in 0..oh {
            for x in 0..ow {
                let v = buf[y * self.width + x];
                plane.data[y * ow + x] = v.re;
                imag_sq += v.im * v.im;
            }
        }
        Ok(InverseOutput { plane, imag_residue: (imag_sq / (oh * ow) as f64).sqrt() })
    }

    /// Spectrum of `kernel` with its center tap moved to the origin.
    pub fn kernel_spectrum(&self, kernel: &Kernel) -> Result<Spectrum> {
        ensure!(
            kernel.size() <= self.height && kernel.size() <= self.width,
            Dimension,
            "kernel side {} exceeds transform size {}x{}",
            kernel.size(),
            self.height,
            self.width
        );
        let mut buf = vec![C64::default(); self.len()];
        for (dy, dx, t) in kernel.offsets() {
            let y = dy.rem_euclid(self.height as isize) as usize;
            let x = dx.rem_euclid(self.width as isize) as usize;
            buf[y * self.width + x] += C64::new(t, 0.0);
        }
        self.forward_in_place(&mut buf);
        Ok(Spectrum { height: self.height, width: self.width, data: buf })
    }

    /// Log spectrum of `kernel`, with the floor set relative to its peak.
    pub fn kernel_log_spectrum(&self, kernel: &Kernel, eps_rel: f64) -> Result<LogSpectrum> {
        let spec = self.kernel_spectrum(kernel)?;
        let eps = spec.relative_eps(eps_rel);
        log_fourier(&spec, eps)
    }

    /// Log spectrum of a plane, with the floor set relative to its peak.
    pub fn plane_log_spectrum(&self, plane: &Plane, eps_rel: f64) -> Result<LogSpectrum> {
        let spec = self.fft2(plane)?;
        let eps = spec.relative_eps(eps_rel);
        log_fourier(&spec, eps)
    }

    pub fn inv_log_fourier(&self, ls: &LogSpectrum, out_dims: (usize, usize)) -> Result<InverseOutput> {
        self.ifft2(&ls.exp(), out_dims)
    }

    /// `F_L^{-1}(Y - K)`, cropped to `out_dims`.
    pub fn deconvolve(&self, y_ls: &LogSpectrum, k_ls: &LogSpectrum, out_dims: (usize, usize)) -> Result<InverseOutput> {
        ensure!(y_ls.dims() == k_ls.dims(), Dimension, "blur {:?} and kernel {:?} log spectra differ", y_ls.dims(), k_ls.dims());
        let data = y_ls.data.iter().zip(&k_ls.data).map(|(y, k)| (y - k).exp()).collect();
        self.ifft2(&Spectrum { height: y_ls.height, width: y_ls.width, data }, out_dims)
    }

    /// Periodic convolution with the kernel centered at the origin.
    pub fn convolve(&self, plane: &Plane, kernel: &Kernel) -> Result<Plane> {
        ensure!(plane.dims() == self.dims(), Dimension, "periodic convolution needs a plane of the plan size");
        let mut x = self.fft2(plane)?;
        let k = self.kernel_spectrum(kernel)?;
        x.data.iter_mut().zip(&k.data).for_each(|(a, b)| *a *= b);
        Ok(self.ifft2(&x, plane.dims())?.plane)
    }
}

/// Forward DFT of `plane` zero-padded to `pad_to`.
pub fn fft2(plane: &Plane, pad_to: (usize, usize)) -> Result<Spectrum> {
    ensure!(pad_to.0 >= 1 && pad_to.1 >= 1, Dimension, "empty transform size");
    SpectralPlan::new(pad_to.0, pad_to.1).fft2(plane)
}

/// Per-bin `log(max(|z|, eps)) + i arg(z)`.
pub fn log_fourier(spec: &Spectrum, eps: f64) -> Result<LogSpectrum> {
    ensure!(eps > 0.0 && eps.is_finite(), Parameter, "magnitude floor must be positive, got {eps}");
    let floor = eps.ln();
    let data = spec
        .data
        .iter()
        .map(|z| {
            let mag = z.norm();
            let phase = if mag == 0.0 { 0.0 } else { wrap_phase(z.im.atan2(z.re)) };
            C64::new(if mag > eps { mag.ln() } else { floor }, phase)
        })
        .collect();
    Ok(LogSpectrum { height: spec.height, width: spec.width, data })
}

pub fn inv_log_fourier(ls: &LogSpectrum, out_dims: (usize, usize)) -> Result<InverseOutput> {
    SpectralPlan::new(ls.height, ls.width).inv_log_fourier(ls, out_dims)
}

pub fn deconvolve(y_ls: &LogSpectrum, k_ls: &LogSpectrum, out_dims: (usize, usize)) -> Result<InverseOutput> {
    SpectralPlan::new(y_ls.height, y_ls.width).deconvolve(y_ls, k_ls, out_dims)
}

/// Separable Tukey window that pulls the image border toward its mean.
///
/// `alpha` is the tapered fraction of each side.
/// Reduces wrap-around artifacts when periodic deconvolution is applied to
/// real photographs.
pub fn edge_taper(plane: &Plane, alpha: f64) -> Result<Plane> {
    ensure!((0.0..=1.0).contains(&alpha), Parameter, "taper fraction must be in [0, 1], got {alpha}");
    let mean = plane.data.iter().sum::<f64>() / plane.data.len() as f64;
    let wy = tukey(plane.height, alpha);
    let wx = tukey(plane.width, alpha);
    let mut out = plane.clone();
    for (y, row) in out.data.chunks_exact_mut(plane.width).enumerate() {
        for (v, &ax) in row.iter_mut().zip(&wx) {
            *v = mean + wy[y] * ax * (*v - mean);
        }
    }
    Ok(out)
}

fn tukey(n: usize, alpha: f64) -> Vec<f64> {
    if n == 1 || alpha == 0.0 {
        return vec![1.0; n];
    }
    let m = (n - 1) as f64;
    let edge = alpha * m / 2.0;
    (0..n)
        .map(|i| {
            let t = i as f64;
            let d = t.min(m - t);
            if d >= edge {
                1.0
            } else {
                0.5 * (1.0 - (PI * d / edge).cos())
            }
        })
        .collect()
}
