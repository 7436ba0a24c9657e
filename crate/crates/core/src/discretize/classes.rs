use rayon::prelude::*;

use crate::error::{ensure, Error, Result};
use crate::image::{Image, Plane, LUMA_WEIGHTS};
use crate::kernel::{BasisKernelSet, Kernel};
use crate::metrics::psnr;
use crate::spectral::{LogSpectrum, SpectralPlan};

use super::segmap::BlurSegmentationMap;

/// Log-Fourier basis kernels for one transform size, together with the
/// spatial kernels they were projected from.
#[derive(Debug, Clone, PartialEq)]
pub struct LogKernelSet {
    dims: (usize, usize),
    eps_rel: f64,
    spectra: Vec<LogSpectrum>,
    shadow: BasisKernelSet,
}

impl LogKernelSet {
    pub fn from_kernels(kernels: &BasisKernelSet, dims: (usize, usize), eps_rel: f64) -> Result<Self> {
        Self::from_kernels_with(&SpectralPlan::new(dims.0, dims.1), kernels, eps_rel)
    }

    pub fn from_kernels_with(plan: &SpectralPlan, kernels: &BasisKernelSet, eps_rel: f64) -> Result<Self> {
        ensure!(eps_rel > 0.0, Parameter, "eps must be positive");
        let spectra = kernels.iter().map(|k| plan.kernel_log_spectrum(k, eps_rel)).collect::<Result<Vec<_>>>()?;
        Ok(LogKernelSet { dims: plan.dims(), eps_rel, spectra, shadow: kernels.clone() })
    }

    /// Maps arbitrary log spectra back to valid spatial kernels of side
    /// `kernel_size` (crop around the origin, zero negative taps, renormalize)
    /// and re-enters the log-Fourier domain.
    pub fn project(plan: &SpectralPlan, spectra: &[LogSpectrum], kernel_size: usize, eps_rel: f64) -> Result<Self> {
        let kernels = spectra.iter().map(|ls| spatial_kernel(plan, ls, kernel_size)).collect::<Result<Vec<_>>>()?;
        Self::from_kernels_with(plan, &BasisKernelSet::new(kernels)?, eps_rel)
    }

    pub fn len(&self) -> usize {
        self.spectra.len()
    }

    pub fn is_empty(&self) -> bool {
        self.spectra.is_empty()
    }

    pub fn dims(&self) -> (usize, usize) {
        self.dims
    }

    pub fn eps_rel(&self) -> f64 {
        self.eps_rel
    }

    pub fn spectra(&self) -> &[LogSpectrum] {
        &self.spectra
    }

    pub fn shadow(&self) -> &BasisKernelSet {
        &self.shadow
    }

    pub fn kernel_size(&self) -> usize {
        self.shadow.kernel_size()
    }

    /// Entry `perm[i]` becomes entry `i`.
    pub fn permuted(&self, perm: &[usize]) -> Result<Self> {
        ensure!(perm.len() == self.len(), Parameter, "permutation length mismatch");
        Ok(LogKernelSet {
            dims: self.dims,
            eps_rel: self.eps_rel,
            spectra: perm.iter().map(|&p| self.spectra[p].clone()).collect(),
            shadow: self.shadow.permuted(perm)?,
        })
    }
}

fn spatial_kernel(plan: &SpectralPlan, ls: &LogSpectrum, size: usize) -> Result<Kernel> {
    let (h, w) = plan.dims();
    ensure!(size % 2 == 1 && size <= h && size <= w, Parameter, "kernel side {size} invalid for {h}x{w}");
    let full = plan.ifft2(&ls.exp(), (h, w))?.plane;
    let r = (size / 2) as isize;
    let mut taps = Vec::with_capacity(size * size);
    for dy in -r..=r {
        for dx in -r..=r {
            taps.push(full.get_wrapped(dy, dx));
        }
    }
    Kernel::normalized(size, taps)
}

/// One deconvolved plane per basis kernel, aligned with the blur image.
#[derive(Debug, Clone, PartialEq)]
pub struct DeconvolvedClassImages {
    planes: Vec<Image>,
}

impl DeconvolvedClassImages {
    pub fn new(planes: Vec<Image>) -> Result<Self> {
        ensure!(!planes.is_empty(), Parameter, "need at least one class plane");
        ensure!(planes.iter().all(|p| p.same_shape(&planes[0])), Dimension, "class planes differ in shape");
        Ok(DeconvolvedClassImages { planes })
    }

    pub fn len(&self) -> usize {
        self.planes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.planes.is_empty()
    }

    pub fn planes(&self) -> &[Image] {
        &self.planes
    }

    pub fn plane(&self, r: usize) -> &Image {
        &self.planes[r]
    }

    pub fn dims(&self) -> (usize, usize) {
        self.planes[0].dims()
    }

    pub fn permuted(&self, perm: &[usize]) -> Result<Self> {
        ensure!(perm.len() == self.len(), Parameter, "permutation length mismatch");
        Self::new(perm.iter().map(|&p| self.planes[p].clone()).collect())
    }
}

/// Per-channel log spectra of `img`.
pub(crate) fn channel_log_spectra(plan: &SpectralPlan, img: &Image, eps_rel: f64) -> Result<Vec<LogSpectrum>> {
    img.planes().iter().map(|p| plan.plane_log_spectrum(p, eps_rel)).collect()
}

/// `nu[r][c] = F_L^{-1}(Y_c - K_r)` in `f64`.
pub(crate) fn class_planes(plan: &SpectralPlan, y_ls: &[LogSpectrum], lk: &LogKernelSet) -> Result<Vec<Vec<Plane>>> {
    let dims = plan.dims();
    lk.spectra()
        .par_iter()
        .map(|k| {
            let plan = plan.clone();
            y_ls.iter().map(|y| plan.deconvolve(y, k, dims).map(|o| o.plane)).collect::<Result<Vec<_>>>()
        })
        .collect()
}

/// Deconvolves every channel of `y` with every basis kernel.
pub fn deconvolve_class_images(y: &Image, lk: &LogKernelSet) -> Result<DeconvolvedClassImages> {
    ensure!(y.dims() == lk.dims(), Dimension, "blur image {:?} vs kernel spectra {:?}", y.dims(), lk.dims());
    let plan = SpectralPlan::new(y.height(), y.width());
    let y_ls = channel_log_spectra(&plan, y, lk.eps_rel())?;
    let planes = class_planes(&plan, &y_ls, lk)?.iter().map(|chs| Image::from_planes(chs)).collect::<Result<Vec<_>>>()?;
    DeconvolvedClassImages::new(planes)
}

#[inline]
fn luma_at(img: &Image, i: usize) -> f64 {
    let p = img.pixel(i);
    if p.len() == 1 {
        p[0] as f64
    } else {
        LUMA_WEIGHTS[0] * p[0] as f64 + LUMA_WEIGHTS[1] * p[1] as f64 + LUMA_WEIGHTS[2] * p[2] as f64
    }
}

/// Labels each pixel with the class whose deconvolved luma is closest to the
/// sharp luma; ties go to the lowest class.
pub fn oracle_assign(nu: &DeconvolvedClassImages, x: &Image) -> Result<BlurSegmentationMap> {
    ensure!(nu.dims() == x.dims(), Dimension, "class planes {:?} vs sharp image {:?}", nu.dims(), x.dims());
    let n = x.pixel_count();
    let indices = (0..n)
        .map(|i| {
            let target = luma_at(x, i);
            let mut best = 0u16;
            let mut best_err = f64::INFINITY;
            for (r, p) in nu.planes().iter().enumerate() {
                let e = (luma_at(p, i) - target).powi(2);
                if e < best_err {
                    best_err = e;
                    best = r as u16;
                }
            }
            best
        })
        .collect();
    BlurSegmentationMap::new(x.height(), x.width(), nu.len(), indices)
}

/// Deconvolved image: every pixel copied (all channels) from plane `rho_i`.
pub fn assemble(nu: &DeconvolvedClassImages, rho: &BlurSegmentationMap) -> Result<Image> {
    ensure!(nu.dims() == rho.dims(), Dimension, "class planes {:?} vs map {:?}", nu.dims(), rho.dims());
    if rho.classes() > nu.len() || rho.indices().iter().any(|&i| i as usize >= nu.len()) {
        return Err(Error::Invariant(format!("map uses classes beyond the {} available planes", nu.len())));
    }
    let mut out = nu.plane(0).clone();
    for i in 0..out.pixel_count() {
        let r = rho.class_at(i);
        if r != 0 {
            out.pixel_mut(i).copy_from_slice(nu.plane(r).pixel(i));
        }
    }
    Ok(out)
}

/// Index of the sharpest plane by [`Plane::normalized_variation`] of its luma
/// (lowest index on ties).
pub(crate) fn min_variation_index(lumas: impl Iterator<Item = Plane>) -> usize {
    let mut best = 0;
    let mut best_score = f64::INFINITY;
    for (r, p) in lumas.enumerate() {
        let score = p.normalized_variation();
        if score < best_score {
            best_score = score;
            best = r;
        }
    }
    best
}

/// Latent sharp estimate: the assembled image when a map is available,
/// otherwise the single class plane whose luma has the sparsest gradients.
pub fn latent_estimate(y: &Image, lk: &LogKernelSet, rho: Option<&BlurSegmentationMap>) -> Result<Image> {
    let nu = deconvolve_class_images(y, lk)?;
    match rho {
        Some(rho) => assemble(&nu, rho),
        None => {
            let r = min_variation_index(nu.planes().iter().map(Image::luma_plane));
            Ok(nu.plane(r).clone())
        }
    }
}

/// `d(xd, x) + lambda * d(xl, x)` with `d = -PSNR` (PSNR capped at 100 dB).
pub fn class_loss(xd: &Image, xl: &Image, x: &Image, lambda: f64) -> Result<f64> {
    ensure!(lambda >= 0.0 && lambda.is_finite(), Parameter, "lambda must be >= 0, got {lambda}");
    Ok(-psnr(xd, x)? - lambda * psnr(xl, x)?)
}
