//! Classification loss as a function of the log-Fourier kernels, with its
//! analytic gradient.
//!
//! For fixed maps every class plane is `Re IDFT(exp(Y - K))`, so a pixel
//! gradient `G` on plane `r` pulls back to bin `k` of `K_r` as
//! `-conj(Z_k) * DFT(G)_k / N` with `Z = exp(Y - K_r)`. Gradients are packed
//! as `d/d re + i d/d im` per bin.

use std::f64::consts::LN_10;

use rayon::prelude::*;

use crate::error::{ensure, Result};
use crate::image::{Image, Plane, LUMA_WEIGHTS};
use crate::metrics::PSNR_CAP;
use crate::spectral::{LogSpectrum, SpectralPlan, C64};

use super::classes::{channel_log_spectra, min_variation_index, LogKernelSet};
use super::segmap::BlurSegmentationMap;

/// Where the latent sharp estimate of the regularization term comes from.
#[derive(Debug, Clone, PartialEq)]
pub enum LatentSource {
    /// A fixed image; the term adds a constant and no gradient.
    Frozen(Image),
    /// The assembled image itself.
    Assembled,
    /// The class plane with the sparsest luma gradients, differentiated
    /// through that plane.
    MinVariation,
}

#[derive(Debug, Clone)]
enum Latent {
    Frozen(f64),
    Assembled,
    MinVariation,
}

#[derive(Debug, Clone)]
struct PreparedPair {
    y_ls: Vec<LogSpectrum>,
    x: Vec<Plane>,
    rho: BlurSegmentationMap,
    latent: Latent,
}

/// Loss value and per-class gradient for one kernel configuration.
///
/// `curvature` is a diagonal Gauss-Newton estimate per bin, exact when each
/// class owns whole images; it is shared by the real and imaginary parts.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelGradient {
    pub loss: f64,
    pub grads: Vec<Vec<C64>>,
    pub curvature: Vec<Vec<f64>>,
}

impl KernelGradient {
    /// Euclidean norm over all classes and bins.
    pub fn norm(&self) -> f64 {
        self.grads.iter().flatten().map(|g| g.norm_sqr()).sum::<f64>().sqrt()
    }
}

/// `d = -PSNR = 10 log10(mse)` floored at the cap, and `dd/dmse`.
fn distance(mse: f64) -> (f64, f64) {
    if mse < 10f64.powf(-PSNR_CAP / 10.0) {
        (-PSNR_CAP, 0.0)
    } else {
        (10.0 * mse.log10(), 10.0 / (LN_10 * mse))
    }
}

fn luma_of(planes: &[Plane]) -> Plane {
    if planes.len() == 1 {
        return planes[0].clone();
    }
    let (h, w) = planes[0].dims();
    let data = (0..h * w).map(|i| (0..3).map(|c| LUMA_WEIGHTS[c] * planes[c].data[i]).sum()).collect();
    Plane { height: h, width: w, data }
}

fn squared_error(a: &[Plane], b: &[Plane]) -> f64 {
    a.iter().zip(b).map(|(p, q)| p.data.iter().zip(&q.data).map(|(u, v)| (u - v).powi(2)).sum::<f64>()).sum()
}

/// Mean classification loss over a set of aligned pairs, for kernels given
/// directly as log spectra.
#[derive(Debug, Clone)]
pub struct KernelObjective {
    plan: SpectralPlan,
    lambda: f64,
    eps_rel: f64,
    pairs: Vec<PreparedPair>,
}

impl KernelObjective {
    pub fn new(dims: (usize, usize), lambda: f64, eps_rel: f64) -> Result<Self> {
        ensure!(lambda >= 0.0 && lambda.is_finite(), Parameter, "lambda must be >= 0, got {lambda}");
        ensure!(eps_rel > 0.0, Parameter, "eps must be positive");
        Ok(KernelObjective { plan: SpectralPlan::new(dims.0, dims.1), lambda, eps_rel, pairs: Vec::new() })
    }

    pub fn plan(&self) -> &SpectralPlan {
        &self.plan
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn push(&mut self, y: &Image, x: &Image, rho: BlurSegmentationMap, latent: LatentSource) -> Result<()> {
        y.ensure_same_shape(x, "blur and sharp image")?;
        ensure!(y.dims() == self.plan.dims(), Dimension, "image {:?} vs objective {:?}", y.dims(), self.plan.dims());
        ensure!(rho.dims() == y.dims(), Dimension, "map {:?} vs image {:?}", rho.dims(), y.dims());
        let xs = x.planes();
        let latent = match latent {
            LatentSource::Frozen(l) => {
                l.ensure_same_shape(x, "latent and sharp image")?;
                let mse = squared_error(&l.planes(), &xs) / x.data().len() as f64;
                Latent::Frozen(distance(mse).0)
            }
            LatentSource::Assembled => Latent::Assembled,
            LatentSource::MinVariation => Latent::MinVariation,
        };
        let y_ls = channel_log_spectra(&self.plan, y, self.eps_rel)?;
        self.pairs.push(PreparedPair { y_ls, x: xs, rho, latent });
        Ok(())
    }

    pub fn map(&self, i: usize) -> &BlurSegmentationMap {
        &self.pairs[i].rho
    }

    pub fn set_map(&mut self, i: usize, rho: BlurSegmentationMap) -> Result<()> {
        ensure!(rho.dims() == self.plan.dims(), Dimension, "map {:?} vs objective {:?}", rho.dims(), self.plan.dims());
        self.pairs[i].rho = rho;
        Ok(())
    }

    /// Replaces the latent estimate of pair `i` by a frozen image.
    pub fn freeze_latent(&mut self, i: usize, latent: &Image) -> Result<()> {
        let p = &mut self.pairs[i];
        let lp = latent.planes();
        ensure!(lp.len() == p.x.len() && lp[0].dims() == p.x[0].dims(), Dimension, "latent image shape mismatch");
        let n = (p.x.len() * p.x[0].data.len()) as f64;
        p.latent = Latent::Frozen(distance(squared_error(&lp, &p.x) / n).0);
        Ok(())
    }

    fn check(&self, kernels: &[LogSpectrum]) -> Result<()> {
        ensure!(!self.pairs.is_empty(), Parameter, "objective has no pairs");
        ensure!(!kernels.is_empty(), Parameter, "need at least one kernel");
        ensure!(kernels.iter().all(|k| k.dims() == self.plan.dims()), Dimension, "kernel spectra must be {:?}", self.plan.dims());
        for p in &self.pairs {
            ensure!(
                p.rho.classes() <= kernels.len() && p.rho.indices().iter().all(|&i| (i as usize) < kernels.len()),
                Invariant,
                "map uses classes beyond the {} kernels",
                kernels.len()
            );
        }
        Ok(())
    }

    /// Class planes of pair `i`, `[class][channel]`.
    fn planes(&self, i: usize, kernels: &[LogSpectrum]) -> Result<Vec<Vec<Plane>>> {
        let dims = self.plan.dims();
        kernels.iter().map(|k| self.pairs[i].y_ls.iter().map(|y| self.plan.deconvolve(y, k, dims).map(|o| o.plane)).collect()).collect()
    }

    /// Oracle maps for every pair under `kernels`, from luma distances.
    pub fn assign(&self, kernels: &[LogSpectrum]) -> Result<Vec<BlurSegmentationMap>> {
        ensure!(!kernels.is_empty(), Parameter, "need at least one kernel");
        let (h, w) = self.plan.dims();
        (0..self.pairs.len())
            .into_par_iter()
            .map(|i| {
                let nu = self.planes(i, kernels)?;
                let lumas: Vec<Plane> = nu.iter().map(|p| luma_of(p)).collect();
                let target = luma_of(&self.pairs[i].x);
                let indices = (0..h * w)
                    .map(|j| {
                        let mut best = 0;
                        let mut best_err = f64::INFINITY;
                        for (r, l) in lumas.iter().enumerate() {
                            let e = (l.data[j] - target.data[j]).powi(2);
                            if e < best_err {
                                best_err = e;
                                best = r as u16;
                            }
                        }
                        best
                    })
                    .collect();
                BlurSegmentationMap::new(h, w, kernels.len(), indices)
            })
            .collect()
    }

    /// Assembled image of pair `i`.
    pub fn assembled(&self, i: usize, kernels: &[LogSpectrum]) -> Result<Image> {
        let nu = self.planes(i, kernels)?;
        Image::from_planes(&assemble_planes(&nu, &self.pairs[i].rho))
    }

    pub fn loss(&self, kernels: &[LogSpectrum]) -> Result<f64> {
        self.check(kernels)?;
        let losses =
            (0..self.pairs.len()).into_par_iter().map(|i| self.pair_eval(i, kernels, false).map(|(l, _)| l)).collect::<Result<Vec<_>>>()?;
        Ok(losses.iter().sum::<f64>() / losses.len() as f64)
    }

    pub fn gradient(&self, kernels: &[LogSpectrum]) -> Result<KernelGradient> {
        self.check(kernels)?;
        let parts = (0..self.pairs.len()).into_par_iter().map(|i| self.pair_eval(i, kernels, true)).collect::<Result<Vec<_>>>()?;
        let n = parts.len() as f64;
        let bins = self.plan.len();
        let mut loss = 0.0;
        let mut grads = vec![vec![C64::default(); bins]; kernels.len()];
        let mut curvature = vec![vec![0.0; bins]; kernels.len()];
        // Summed in pair order so the result does not depend on scheduling.
        for (l, part) in parts {
            loss += l;
            let (g, h) = part.unwrap_or_default();
            for (acc, p) in grads.iter_mut().zip(g) {
                acc.iter_mut().zip(p).for_each(|(a, v)| *a += v);
            }
            for (acc, p) in curvature.iter_mut().zip(h) {
                acc.iter_mut().zip(p).for_each(|(a, v)| *a += v);
            }
        }
        grads.iter_mut().flatten().for_each(|g| *g /= n);
        curvature.iter_mut().flatten().for_each(|h| *h /= n);
        Ok(KernelGradient { loss: loss / n, grads, curvature })
    }

    #[allow(clippy::type_complexity)]
    fn pair_eval(&self, i: usize, kernels: &[LogSpectrum], with_grad: bool) -> Result<(f64, Option<(Vec<Vec<C64>>, Vec<Vec<f64>>)>)> {
        let pair = &self.pairs[i];
        let nu = self.planes(i, kernels)?;
        let xd = assemble_planes(&nu, &pair.rho);
        let m = (pair.x.len() * pair.x[0].data.len()) as f64;
        let (dd, dd_dmse) = distance(squared_error(&xd, &pair.x) / m);
        let (dl, latent_grad) = match pair.latent {
            Latent::Frozen(d) => (d, None),
            Latent::Assembled => (dd, None),
            Latent::MinVariation => {
                let r = min_variation_index(nu.iter().map(|p| luma_of(p)));
                let (d, g) = distance(squared_error(&nu[r], &pair.x) / m);
                (d, Some((r, g)))
            }
        };
        let loss = dd + self.lambda * dl;
        if !with_grad {
            return Ok((loss, None));
        }

        // Pixel-domain gradient per class and channel.
        let data_coef = match pair.latent {
            Latent::Assembled => (1.0 + self.lambda) * dd_dmse,
            _ => dd_dmse,
        } * 2.0
            / m;
        let channels = pair.x.len();
        let npix = pair.x[0].data.len();
        let mut g = vec![vec![vec![0.0; npix]; channels]; kernels.len()];
        let mut active = vec![false; kernels.len()];
        // Weight of |Z|^2 in the curvature of each class.
        let mut weight = vec![0.0; kernels.len()];
        if data_coef != 0.0 {
            #[allow(clippy::needless_range_loop)]
            for j in 0..npix {
                let r = pair.rho.class_at(j);
                active[r] = true;
                weight[r] += data_coef / npix as f64;
                for c in 0..channels {
                    g[r][c][j] += data_coef * (xd[c].data[j] - pair.x[c].data[j]);
                }
            }
        }
        if let Some((r, dl_dmse)) = latent_grad {
            let coef = self.lambda * dl_dmse * 2.0 / m;
            if coef != 0.0 {
                active[r] = true;
                weight[r] += coef;
                for c in 0..channels {
                    for ((gv, &n), &x) in g[r][c].iter_mut().zip(&nu[r][c].data).zip(&pair.x[c].data) {
                        *gv += coef * (n - x);
                    }
                }
            }
        }

        let scale = 1.0 / self.plan.len() as f64;
        let mut grads = vec![vec![C64::default(); npix]; kernels.len()];
        let mut curvature = vec![vec![0.0; npix]; kernels.len()];
        for (r, k) in kernels.iter().enumerate() {
            if !active[r] {
                continue;
            }
            for (c, y) in pair.y_ls.iter().enumerate() {
                let mut w: Vec<C64> = g[r][c].iter().map(|&v| C64::new(v, 0.0)).collect();
                self.plan.forward_in_place(&mut w);
                for (b, (yv, kv)) in y.data.iter().zip(&k.data).enumerate() {
                    let z = (yv - kv).exp();
                    grads[r][b] -= w[b] * scale * z.conj();
                    curvature[r][b] += weight[r] * scale * z.norm_sqr();
                }
            }
        }
        Ok((loss, Some((grads, curvature))))
    }
}

fn assemble_planes(nu: &[Vec<Plane>], rho: &BlurSegmentationMap) -> Vec<Plane> {
    let mut out = nu[0].clone();
    for (j, &r) in rho.indices().iter().enumerate() {
        if r != 0 {
            for (c, p) in out.iter_mut().enumerate() {
                p.data[j] = nu[r as usize][c].data[j];
            }
        }
    }
    out
}

/// Analytic gradient of the classification loss for one pair with respect to
/// every bin of every log-Fourier kernel, holding `rho` fixed.
pub fn kernel_gradient(
    y: &Image,
    x: &Image,
    rho: &BlurSegmentationMap,
    kernels: &LogKernelSet,
    lambda: f64,
    latent: LatentSource,
) -> Result<KernelGradient> {
    let mut obj = KernelObjective::new(y.dims(), lambda, kernels.eps_rel())?;
    obj.push(y, x, rho.clone(), latent)?;
    obj.gradient(kernels.spectra())
}

/// Loss matching [`kernel_gradient`] for arbitrary log spectra.
pub fn kernel_loss(
    y: &Image,
    x: &Image,
    rho: &BlurSegmentationMap,
    kernels: &[LogSpectrum],
    lambda: f64,
    eps_rel: f64,
    latent: LatentSource,
) -> Result<f64> {
    let mut obj = KernelObjective::new(y.dims(), lambda, eps_rel)?;
    obj.push(y, x, rho.clone(), latent)?;
    obj.loss(kernels)
}
