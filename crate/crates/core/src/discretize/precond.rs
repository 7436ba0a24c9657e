//! Gauss-Newton directions on spatial kernel taps.
//!
//! With `K = DFT(k)` and `K~ = log K`, a tap perturbation moves bin `b` of
//! `K~` by `DFT(dk)_b / K_b`. Pulling a per-bin diagonal curvature `c` back
//! to the taps gives the circulant matrix `H = N Re IDFT(c / |K|^2)`, applied
//! matrix-free with two transforms and inverted by conjugate gradients.

use crate::kernel::Kernel;
use crate::spectral::{LogSpectrum, SpectralPlan, C64};

const CG_TOLERANCE: f64 = 1e-10;
const CG_MAX_ITERS: usize = 200;

struct TapSpace<'a> {
    plan: &'a SpectralPlan,
    positions: Vec<usize>,
    weights: Vec<f64>,
    /// Taps allowed to move; the rest sit on the non-negativity bound.
    free: Vec<bool>,
}

impl TapSpace<'_> {
    /// `N Re IDFT(spec)` sampled at the tap positions.
    fn sample(&self, mut spec: Vec<C64>) -> Vec<f64> {
        self.plan.inverse_in_place(&mut spec);
        let n = self.plan.len() as f64;
        self.positions.iter().map(|&p| n * spec[p].re).collect()
    }

    fn apply(&self, v: &[f64], damping: f64) -> Vec<f64> {
        let mut buf = vec![C64::default(); self.plan.len()];
        for (&p, &t) in self.positions.iter().zip(v) {
            buf[p] = C64::new(t, 0.0);
        }
        self.plan.forward_in_place(&mut buf);
        buf.iter_mut().zip(&self.weights).for_each(|(z, w)| *z *= *w);
        let mut out = self.sample(buf);
        for ((o, t), &f) in out.iter_mut().zip(v).zip(&self.free) {
            *o = if f { *o + damping * t } else { 0.0 };
        }
        out
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Damped Gauss-Newton step for the taps of `kernel`, given the gradient and
/// per-bin curvature of the loss with respect to its log spectrum `k_ls`.
/// `damping` is relative to the diagonal of the tap-space matrix.
pub(crate) fn tap_direction(
    plan: &SpectralPlan,
    kernel: &Kernel,
    k_ls: &LogSpectrum,
    grad: &[C64],
    curvature: &[f64],
    damping: f64,
) -> Vec<f64> {
    let (h, w) = plan.dims();
    let positions =
        kernel.offsets().map(|(dy, dx, _)| dy.rem_euclid(h as isize) as usize * w + dx.rem_euclid(w as isize) as usize).collect();
    let k: Vec<C64> = k_ls.data.iter().map(|z| z.exp()).collect();
    let weights = curvature.iter().zip(&k).map(|(c, kb)| c / kb.norm_sqr()).collect();
    let mut space = TapSpace { plan, positions, weights, free: Vec::new() };

    let mut g = space.sample(grad.iter().zip(&k).map(|(g, kb)| g / kb.conj()).collect());
    let n = g.len();
    if g.iter().all(|&v| v == 0.0) {
        return vec![0.0; n];
    }
    // A zero tap stays put when its gradient exceeds the mean over the
    // support, i.e. when moving mass onto it would not help.
    let support: Vec<f64> = kernel.taps().iter().zip(&g).filter(|(t, _)| **t > 0.0).map(|(_, v)| *v).collect();
    let mean = support.iter().sum::<f64>() / support.len().max(1) as f64;
    space.free = kernel.taps().iter().zip(&g).map(|(t, v)| *t > 0.0 || *v < mean).collect();
    for (v, &f) in g.iter_mut().zip(&space.free) {
        if !f {
            *v = 0.0;
        }
    }
    let ones: Vec<f64> = space.free.iter().map(|&f| f64::from(u8::from(f))).collect();
    let mu = damping * space.weights.iter().sum::<f64>();
    // Newton step restricted to directions that keep the tap sum.
    let u = conjugate_gradient(&space, &g, mu);
    let v = conjugate_gradient(&space, &ones, mu);
    let nu = u.iter().sum::<f64>() / v.iter().sum::<f64>();
    u.iter().zip(&v).map(|(a, b)| nu * b - a).collect()
}

fn conjugate_gradient(space: &TapSpace, b: &[f64], mu: f64) -> Vec<f64> {
    let n = b.len();
    let bnorm = dot(b, b).sqrt();
    let mut x = vec![0.0; n];
    let mut r = b.to_vec();
    let mut p = r.clone();
    let mut rr = dot(&r, &r);
    for _ in 0..CG_MAX_ITERS.min(4 * n) {
        let ap = space.apply(&p, mu);
        let pap = dot(&p, &ap);
        if pap <= 0.0 {
            break;
        }
        let alpha = rr / pap;
        x.iter_mut().zip(&p).for_each(|(xi, pi)| *xi += alpha * pi);
        r.iter_mut().zip(&ap).for_each(|(ri, api)| *ri -= alpha * api);
        let rr_new = dot(&r, &r);
        if rr_new.sqrt() <= CG_TOLERANCE * bnorm {
            break;
        }
        let beta = rr_new / rr;
        p.iter_mut().zip(&r).for_each(|(pi, ri)| *pi = ri + beta * *pi);
        rr = rr_new;
    }
    x
}
