//! Alternating fit of the basis kernels: exact oracle assignment, then
//! projected gradient steps on the log-Fourier kernels with maps held fixed.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{ensure, Result};
use crate::image::Image;
use crate::kernel::{BasisKernelSet, Kernel};
use crate::manifest::DatasetManifest;
use crate::spectral::DEFAULT_EPS_REL;
use crate::synth::{linear_motion_kernel, MotionSpec};

use super::classes::{min_variation_index, LogKernelSet};
use super::objective::{KernelObjective, LatentSource};
use super::precond::tap_direction;
use super::segmap::BlurSegmentationMap;

/// How the basis is seeded before the first assignment.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum InitMode {
    /// Lines of length 1, 3, 5, ... at evenly spaced angles.
    #[default]
    LinearSpread,
    /// Kernels read off `Y - F_L(x)` of evenly spaced training pairs.
    Residual,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FitConfig {
    pub classes: usize,
    pub lambda: f64,
    pub kernel_size: usize,
    pub alternations: usize,
    pub gradient_steps: usize,
    pub step: f64,
    /// Step multiplier after an accepted step.
    pub step_growth: f64,
    pub max_step: f64,
    /// Tap-space Hessian damping, relative to the total curvature weight.
    pub damping: f64,
    /// Gradient phases stop once the step falls below this.
    pub min_step: f64,
    pub eps_rel: f64,
    pub init: InitMode,
    /// Relative tap noise added at initialization.
    pub perturbation: f64,
    pub seed: u64,
}

impl Default for FitConfig {
    fn default() -> Self {
        FitConfig {
            classes: 8,
            lambda: 1.0,
            kernel_size: 31,
            alternations: 30,
            gradient_steps: 20,
            step: 0.1,
            step_growth: 2.0,
            max_step: 1.0,
            damping: 1e-3,
            min_step: 1e-12,
            eps_rel: DEFAULT_EPS_REL,
            init: InitMode::LinearSpread,
            perturbation: 0.0,
            seed: 0,
        }
    }
}

impl FitConfig {
    fn validate(&self) -> Result<()> {
        ensure!(self.classes >= 1, Parameter, "need at least one class");
        ensure!(self.lambda >= 0.0 && self.lambda.is_finite(), Parameter, "lambda must be >= 0");
        ensure!(self.kernel_size % 2 == 1, Parameter, "kernel side must be odd");
        ensure!(self.step > 0.0 && self.min_step > 0.0, Parameter, "step sizes must be positive");
        ensure!(self.step_growth >= 1.0 && self.max_step >= self.step, Parameter, "step growth must be >= 1 and max step >= step");
        ensure!(self.damping > 0.0, Parameter, "damping must be positive");
        ensure!(self.eps_rel > 0.0, Parameter, "eps must be positive");
        ensure!(self.perturbation >= 0.0, Parameter, "perturbation must be >= 0");
        Ok(())
    }
}

/// Loss trace and final state of a fit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub config: FitConfig,
    pub pairs: usize,
    /// Mean loss right after each assignment step.
    pub assignment_losses: Vec<f64>,
    /// Mean loss after each gradient phase.
    pub gradient_losses: Vec<f64>,
    /// Step size at the end of each gradient phase.
    pub step_sizes: Vec<f64>,
    /// Pixels per class (summed over pairs) after each assignment step.
    pub histograms: Vec<Vec<usize>>,
    /// Final spatial taps per class, row-major.
    pub kernels: Vec<Vec<f64>>,
}

impl FitReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

#[derive(Debug, Clone)]
pub struct FitOutput {
    pub kernels: LogKernelSet,
    pub maps: Vec<BlurSegmentationMap>,
    pub report: FitReport,
}

/// Evenly spread straight-line kernels.
pub fn linear_spread(classes: usize, size: usize) -> Result<BasisKernelSet> {
    let ks = (0..classes)
        .map(|r| {
            let length = ((1 + 2 * r) as f64).min(size as f64);
            linear_motion_kernel(&MotionSpec::linear(length, r as f64 * std::f64::consts::PI / classes as f64), size)
        })
        .collect::<Result<Vec<_>>>()?;
    BasisKernelSet::new(ks)
}

fn perturbed(set: &BasisKernelSet, amount: f64, seed: u64) -> Result<BasisKernelSet> {
    if amount == 0.0 {
        return Ok(set.clone());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let ks = set
        .iter()
        .map(|k| {
            let peak = k.taps().iter().cloned().fold(0.0, f64::max);
            let taps = k.taps().iter().map(|t| t + amount * peak * rng.random::<f64>()).collect();
            Kernel::normalized(k.size(), taps)
        })
        .collect::<Result<Vec<_>>>()?;
    BasisKernelSet::new(ks)
}

/// Fits the basis on a manifest's pairs, reduced to luma.
pub fn fit_basis_kernels(dataset: &DatasetManifest, cfg: &FitConfig, init: Option<&BasisKernelSet>) -> Result<FitOutput> {
    ensure!(!dataset.is_empty(), Parameter, "dataset is empty");
    let pairs = (0..dataset.len()).map(|i| dataset.load_pair(i)).collect::<Result<Vec<_>>>()?;
    fit_basis_kernels_on(&pairs, cfg, init)
}

/// Fits the basis on in-memory `(blur, sharp)` pairs, reduced to luma.
///
/// `init` overrides `cfg.init` when given. All pairs must share dimensions.
pub fn fit_basis_kernels_on(pairs: &[(Image, Image)], cfg: &FitConfig, init: Option<&BasisKernelSet>) -> Result<FitOutput> {
    cfg.validate()?;
    ensure!(!pairs.is_empty(), Parameter, "dataset is empty");
    let dims = pairs[0].0.dims();
    ensure!(
        cfg.kernel_size <= dims.0 && cfg.kernel_size <= dims.1,
        Parameter,
        "kernel side {} exceeds image size {:?}",
        cfg.kernel_size,
        dims
    );
    let mut obj = KernelObjective::new(dims, cfg.lambda, cfg.eps_rel)?;
    let luma: Vec<(Image, Image)> = pairs.iter().map(|(y, x)| (y.luma(), x.luma())).collect();
    for (i, (y, x)) in luma.iter().enumerate() {
        ensure!(y.dims() == dims, Dimension, "pair {i} is {:?}, expected {:?}", y.dims(), dims);
        obj.push(y, x, BlurSegmentationMap::constant(dims.0, dims.1, cfg.classes, 0)?, LatentSource::Frozen(y.clone()))?;
    }

    let start = match init {
        Some(set) => {
            ensure!(set.len() == cfg.classes, Parameter, "initial basis has {} kernels, expected {}", set.len(), cfg.classes);
            set.iter().map(|k| k.padded_to(cfg.kernel_size)).collect::<Result<Vec<_>>>().and_then(BasisKernelSet::new)?
        }
        None => match cfg.init {
            InitMode::LinearSpread => linear_spread(cfg.classes, cfg.kernel_size)?,
            InitMode::Residual => residual_init(obj.plan(), &luma, cfg)?,
        },
    };
    let start = perturbed(&start, cfg.perturbation, cfg.seed)?;
    let mut kernels = LogKernelSet::from_kernels_with(obj.plan(), &start, cfg.eps_rel)?;

    // Initial latent estimate: the sharpest class plane of each pair.
    for (i, (y, _)) in luma.iter().enumerate() {
        let nu = super::classes::deconvolve_class_images(y, &kernels)?;
        let r = min_variation_index(nu.planes().iter().map(Image::luma_plane));
        obj.freeze_latent(i, nu.plane(r))?;
    }

    let mut report = FitReport {
        config: cfg.clone(),
        pairs: pairs.len(),
        assignment_losses: Vec::new(),
        gradient_losses: Vec::new(),
        step_sizes: Vec::new(),
        histograms: Vec::new(),
        kernels: Vec::new(),
    };
    let mut step = cfg.step;
    for t in 0..=cfg.alternations {
        for (i, m) in obj.assign(kernels.spectra())?.into_iter().enumerate() {
            obj.set_map(i, m)?;
        }
        let mut loss = obj.loss(kernels.spectra())?;
        report.assignment_losses.push(loss);
        report.histograms.push(histogram(&obj, cfg.classes));
        if t == cfg.alternations {
            break;
        }
        let assembled = (0..obj.len()).map(|i| obj.assembled(i, kernels.spectra())).collect::<Result<Vec<_>>>()?;

        for _ in 0..cfg.gradient_steps {
            if step < cfg.min_step {
                break;
            }
            let g = obj.gradient(kernels.spectra())?;
            let moved = kernels
                .shadow()
                .iter()
                .zip(kernels.spectra())
                .zip(g.grads.iter().zip(&g.curvature))
                .map(|((k, ls), (d, h))| {
                    let dir = tap_direction(obj.plan(), k, ls, d, h, cfg.damping);
                    Kernel::normalized(k.size(), k.taps().iter().zip(dir).map(|(t, d)| t + step * d).collect())
                })
                .collect::<Result<Vec<_>>>()?;
            let trial = LogKernelSet::from_kernels_with(obj.plan(), &BasisKernelSet::new(moved)?, cfg.eps_rel)?;
            let trial_loss = obj.loss(trial.spectra())?;
            if trial_loss <= loss {
                kernels = trial;
                loss = trial_loss;
                step = (step * cfg.step_growth).min(cfg.max_step);
            } else {
                step *= 0.5;
            }
        }
        report.gradient_losses.push(loss);
        report.step_sizes.push(step);

        for (i, a) in assembled.iter().enumerate() {
            obj.freeze_latent(i, a)?;
        }
    }

    report.kernels = kernels.shadow().iter().map(|k| k.taps().to_vec()).collect();
    let maps = (0..obj.len()).map(|i| obj.map(i).clone()).collect();
    Ok(FitOutput { kernels, maps, report })
}

fn histogram(obj: &KernelObjective, classes: usize) -> Vec<usize> {
    let mut h = vec![0; classes];
    for i in 0..obj.len() {
        for (acc, n) in h.iter_mut().zip(obj.map(i).histogram()) {
            *acc += n;
        }
    }
    h
}

/// Kernels estimated as `Y - F_L(x)` on `classes` evenly spaced pairs,
/// using the sharp image as the latent estimate.
fn residual_init(plan: &crate::spectral::SpectralPlan, pairs: &[(Image, Image)], cfg: &FitConfig) -> Result<BasisKernelSet> {
    let n = pairs.len();
    let spectra = (0..cfg.classes)
        .map(|r| {
            let (y, x) = &pairs[r * n / cfg.classes];
            let yl = plan.plane_log_spectrum(&y.channel(0), cfg.eps_rel)?;
            let xl = plan.plane_log_spectrum(&x.channel(0), cfg.eps_rel)?;
            yl.sub(&xl)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(LogKernelSet::project(plan, &spectra, cfg.kernel_size, cfg.eps_rel)?.shadow().clone())
}
