//! Discrete-to-continuous conversion: per-class linear patch filters that
//! regress the residual `x - y` from the blur image and its class map.
//!
//! Every pixel's `P x P` blur patch (periodic borders) plus a constant
//! feature is routed to the normal equations of its class, one system per
//! channel. Filters are the ridge solutions of those systems.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::discretize::BlurSegmentationMap;
use crate::error::{ensure, Error, Result};
use crate::image::Image;

pub const DEFAULT_PATCH: usize = 7;
pub const DEFAULT_RIDGE: f64 = 1e-3;

/// Normal equations of one class and channel.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalEquations {
    dim: usize,
    /// Row-major `dim x dim` Gram matrix `G^T G`.
    pub gram: Vec<f64>,
    /// `G^T e`.
    pub rhs: Vec<f64>,
    /// `e^T e`.
    pub target_energy: f64,
    pub count: usize,
}

impl NormalEquations {
    fn new(dim: usize) -> Self {
        NormalEquations { dim, gram: vec![0.0; dim * dim], rhs: vec![0.0; dim], target_energy: 0.0, count: 0 }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    fn add_sample(&mut self, features: &[f64], target: f64) {
        let d = self.dim;
        for i in 0..d {
            let fi = features[i];
            if fi == 0.0 {
                continue;
            }
            let row = &mut self.gram[i * d..(i + 1) * d];
            for j in i..d {
                row[j] += fi * features[j];
            }
            self.rhs[i] += fi * target;
        }
        self.target_energy += target * target;
        self.count += 1;
    }

    fn merge(&mut self, other: &NormalEquations) {
        self.gram.iter_mut().zip(&other.gram).for_each(|(a, b)| *a += b);
        self.rhs.iter_mut().zip(&other.rhs).for_each(|(a, b)| *a += b);
        self.target_energy += other.target_energy;
        self.count += other.count;
    }

    /// Copies the accumulated upper triangle into the lower one.
    fn symmetrize(&mut self) {
        let d = self.dim;
        for i in 0..d {
            for j in 0..i {
                self.gram[i * d + j] = self.gram[j * d + i];
            }
        }
    }

    /// Sum of squared residuals `|G w - e|^2` for the filter `w`.
    pub fn residual_energy(&self, w: &[f64]) -> f64 {
        let d = self.dim;
        let mut quad = 0.0;
        for i in 0..d {
            quad += w[i] * (0..d).map(|j| self.gram[i * d + j] * w[j]).sum::<f64>();
        }
        let lin: f64 = w.iter().zip(&self.rhs).map(|(a, b)| a * b).sum();
        quad - 2.0 * lin + self.target_energy
    }

    /// `max |(G^T G + ridge I) w - G^T e|`.
    pub fn normal_residual(&self, w: &[f64], ridge: f64) -> f64 {
        let d = self.dim;
        (0..d).map(|i| ((0..d).map(|j| self.gram[i * d + j] * w[j]).sum::<f64>() + ridge * w[i] - self.rhs[i]).abs()).fold(0.0, f64::max)
    }
}

/// Per-class, per-channel normal equations.
#[derive(Debug, Clone, PartialEq)]
pub struct DesignAccumulators {
    patch: usize,
    channels: usize,
    /// `[class][channel]`.
    classes: Vec<Vec<NormalEquations>>,
}

impl DesignAccumulators {
    pub fn new(classes: usize, channels: usize, patch: usize) -> Result<Self> {
        ensure!(classes >= 1, Parameter, "need at least one class");
        ensure!(patch % 2 == 1, Parameter, "patch side must be odd, got {patch}");
        ensure!(channels >= 1, Parameter, "need at least one channel");
        let dim = patch * patch + 1;
        Ok(DesignAccumulators { patch, channels, classes: vec![vec![NormalEquations::new(dim); channels]; classes] })
    }

    pub fn patch(&self) -> usize {
        self.patch
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn class_count(&self) -> usize {
        self.classes.len()
    }

    pub fn equations(&self, class: usize, channel: usize) -> &NormalEquations {
        &self.classes[class][channel]
    }

    /// Pixels routed to each class.
    pub fn pixel_counts(&self) -> Vec<usize> {
        self.classes.iter().map(|c| c[0].count).collect()
    }

    /// Adds every pixel of one aligned `(y, x, rho)` triple.
    pub fn add_image(&mut self, y: &Image, x: &Image, rho: &BlurSegmentationMap) -> Result<()> {
        y.ensure_same_shape(x, "blur and sharp image")?;
        ensure!(rho.dims() == y.dims(), Dimension, "map {:?} vs image {:?}", rho.dims(), y.dims());
        ensure!(y.channels() == self.channels, Dimension, "image has {} channels, accumulators {}", y.channels(), self.channels);
        ensure!(
            rho.indices().iter().all(|&i| (i as usize) < self.classes.len()),
            Dimension,
            "map uses classes beyond {}",
            self.classes.len()
        );
        let (h, w) = y.dims();
        let mut features = vec![0.0; self.patch * self.patch + 1];
        for c in 0..self.channels {
            for yy in 0..h {
                for xx in 0..w {
                    patch_features(y, c, yy, xx, self.patch, &mut features);
                    let i = yy * w + xx;
                    let target = x.data()[i * self.channels + c] as f64 - y.data()[i * self.channels + c] as f64;
                    self.classes[rho.class_at(i)][c].add_sample(&features, target);
                }
            }
        }
        Ok(())
    }

    pub fn merge(&mut self, other: &DesignAccumulators) -> Result<()> {
        ensure!(
            self.patch == other.patch && self.channels == other.channels && self.classes.len() == other.classes.len(),
            Dimension,
            "accumulator layouts differ"
        );
        for (a, b) in self.classes.iter_mut().flatten().zip(other.classes.iter().flatten()) {
            a.merge(b);
        }
        Ok(())
    }

    fn finish(mut self) -> Self {
        self.classes.iter_mut().flatten().for_each(NormalEquations::symmetrize);
        self
    }
}

/// Fills `out` with the periodic `P x P` patch of channel `c` centered on
/// `(y, x)`, row-major, followed by the constant 1.
fn patch_features(img: &Image, c: usize, y: usize, x: usize, patch: usize, out: &mut [f64]) {
    let (h, w) = img.dims();
    let r = (patch / 2) as isize;
    let ch = img.channels();
    let mut k = 0;
    for dy in -r..=r {
        let yy = (y as isize + dy).rem_euclid(h as isize) as usize;
        for dx in -r..=r {
            let xx = (x as isize + dx).rem_euclid(w as isize) as usize;
            out[k] = img.data()[(yy * w + xx) * ch + c] as f64;
            k += 1;
        }
    }
    out[k] = 1.0;
}

/// Builds the normal equations for aligned `(blur, sharp, map)` triples.
///
/// Images are processed in parallel and merged in input order.
pub fn collect_design(samples: &[(&Image, &Image, &BlurSegmentationMap)], classes: usize, patch: usize) -> Result<DesignAccumulators> {
    ensure!(!samples.is_empty(), Parameter, "no training samples");
    let channels = samples[0].0.channels();
    let parts = samples
        .par_iter()
        .map(|(y, x, rho)| {
            let mut acc = DesignAccumulators::new(classes, channels, patch)?;
            acc.add_image(y, x, rho)?;
            Ok(acc)
        })
        .collect::<Result<Vec<_>>>()?;
    let mut total = DesignAccumulators::new(classes, channels, patch)?;
    for p in &parts {
        total.merge(p)?;
    }
    Ok(total.finish())
}

/// One class and channel: `P x P` row-major taps and a bias.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassFilter {
    pub taps: Vec<f64>,
    pub bias: f64,
}

impl ClassFilter {
    fn zero(patch: usize) -> Self {
        ClassFilter { taps: vec![0.0; patch * patch], bias: 0.0 }
    }

    fn weights(&self) -> Vec<f64> {
        let mut w = self.taps.clone();
        w.push(self.bias);
        w
    }
}

/// Residual regressors indexed `[class][channel]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterBank {
    pub patch: usize,
    pub ridge: f64,
    pub classes: Vec<Vec<ClassFilter>>,
}

impl FilterBank {
    pub fn zeros(classes: usize, channels: usize, patch: usize) -> Result<Self> {
        ensure!(classes >= 1 && channels >= 1, Parameter, "bank needs at least one class and channel");
        ensure!(patch % 2 == 1, Parameter, "patch side must be odd, got {patch}");
        Ok(FilterBank { patch, ridge: 0.0, classes: vec![vec![ClassFilter::zero(patch); channels]; classes] })
    }

    pub fn class_count(&self) -> usize {
        self.classes.len()
    }

    pub fn channels(&self) -> usize {
        self.classes.first().map_or(0, Vec::len)
    }

    pub fn filter(&self, class: usize, channel: usize) -> &ClassFilter {
        &self.classes[class][channel]
    }

    /// Entry `perm[i]` becomes class `i`.
    pub fn permuted(&self, perm: &[usize]) -> Result<Self> {
        ensure!(perm.len() == self.classes.len(), Parameter, "permutation length mismatch");
        Ok(FilterBank { patch: self.patch, ridge: self.ridge, classes: perm.iter().map(|&p| self.classes[p].clone()).collect() })
    }

    fn validate(&self) -> Result<()> {
        let channels = self.channels();
        ensure!(!self.classes.is_empty() && channels >= 1, Format, "filter bank is empty");
        ensure!(self.patch % 2 == 1, Format, "patch side must be odd");
        for (r, class) in self.classes.iter().enumerate() {
            ensure!(class.len() == channels, Format, "class {} has {} channels, expected {channels}", r + 1, class.len());
            for f in class {
                ensure!(f.taps.len() == self.patch * self.patch, Format, "class {} filter has {} taps", r + 1, f.taps.len());
                ensure!(f.taps.iter().all(|t| t.is_finite()) && f.bias.is_finite(), Format, "class {} filter is not finite", r + 1);
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let bank: FilterBank = serde_json::from_str(text)?;
        bank.validate()?;
        Ok(bank)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?)
    }
}

/// Solves `(G^T G + ridge I) w = G^T e` for every class and channel.
/// Classes without samples get the zero filter.
pub fn fit_class_filters(acc: &DesignAccumulators, ridge: f64) -> Result<FilterBank> {
    ensure!(ridge >= 0.0 && ridge.is_finite(), Parameter, "ridge must be >= 0, got {ridge}");
    let mut bank = FilterBank::zeros(acc.class_count(), acc.channels(), acc.patch())?;
    bank.ridge = ridge;
    for (r, class) in acc.classes.iter().enumerate() {
        for (c, eq) in class.iter().enumerate() {
            if eq.count == 0 {
                continue;
            }
            let w = solve(eq, ridge).map_err(|e| match e {
                Error::Numerical(m) => Error::Numerical(format!("class {} channel {c}: {m}", r + 1)),
                other => other,
            })?;
            let (taps, bias) = w.split_at(w.len() - 1);
            bank.classes[r][c] = ClassFilter { taps: taps.to_vec(), bias: bias[0] };
        }
    }
    Ok(bank)
}

fn solve(eq: &NormalEquations, ridge: f64) -> Result<Vec<f64>> {
    let d = eq.dim;
    let a = DMatrix::from_row_slice(d, d, &eq.gram) + DMatrix::identity(d, d) * ridge;
    let b = DVector::from_column_slice(&eq.rhs);
    let chol = a.clone().cholesky().ok_or_else(|| Error::Numerical("normal equations are singular; use a positive ridge".into()))?;
    let mut w = chol.solve(&b);
    // One refinement pass keeps the normal-equation residual near round-off.
    let r = &b - &a * &w;
    w += chol.solve(&r);
    ensure!(w.iter().all(|v| v.is_finite()), Numerical, "normal equations are singular; use a positive ridge");
    Ok(w.as_slice().to_vec())
}

/// Residual estimate: each pixel's class filter applied to its blur patch.
pub fn predict_residual(y: &Image, rho: &BlurSegmentationMap, bank: &FilterBank) -> Result<Image> {
    ensure!(rho.dims() == y.dims(), Dimension, "map {:?} vs image {:?}", rho.dims(), y.dims());
    ensure!(y.channels() == bank.channels(), Dimension, "image has {} channels, bank {}", y.channels(), bank.channels());
    if let Some(&bad) = rho.indices().iter().find(|&&i| i as usize >= bank.class_count()) {
        return Err(Error::Parameter(format!("bank has no filter for class {}", bad as usize + 1)));
    }
    let (h, w) = y.dims();
    let ch = y.channels();
    let weights: Vec<Vec<Vec<f64>>> = bank.classes.iter().map(|cl| cl.iter().map(ClassFilter::weights).collect()).collect();
    let dim = bank.patch * bank.patch + 1;
    let rows: Vec<Vec<f32>> = (0..h)
        .into_par_iter()
        .map(|yy| {
            let mut features = vec![0.0; dim];
            let mut row = vec![0f32; w * ch];
            for xx in 0..w {
                let class = &weights[rho.class_at(yy * w + xx)];
                for c in 0..ch {
                    patch_features(y, c, yy, xx, bank.patch, &mut features);
                    let v: f64 = features.iter().zip(&class[c]).map(|(f, k)| f * k).sum();
                    row[xx * ch + c] = v as f32;
                }
            }
            row
        })
        .collect();
    Image::new(h, w, ch, rows.concat())
}

/// `clamp(y + e, 0, 1)`.
pub fn reconstruct(y: &Image, e: &Image) -> Result<Image> {
    y.ensure_same_shape(e, "blur image and residual")?;
    let data = y.data().iter().zip(e.data()).map(|(a, b)| (*a as f64 + *b as f64).clamp(0.0, 1.0) as f32).collect();
    Image::new(y.height(), y.width(), y.channels(), data)
}
