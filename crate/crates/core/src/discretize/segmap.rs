use std::path::Path;

use crate::error::{ensure, Error, Result};
use crate::io::{load_gray8, save_gray8};

const SOFT_SUM_TOLERANCE: f32 = 1e-5;

/// Per-pixel blur class.
///
/// Classes are 0-based in memory (`0..classes`); reports, file names and gray
/// levels use 1-based class numbers. When `soft` is present it holds
/// `classes` probabilities per pixel and `indices` is its argmax.
#[derive(Debug, Clone, PartialEq)]
pub struct BlurSegmentationMap {
    height: usize,
    width: usize,
    classes: usize,
    indices: Vec<u16>,
    soft: Option<Vec<f32>>,
}

impl BlurSegmentationMap {
    pub fn new(height: usize, width: usize, classes: usize, indices: Vec<u16>) -> Result<Self> {
        ensure!(classes >= 1 && classes <= u16::MAX as usize, Parameter, "class count {classes} out of range");
        ensure!(indices.len() == height * width, Dimension, "map of {height}x{width} needs {} indices", height * width);
        ensure!(indices.iter().all(|&i| (i as usize) < classes), Invariant, "class index out of range 0..{classes}");
        Ok(BlurSegmentationMap { height, width, classes, indices, soft: None })
    }

    pub fn constant(height: usize, width: usize, classes: usize, class: u16) -> Result<Self> {
        Self::new(height, width, classes, vec![class; height * width])
    }

    /// Validates per-pixel probabilities and derives the argmax indices.
    pub fn from_soft(height: usize, width: usize, classes: usize, soft: Vec<f32>) -> Result<Self> {
        ensure!(classes >= 1, Parameter, "need at least one class");
        ensure!(soft.len() == height * width * classes, Dimension, "soft map needs {} probabilities", height * width * classes);
        for (i, p) in soft.chunks_exact(classes).enumerate() {
            ensure!(p.iter().all(|v| v.is_finite() && *v >= 0.0), Invariant, "pixel {i} has a negative probability");
            let s: f32 = p.iter().sum();
            ensure!((s - 1.0).abs() <= SOFT_SUM_TOLERANCE, Invariant, "pixel {i} probabilities sum to {s}");
        }
        let indices = soft.chunks_exact(classes).map(argmax).collect();
        Ok(BlurSegmentationMap { height, width, classes, indices, soft: Some(soft) })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn indices(&self) -> &[u16] {
        &self.indices
    }

    #[inline]
    pub fn class_at(&self, i: usize) -> usize {
        self.indices[i] as usize
    }

    pub fn soft(&self) -> Option<&[f32]> {
        self.soft.as_deref()
    }

    /// Pixel count per class.
    pub fn histogram(&self) -> Vec<usize> {
        let mut h = vec![0; self.classes];
        for &i in &self.indices {
            h[i as usize] += 1;
        }
        h
    }

    /// Relabels class `r` as `perm[r]`.
    pub fn relabeled(&self, perm: &[usize]) -> Result<Self> {
        ensure!(perm.len() == self.classes, Parameter, "permutation length mismatch");
        let indices = self.indices.iter().map(|&i| perm[i as usize] as u16).collect();
        Self::new(self.height, self.width, self.classes, indices)
    }

    /// Single-channel PNG with class `r` (1-based) stored as gray `r * floor(255 / R)`.
    pub fn save_png(&self, path: &Path) -> Result<()> {
        let step = gray_step(self.classes)?;
        let levels: Vec<u8> = self.indices.iter().map(|&i| ((i as usize + 1) * step) as u8).collect();
        save_gray8(&levels, self.height, self.width, path)
    }

    pub fn load_png(path: &Path, classes: usize) -> Result<Self> {
        let step = gray_step(classes)?;
        let (levels, h, w) = load_gray8(path)?;
        let indices = levels
            .iter()
            .map(|&g| {
                let g = g as usize;
                if !g.is_multiple_of(step) || g / step == 0 || g / step > classes {
                    Err(Error::Format(format!("gray level {g} is not a class level for R = {classes}")))
                } else {
                    Ok((g / step - 1) as u16)
                }
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(h, w, classes, indices)
    }
}

fn gray_step(classes: usize) -> Result<usize> {
    ensure!((1..=255).contains(&classes), Parameter, "gray-level maps support 1..=255 classes, got {classes}");
    Ok(255 / classes)
}

/// Index of the largest value; the lowest index wins ties.
pub(crate) fn argmax(p: &[f32]) -> u16 {
    let mut best = 0;
    for (i, v) in p.iter().enumerate().skip(1) {
        if *v > p[best] {
            best = i;
        }
    }
    best as u16
}

/// Hardens a map: indices become the per-pixel argmax (lowest index on ties)
/// and the soft field is replaced by the one-hot form.
pub fn soft_to_onehot(map: &BlurSegmentationMap) -> BlurSegmentationMap {
    let r = map.classes;
    let indices: Vec<u16> = match &map.soft {
        Some(soft) => soft.chunks_exact(r).map(argmax).collect(),
        None => map.indices.clone(),
    };
    let mut onehot = vec![0f32; indices.len() * r];
    for (i, &c) in indices.iter().enumerate() {
        onehot[i * r + c as usize] = 1.0;
    }
    BlurSegmentationMap { height: map.height, width: map.width, classes: r, indices, soft: Some(onehot) }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn worked_example_hardens_to_first_class() {
        let m = BlurSegmentationMap::from_soft(1, 1, 4, vec![0.5, 0.2, 0.2, 0.1]).unwrap();
        let h = soft_to_onehot(&m);
        assert_eq!(h.class_at(0) + 1, 1);
        assert_eq!(h.soft().unwrap(), &[1.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn ties_go_to_lowest_index() {
        let m = BlurSegmentationMap::from_soft(1, 1, 4, vec![0.25; 4]).unwrap();
        assert_eq!(soft_to_onehot(&m).class_at(0), 0);
        let m = BlurSegmentationMap::from_soft(1, 1, 3, vec![0.2, 0.4, 0.4]).unwrap();
        assert_eq!(m.class_at(0), 1);
    }

    #[test]
    fn one_hot_input_is_unchanged() {
        let m = BlurSegmentationMap::from_soft(1, 2, 3, vec![0.0, 1.0, 0.0, 0.0, 0.0, 1.0]).unwrap();
        assert_eq!(soft_to_onehot(&m), m);
    }

    #[test]
    fn invalid_soft_maps_are_rejected() {
        assert!(BlurSegmentationMap::from_soft(1, 1, 2, vec![0.7, 0.7]).is_err());
        assert!(BlurSegmentationMap::from_soft(1, 1, 2, vec![1.5, -0.5]).is_err());
        assert!(BlurSegmentationMap::from_soft(1, 2, 2, vec![0.5, 0.5]).is_err());
    }

    #[test]
    fn out_of_range_index_is_rejected() {
        assert!(matches!(BlurSegmentationMap::new(1, 2, 2, vec![0, 2]), Err(Error::Invariant(_))));
    }

    #[test]
    fn png_round_trip_and_gray_levels() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("rho.png");
        let m = BlurSegmentationMap::new(2, 3, 8, vec![0, 1, 2, 5, 6, 7]).unwrap();
        m.save_png(&p).unwrap();
        let (levels, _, _) = load_gray8(&p).unwrap();
        assert_eq!(levels, vec![31, 62, 93, 186, 217, 248]);
        assert_eq!(BlurSegmentationMap::load_png(&p, 8).unwrap(), m);
        assert!(BlurSegmentationMap::load_png(&p, 5).is_err());
    }
}
