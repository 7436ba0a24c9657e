//! Evaluation records, the large-motion subset and map visualization.

use std::cmp::Ordering;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::discretize::BlurSegmentationMap;
use crate::error::{ensure, Error, Result};
use crate::image::Image;
use crate::metrics::{psnr, ssim};

pub const TAG_TOTAL: &str = "total";
pub const TAG_LARGE: &str = "large";

/// Share of pairs tagged large by default: 104 of 980.
pub const DEFAULT_LARGE_FRACTION: f64 = 104.0 / 980.0;

/// Settings that produced a set of records.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Fingerprint {
    pub classes: usize,
    pub lambda: f64,
    pub eps_rel: f64,
    pub patch: usize,
    pub ridge: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub pair_id: String,
    pub psnr: f64,
    pub ssim: f64,
    pub tags: Vec<String>,
    pub config: Fingerprint,
}

impl EvalRecord {
    pub fn has_tag(&self, tag: &str) -> bool {
        self.tags.iter().any(|t| t == tag)
    }
}

/// One restored image and its reference.
pub struct EvalInput<'a> {
    pub pair_id: &'a str,
    pub restored: &'a Image,
    pub sharp: &'a Image,
    pub large: bool,
}

/// Scores every input, in parallel, and returns records sorted by pair id.
pub fn evaluate(inputs: &[EvalInput<'_>], config: &Fingerprint) -> Result<Vec<EvalRecord>> {
    let mut records = inputs
        .par_iter()
        .map(|inp| {
            let mut tags = vec![TAG_TOTAL.to_string()];
            if inp.large {
                tags.push(TAG_LARGE.to_string());
            }
            Ok(EvalRecord {
                pair_id: inp.pair_id.to_string(),
                psnr: psnr(inp.restored, inp.sharp)?,
                ssim: ssim(inp.restored, inp.sharp)?,
                tags,
                config: config.clone(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    records.sort_by(|a, b| a.pair_id.cmp(&b.pair_id));
    Ok(records)
}

/// Mean PSNR and SSIM over the records carrying `tag`, if any do.
pub fn summarize(records: &[EvalRecord], tag: &str) -> Option<(f64, f64)> {
    let sel: Vec<_> = records.iter().filter(|r| r.has_tag(tag)).collect();
    if sel.is_empty() {
        return None;
    }
    let n = sel.len() as f64;
    Some((sel.iter().map(|r| r.psnr).sum::<f64>() / n, sel.iter().map(|r| r.ssim).sum::<f64>() / n))
}

/// Motion-magnitude proxy: mean absolute luma difference between blur and sharp.
pub fn motion_score(blur: &Image, sharp: &Image) -> Result<f64> {
    blur.ensure_same_shape(sharp, "blur and sharp image")?;
    let (a, b) = (blur.luma_plane(), sharp.luma_plane());
    Ok(a.data.iter().zip(&b.data).map(|(p, q)| (p - q).abs()).sum::<f64>() / a.data.len() as f64)
}

/// Tags the `round(fraction * n)` pairs with the highest motion score as
/// large. Ties are broken by pair id. Returns one flag per input, in order.
pub fn large_motion_subset(pairs: &[(&str, &Image, &Image)], fraction: f64) -> Result<Vec<bool>> {
    ensure!(!pairs.is_empty(), Parameter, "no pairs to rank");
    ensure!((0.0..=1.0).contains(&fraction), Parameter, "fraction must lie in [0, 1], got {fraction}");
    let scores = pairs.par_iter().map(|(_, y, x)| motion_score(y, x)).collect::<Result<Vec<_>>>()?;
    let mut order: Vec<usize> = (0..pairs.len()).collect();
    order.sort_by(|&i, &j| scores[j].partial_cmp(&scores[i]).unwrap_or(Ordering::Equal).then_with(|| pairs[i].0.cmp(pairs[j].0)));
    let count = (fraction * pairs.len() as f64).round() as usize;
    let mut tags = vec![false; pairs.len()];
    for &i in &order[..count] {
        tags[i] = true;
    }
    Ok(tags)
}

/// Fixed class colors; class `r` (0-based) uses entry `r`.
pub const PALETTE: [[u8; 3]; 32] = [
    [31, 119, 180],
    [255, 127, 14],
    [44, 160, 44],
    [214, 39, 40],
    [148, 103, 189],
    [140, 86, 75],
    [227, 119, 194],
    [127, 127, 127],
    [188, 189, 34],
    [23, 190, 207],
    [174, 199, 232],
    [255, 187, 120],
    [152, 223, 138],
    [255, 152, 150],
    [197, 176, 213],
    [196, 156, 148],
    [247, 182, 210],
    [199, 199, 199],
    [219, 219, 141],
    [158, 218, 229],
    [0, 0, 0],
    [255, 255, 255],
    [0, 0, 128],
    [128, 0, 0],
    [0, 128, 0],
    [128, 128, 0],
    [0, 128, 128],
    [128, 0, 128],
    [255, 0, 255],
    [0, 255, 255],
    [255, 255, 0],
    [64, 64, 64],
];

/// Renders a map as an RGB image using [`PALETTE`].
pub fn colorize_segmentation(rho: &BlurSegmentationMap) -> Result<Image> {
    ensure!(rho.classes() <= PALETTE.len(), Parameter, "{} classes exceed the {}-color palette", rho.classes(), PALETTE.len());
    let data = rho.indices().iter().flat_map(|&i| PALETTE[i as usize].map(|c| c as f32 / 255.0)).collect();
    Image::new(rho.height(), rho.width(), 3, data)
}

/// Inverse of [`colorize_segmentation`].
pub fn decolorize_segmentation(img: &Image, classes: usize) -> Result<BlurSegmentationMap> {
    ensure!(img.channels() == 3, Dimension, "expected an RGB image, got {} channels", img.channels());
    ensure!(classes >= 1 && classes <= PALETTE.len(), Parameter, "class count {classes} out of 1..={}", PALETTE.len());
    let indices = (0..img.pixel_count())
        .map(|i| {
            let rgb = img.pixel(i).iter().map(|v| (v * 255.0).round() as i64).collect::<Vec<_>>();
            PALETTE[..classes]
                .iter()
                .position(|p| p.iter().zip(&rgb).all(|(a, b)| *a as i64 == *b))
                .map(|r| r as u16)
                .ok_or_else(|| Error::Format(format!("pixel {i} is not a palette color")))
        })
        .collect::<Result<Vec<_>>>()?;
    BlurSegmentationMap::new(img.height(), img.width(), classes, indices)
}
