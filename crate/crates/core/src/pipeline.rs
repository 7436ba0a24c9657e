//! End-to-end runs: fit kernels, discretize with oracle maps, fit and apply
//! the residual regressor, and score the restorations.

use std::fmt::Write as _;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::d2c::{collect_design, fit_class_filters, predict_residual, reconstruct, FilterBank, DEFAULT_PATCH, DEFAULT_RIDGE};
use crate::discretize::{
    assemble, deconvolve_class_images, fit_basis_kernels_on, oracle_assign, BlurSegmentationMap, FitConfig, FitReport, LogKernelSet,
};
use crate::error::{ensure, Error, Result};
use crate::eval::{
    evaluate, large_motion_subset, summarize, EvalInput, EvalRecord, Fingerprint, DEFAULT_LARGE_FRACTION, TAG_LARGE, TAG_TOTAL,
};
use crate::image::Image;
use crate::kernel::BasisKernelSet;
use crate::metrics::psnr;

/// A blur/sharp pair with its identifier.
#[derive(Debug, Clone)]
pub struct Pair {
    pub id: String,
    pub blur: Image,
    pub sharp: Image,
}

/// Deconvolved classes, oracle map and assembled image of one pair.
#[derive(Debug, Clone)]
pub struct Discretized {
    pub map: BlurSegmentationMap,
    pub assembled: Image,
}

/// Deconvolves `blur` with every kernel and assigns classes against `sharp`.
pub fn discretize_pair(blur: &Image, sharp: &Image, kernels: &BasisKernelSet, eps_rel: f64) -> Result<Discretized> {
    let lk = LogKernelSet::from_kernels(kernels, blur.dims(), eps_rel)?;
    let nu = deconvolve_class_images(blur, &lk)?;
    let map = oracle_assign(&nu, sharp)?;
    let assembled = assemble(&nu, &map)?;
    Ok(Discretized { map, assembled })
}

fn discretize_all(pairs: &[Pair], kernels: &BasisKernelSet, eps_rel: f64) -> Result<Vec<Discretized>> {
    pairs.par_iter().map(|p| discretize_pair(&p.blur, &p.sharp, kernels, eps_rel)).collect()
}

/// Fits a filter bank on pairs and their maps.
pub fn fit_bank(pairs: &[Pair], maps: &[&BlurSegmentationMap], classes: usize, patch: usize, ridge: f64) -> Result<FilterBank> {
    ensure!(pairs.len() == maps.len(), Dimension, "{} pairs but {} maps", pairs.len(), maps.len());
    let samples: Vec<_> = pairs.iter().zip(maps).map(|(p, m)| (&p.blur, &p.sharp, *m)).collect();
    fit_class_filters(&collect_design(&samples, classes, patch)?, ridge)
}

/// Restores every blur image with the bank.
pub fn restore_all(pairs: &[Pair], maps: &[&BlurSegmentationMap], bank: &FilterBank) -> Result<Vec<Image>> {
    pairs.par_iter().zip(maps).map(|(p, m)| reconstruct(&p.blur, &predict_residual(&p.blur, m, bank)?)).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepConfig {
    pub classes: Vec<usize>,
    pub lambdas: Vec<f64>,
    /// Fit the largest class count once per lambda and use its prefixes.
    pub nested: bool,
    /// Template for every kernel fit; `classes` and `lambda` are overridden.
    pub fit: FitConfig,
    pub patch: usize,
    pub ridge: f64,
    pub large_fraction: f64,
}

impl Default for SweepConfig {
    fn default() -> Self {
        SweepConfig {
            classes: vec![1, 2, 4, 8],
            lambdas: vec![1.0],
            nested: true,
            fit: FitConfig::default(),
            patch: DEFAULT_PATCH,
            ridge: DEFAULT_RIDGE,
            large_fraction: DEFAULT_LARGE_FRACTION,
        }
    }
}

/// Aggregate scores of one configuration on the test split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub config: Fingerprint,
    pub pairs: usize,
    pub psnr_total: f64,
    pub ssim_total: f64,
    pub psnr_large: Option<f64>,
    pub ssim_large: Option<f64>,
    /// Mean PSNR of the oracle-assembled deconvolution.
    pub assembled_psnr: f64,
    /// Mean PSNR of a single regressor that ignores the map.
    pub no_prior_psnr: f64,
    /// Mean PSNR of the untouched blur images.
    pub blur_psnr: f64,
    pub final_fit_loss: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepTable {
    pub rows: Vec<SweepRow>,
    pub records: Vec<EvalRecord>,
}

impl SweepTable {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn rows_csv(&self) -> String {
        let opt = |v: Option<f64>| v.map_or(String::new(), |v| v.to_string());
        let mut s = String::from("classes,lambda,eps_rel,patch,ridge,seed,pairs,psnr_total,ssim_total,psnr_large,ssim_large,assembled_psnr,no_prior_psnr,blur_psnr,final_fit_loss\n");
        for r in &self.rows {
            let c = &r.config;
            let _ = writeln!(
                s,
                "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
                c.classes,
                c.lambda,
                c.eps_rel,
                c.patch,
                c.ridge,
                c.seed,
                r.pairs,
                r.psnr_total,
                r.ssim_total,
                opt(r.psnr_large),
                opt(r.ssim_large),
                r.assembled_psnr,
                r.no_prior_psnr,
                r.blur_psnr,
                r.final_fit_loss
            );
        }
        s
    }

    pub fn records_csv(&self) -> String {
        let mut s = String::from("pair_id,classes,lambda,psnr,ssim,tags\n");
        for r in &self.records {
            let _ = writeln!(s, "{},{},{},{},{},{}", r.pair_id, r.config.classes, r.config.lambda, r.psnr, r.ssim, r.tags.join(" "));
        }
        s
    }
}

/// Fitted basis of one configuration.
#[derive(Debug, Clone)]
pub struct SweepKernels {
    pub classes: usize,
    pub lambda: f64,
    pub kernels: BasisKernelSet,
}

#[derive(Debug, Clone)]
pub struct SweepOutput {
    pub table: SweepTable,
    pub kernels: Vec<SweepKernels>,
    pub fit_reports: Vec<FitReport>,
}

impl SweepOutput {
    /// Writes `table.json`, `table.csv`, `records.csv`, fit reports and
    /// `kernels/R{classes}_lambda{lambda}/k{r}.txt` under `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let put = |name: &str, text: String| std::fs::write(dir.join(name), text).map_err(|e| Error::io(dir.join(name), e));
        put("table.json", self.table.to_json()?)?;
        put("table.csv", self.table.rows_csv())?;
        put("records.csv", self.table.records_csv())?;
        for (i, r) in self.fit_reports.iter().enumerate() {
            put(&format!("fit_report_{i}.json"), r.to_json()?)?;
        }
        for k in &self.kernels {
            k.kernels.save_dir(&dir.join("kernels").join(format!("R{}_lambda{}", k.classes, k.lambda)))?;
        }
        Ok(())
    }
}

/// Runs the full pipeline for every class count and lambda.
///
/// Kernels are fitted on `train`; maps are oracle assignments on both
/// splits; regressors are fitted on `train` and scored on `test`. `init`
/// seeds every fit; it is truncated to the fitted class count.
pub fn ablation_sweep(train: &[Pair], test: &[Pair], cfg: &SweepConfig, init: Option<&BasisKernelSet>) -> Result<SweepOutput> {
    ensure!(!train.is_empty() && !test.is_empty(), Parameter, "both splits need at least one pair");
    ensure!(!cfg.classes.is_empty() && !cfg.lambdas.is_empty(), Parameter, "class and lambda lists must be non-empty");
    ensure!(cfg.classes.iter().all(|&r| r >= 1), Parameter, "class counts must be >= 1");
    let max_classes = *cfg.classes.iter().max().expect("non-empty");
    if let Some(k) = init {
        ensure!(k.len() >= max_classes, Parameter, "initial basis has {} kernels, sweep needs {max_classes}", k.len());
    }

    let fit_pairs: Vec<(Image, Image)> = train.iter().map(|p| (p.blur.clone(), p.sharp.clone())).collect();
    let test_refs: Vec<_> = test.iter().map(|p| (p.id.as_str(), &p.blur, &p.sharp)).collect();
    let large = large_motion_subset(&test_refs, cfg.large_fraction)?;
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let blur_psnr = mean(&test.iter().map(|p| psnr(&p.blur, &p.sharp)).collect::<Result<Vec<_>>>()?);

    let no_prior_psnr = {
        let constant = |p: &Pair| BlurSegmentationMap::constant(p.blur.height(), p.blur.width(), 1, 0);
        let train_maps = train.iter().map(constant).collect::<Result<Vec<_>>>()?;
        let test_maps = test.iter().map(constant).collect::<Result<Vec<_>>>()?;
        let bank = fit_bank(train, &train_maps.iter().collect::<Vec<_>>(), 1, cfg.patch, cfg.ridge)?;
        let restored = restore_all(test, &test_maps.iter().collect::<Vec<_>>(), &bank)?;
        mean(&restored.iter().zip(test).map(|(r, p)| psnr(r, &p.sharp)).collect::<Result<Vec<_>>>()?)
    };

    let mut out = SweepOutput { table: SweepTable { rows: Vec::new(), records: Vec::new() }, kernels: Vec::new(), fit_reports: Vec::new() };
    for &lambda in &cfg.lambdas {
        let mut shared: Option<(BasisKernelSet, f64)> = None;
        for &classes in &cfg.classes {
            let (kernels, loss) = match &shared {
                Some((k, loss)) => (k.prefix(classes)?, *loss),
                None => {
                    let fit_classes = if cfg.nested { max_classes } else { classes };
                    let fc = FitConfig { classes: fit_classes, lambda, ..cfg.fit.clone() };
                    let start = init.map(|k| k.prefix(fit_classes)).transpose()?;
                    let fit = fit_basis_kernels_on(&fit_pairs, &fc, start.as_ref())?;
                    let loss = *fit.report.assignment_losses.last().expect("at least one assignment");
                    let k = fit.kernels.shadow().clone();
                    out.fit_reports.push(fit.report);
                    if cfg.nested {
                        shared = Some((k.clone(), loss));
                    }
                    (k.prefix(classes)?, loss)
                }
            };
            let config = Fingerprint { classes, lambda, eps_rel: cfg.fit.eps_rel, patch: cfg.patch, ridge: cfg.ridge, seed: cfg.fit.seed };
            let train_d = discretize_all(train, &kernels, cfg.fit.eps_rel)?;
            let test_d = discretize_all(test, &kernels, cfg.fit.eps_rel)?;
            let bank = fit_bank(train, &train_d.iter().map(|d| &d.map).collect::<Vec<_>>(), classes, cfg.patch, cfg.ridge)?;
            let restored = restore_all(test, &test_d.iter().map(|d| &d.map).collect::<Vec<_>>(), &bank)?;
            let inputs: Vec<_> = test
                .iter()
                .zip(&restored)
                .zip(&large)
                .map(|((p, r), &l)| EvalInput { pair_id: &p.id, restored: r, sharp: &p.sharp, large: l })
                .collect();
            let records = evaluate(&inputs, &config)?;
            let (psnr_total, ssim_total) = summarize(&records, TAG_TOTAL).expect("every record is tagged total");
            let large_summary = summarize(&records, TAG_LARGE);
            let assembled_psnr = mean(&test_d.iter().zip(test).map(|(d, p)| psnr(&d.assembled, &p.sharp)).collect::<Result<Vec<_>>>()?);
            out.table.rows.push(SweepRow {
                config,
                pairs: test.len(),
                psnr_total,
                ssim_total,
                psnr_large: large_summary.map(|s| s.0),
                ssim_large: large_summary.map(|s| s.1),
                assembled_psnr,
                no_prior_psnr,
                blur_psnr,
                final_fit_loss: loss,
            });
            out.table.records.extend(records);
            out.kernels.push(SweepKernels { classes, lambda, kernels });
        }
    }
    Ok(out)
}
