mod common;

use blurseg::d2c::{collect_design, fit_class_filters, predict_residual, reconstruct, ClassFilter, FilterBank};
use blurseg::discretize::{BlurSegmentationMap, FitConfig};
use blurseg::eval::{colorize_segmentation, decolorize_segmentation, large_motion_subset, motion_score};
use blurseg::image::residual_error;
use blurseg::metrics::ssim;
use blurseg::pipeline::{ablation_sweep, Pair, SweepConfig};
use blurseg::synth::{apply_uniform_blur, linear_motion_kernel, MotionSpec};
use blurseg::Image;
use common::*;

#[test]
fn longer_motion_ranks_larger() {
    let x = scene(48, 48, 3, 1);
    let blur = |len: f64| apply_uniform_blur(&x, &linear_motion_kernel(&MotionSpec::linear(len, 0.3), 9).unwrap(), 0.0, 0).unwrap();
    let (long, short) = (blur(9.0), blur(3.0));
    assert!(motion_score(&long, &x).unwrap() > motion_score(&short, &x).unwrap());
    let tags = large_motion_subset(&[("short", &short, &x), ("long", &long, &x)], 0.5).unwrap();
    assert_eq!(tags, vec![false, true]);
    assert_eq!(tags, large_motion_subset(&[("short", &short, &x), ("long", &long, &x)], 0.5).unwrap());
}

#[test]
fn inverted_image_has_imperfect_ssim_and_colors_round_trip() {
    let x = scene(16, 16, 1, 2);
    let inv = x.map(|v| 1.0 - v).unwrap();
    assert!(ssim(&x, &inv).unwrap() < 1.0);
    assert_eq!(ssim(&x, &inv).unwrap(), ssim(&inv, &x).unwrap());
    let rho = BlurSegmentationMap::new(4, 8, 32, (0..32).collect()).unwrap();
    assert_eq!(decolorize_segmentation(&colorize_segmentation(&rho).unwrap(), 32).unwrap().indices(), rho.indices());
}

#[test]
fn design_partitions_pixels_and_ignores_image_order() {
    let (pairs, _) = two_region_pairs(&[MotionSpec::linear(3.0, 0.0), MotionSpec::linear(5.0, 1.0)], 7, 2, 16, 4);
    let maps: Vec<_> =
        (0..2).map(|s| BlurSegmentationMap::new(16, 16, 3, (0..256).map(|i| ((i * 7 + s) % 3) as u16).collect()).unwrap()).collect();
    let forward = collect_design(&[(&pairs[0].0, &pairs[0].1, &maps[0]), (&pairs[1].0, &pairs[1].1, &maps[1])], 3, 5).unwrap();
    let backward = collect_design(&[(&pairs[1].0, &pairs[1].1, &maps[1]), (&pairs[0].0, &pairs[0].1, &maps[0])], 3, 5).unwrap();
    assert_eq!(forward, backward);
    assert_eq!(forward.pixel_counts().iter().sum::<usize>(), 512);
    let one = BlurSegmentationMap::constant(16, 16, 1, 0).unwrap();
    assert_eq!(collect_design(&[(&pairs[0].0, &pairs[0].1, &one)], 1, 5).unwrap().pixel_counts(), vec![256]);
    let short = BlurSegmentationMap::constant(8, 8, 1, 0).unwrap();
    assert_eq!(collect_design(&[(&pairs[0].0, &pairs[0].1, &short)], 1, 5).unwrap_err().kind(), "dimension");
}

#[test]
fn single_class_prediction_is_periodic_correlation_plus_bias() {
    let y = uniform_image(9, 11, 1, 3);
    let taps: Vec<f64> = (0..9).map(|i| (i as f64 - 4.0) / 10.0).collect();
    let mut bank = FilterBank::zeros(1, 1, 3).unwrap();
    bank.classes[0][0] = ClassFilter { taps: taps.clone(), bias: 0.05 };
    let e = predict_residual(&y, &BlurSegmentationMap::constant(9, 11, 1, 0).unwrap(), &bank).unwrap();
    for r in 0..9isize {
        for c in 0..11isize {
            let mut v = 0.05;
            for (i, t) in taps.iter().enumerate() {
                let (dy, dx) = (i as isize / 3 - 1, i as isize % 3 - 1);
                v += t * y.get((r + dy).rem_euclid(9) as usize, (c + dx).rem_euclid(11) as usize, 0) as f64;
            }
            assert!((e.get(r as usize, c as usize, 0) as f64 - v).abs() < 1e-6);
        }
    }
}

#[test]
fn reconstruction_rules() {
    let x = uniform_image(8, 8, 3, 5);
    let y = uniform_image(8, 8, 3, 6);
    assert_eq!(reconstruct(&y, &residual_error(&x, &y).unwrap()).unwrap(), x);
    let push = Image::filled(8, 8, 3, 1.2).unwrap();
    assert!(reconstruct(&y, &push).unwrap().data().iter().all(|&v| v == 1.0));
    let pairs = [(x.clone(), x.clone())];
    let rho = BlurSegmentationMap::constant(8, 8, 1, 0).unwrap();
    let bank = fit_class_filters(&collect_design(&[(&pairs[0].0, &pairs[0].1, &rho)], 1, 3).unwrap(), 1e-3).unwrap();
    assert_eq!(reconstruct(&x, &predict_residual(&x, &rho, &bank).unwrap()).unwrap(), x);
}

fn split(seed: u64) -> Vec<Pair> {
    let (pairs, _) =
        two_region_pairs(&[MotionSpec::linear(3.0, 0.0), MotionSpec::linear(5.0, 1.2), MotionSpec::linear(4.0, 2.4)], 7, 6, 32, seed);
    pairs.into_iter().enumerate().map(|(i, (blur, sharp))| Pair { id: format!("p{i}"), blur, sharp }).collect()
}

#[test]
fn single_class_sweep_matches_the_no_prior_baseline() {
    let cfg = SweepConfig {
        classes: vec![1],
        patch: 3,
        fit: FitConfig { kernel_size: 7, alternations: 2, gradient_steps: 3, ..FitConfig::default() },
        ..SweepConfig::default()
    };
    let out = ablation_sweep(&split(1), &split(2), &cfg, None).unwrap();
    let row = &out.table.rows[0];
    assert!((row.psnr_total - row.no_prior_psnr).abs() < 1e-9, "{} vs {}", row.psnr_total, row.no_prior_psnr);
}

#[test]
fn lambda_sweep_records_distinct_fingerprints() {
    let cfg = SweepConfig {
        classes: vec![1, 2],
        lambdas: vec![0.1, 1.0],
        patch: 3,
        fit: FitConfig { kernel_size: 7, alternations: 1, gradient_steps: 2, ..FitConfig::default() },
        ..SweepConfig::default()
    };
    let out = ablation_sweep(&split(3), &split(4), &cfg, None).unwrap();
    assert_eq!(out.table.rows.len(), 4);
    let fingerprints: Vec<_> = out.table.rows.iter().map(|r| (r.config.classes, r.config.lambda.to_bits())).collect();
    let mut unique = fingerprints.clone();
    unique.dedup();
    assert_eq!(unique.len(), 4);
    assert!(out.table.records.iter().all(|r| r.config.lambda == 0.1 || r.config.lambda == 1.0));
    let dir = tempfile::tempdir().unwrap();
    out.write(dir.path()).unwrap();
    assert!(dir.path().join("table.csv").exists() && dir.path().join("kernels/R2_lambda0.1/k2.txt").exists());
}
