mod common;

use blurseg::d2c::{collect_design, fit_class_filters, predict_residual, reconstruct, FilterBank};
use blurseg::discretize::BlurSegmentationMap;
use blurseg::metrics::mse;
use blurseg::synth::{apply_uniform_blur, linear_motion_kernel, MotionSpec};
use blurseg::Image;
use common::*;
use nalgebra::{DMatrix, DVector};
use rand::Rng;

fn blurred(seed: u64, channels: usize) -> (Image, Image) {
    let x = scene(20, 20, channels, seed);
    let k = linear_motion_kernel(&MotionSpec::linear(3.0 + seed as f64, 0.4 * seed as f64), 9).unwrap();
    (apply_uniform_blur(&x, &k, 0.0, 0).unwrap(), x)
}

fn random_map(h: usize, w: usize, classes: usize, seed: u64) -> BlurSegmentationMap {
    let mut r = rng(seed);
    BlurSegmentationMap::new(h, w, classes, (0..h * w).map(|_| r.random_range(0..classes as u16)).collect()).unwrap()
}

/// Least squares through QR of the stacked design `[A; sqrt(ridge) I]`.
fn dense_oracle(samples: &[(Image, Image, BlurSegmentationMap)], class: usize, channel: usize, patch: usize, ridge: f64) -> Vec<f64> {
    let r = (patch / 2) as isize;
    let d = patch * patch + 1;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut targets = Vec::new();
    for (y, x, rho) in samples {
        let (h, w) = y.dims();
        for py in 0..h {
            for px in 0..w {
                if rho.class_at(py * w + px) != class {
                    continue;
                }
                let mut row = Vec::with_capacity(d);
                for dy in -r..=r {
                    for dx in -r..=r {
                        let (yy, xx) =
                            ((py as isize + dy).rem_euclid(h as isize) as usize, (px as isize + dx).rem_euclid(w as isize) as usize);
                        row.push(y.get(yy, xx, channel) as f64);
                    }
                }
                row.push(1.0);
                rows.push(row);
                targets.push(x.get(py, px, channel) as f64 - y.get(py, px, channel) as f64);
            }
        }
    }
    let n = rows.len();
    let a = DMatrix::from_fn(n + d, d, |i, j| {
        if i < n {
            rows[i][j]
        } else if i - n == j {
            ridge.sqrt()
        } else {
            0.0
        }
    });
    let b = DVector::from_fn(n + d, |i, _| if i < n { targets[i] } else { 0.0 });
    let qr = a.qr();
    let rhs = qr.q().transpose() * b;
    qr.r().solve_upper_triangular(&rhs).unwrap().iter().copied().collect()
}

#[test]
fn filters_match_dense_least_squares() {
    let samples: Vec<_> = (0..3)
        .map(|s| {
            let (y, x) = blurred(s, 3);
            (y, x, random_map(20, 20, 2, 10 + s))
        })
        .collect();
    let refs: Vec<_> = samples.iter().map(|(y, x, m)| (y, x, m)).collect();
    let (patch, ridge) = (5, 1e-3);
    let bank = fit_class_filters(&collect_design(&refs, 2, patch).unwrap(), ridge).unwrap();
    for class in 0..2 {
        for channel in 0..3 {
            let oracle = dense_oracle(&samples, class, channel, patch, ridge);
            let f = bank.filter(class, channel);
            let ours: Vec<f64> = f.taps.iter().copied().chain([f.bias]).collect();
            assert!(max_abs_diff(&ours, &oracle) < 1e-4, "class {class} channel {channel}");
        }
    }
}

#[test]
fn more_classes_never_fit_worse_on_training_data() {
    let samples: Vec<_> = (0..2).map(|s| blurred(s, 1)).collect();
    let one = BlurSegmentationMap::constant(20, 20, 1, 0).unwrap();
    let maps: Vec<_> = (0..2).map(|s| random_map(20, 20, 4, 30 + s)).collect();
    let train_error = |maps: &[&BlurSegmentationMap], classes: usize| -> f64 {
        let refs: Vec<_> = samples.iter().zip(maps).map(|((y, x), m)| (y, x, *m)).collect();
        let bank = fit_class_filters(&collect_design(&refs, classes, 3).unwrap(), 1e-9).unwrap();
        samples.iter().zip(maps).map(|((y, x), m)| mse(&reconstruct(y, &predict_residual(y, m, &bank).unwrap()).unwrap(), x).unwrap()).sum()
    };
    let single = train_error(&[&one, &one], 1);
    let multi = train_error(&[&maps[0], &maps[1]], 4);
    assert!(multi <= single + 1e-9, "{multi} vs {single}");
}

#[test]
fn relabeling_classes_and_filters_is_bit_identical() {
    let (y, x) = blurred(2, 3);
    let rho = random_map(20, 20, 3, 4);
    let bank = fit_class_filters(&collect_design(&[(&y, &x, &rho)], 3, 3).unwrap(), 1e-3).unwrap();
    let perm = [1, 2, 0];
    let mut inverse = [0; 3];
    for (new, &old) in perm.iter().enumerate() {
        inverse[old] = new;
    }
    let a = predict_residual(&y, &rho, &bank).unwrap();
    let b = predict_residual(&y, &rho.relabeled(&inverse).unwrap(), &bank.permuted(&perm).unwrap()).unwrap();
    assert_eq!(a.data(), b.data());
}

#[test]
fn zero_bank_returns_the_blur_image() {
    let (y, _) = blurred(1, 3);
    let rho = random_map(20, 20, 4, 5);
    let bank = FilterBank::zeros(4, 3, 7).unwrap();
    let e = predict_residual(&y, &rho, &bank).unwrap();
    assert_eq!(reconstruct(&y, &e).unwrap(), y);
}

#[test]
fn bank_survives_disk_round_trip() {
    let (y, x) = blurred(3, 1);
    let rho = random_map(20, 20, 2, 6);
    let bank = fit_class_filters(&collect_design(&[(&y, &x, &rho)], 2, 3).unwrap(), 1e-3).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("filters.json");
    bank.save(&path).unwrap();
    assert_eq!(FilterBank::load(&path).unwrap(), bank);
}
