use std::f64::consts::SQRT_2;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{ensure, Result};
use crate::kernel::Kernel;

/// Subsamples per pixel side used when rasterizing motion lines.
pub const SUPERSAMPLING: usize = 16;

/// Camera or object motion during exposure.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MotionSpec {
    /// Extent of the motion in pixels.
    pub length: f64,
    /// Direction in radians, counter-clockwise from the +x axis with y pointing up.
    pub angle: f64,
    /// 0 selects a straight line, anything else seeds a random trajectory.
    #[serde(default)]
    pub trajectory_seed: u64,
    #[serde(default)]
    pub noise_sigma: f64,
}

impl MotionSpec {
    pub fn linear(length: f64, angle: f64) -> Self {
        MotionSpec { length, angle, trajectory_seed: 0, noise_sigma: 0.0 }
    }

    fn validate(&self, size: usize) -> Result<()> {
        ensure!(self.length.is_finite() && self.length >= 1.0, Parameter, "motion length must be >= 1, got {}", self.length);
        ensure!(self.noise_sigma >= 0.0, Parameter, "noise sigma must be >= 0");
        ensure!(size % 2 == 1, Parameter, "kernel side must be odd, got {size}");
        ensure!(size as f64 >= self.length, Parameter, "kernel side {size} is smaller than motion length {}", self.length);
        Ok(())
    }
}

/// Straight line or random trajectory, depending on `spec.trajectory_seed`.
pub fn motion_kernel(spec: &MotionSpec, size: usize) -> Result<Kernel> {
    if spec.trajectory_seed == 0 {
        linear_motion_kernel(spec, size)
    } else {
        random_trajectory_kernel(spec, size)
    }
}

/// Anti-aliased line segment through the kernel center.
///
/// The segment is a `length x 1` rectangle; each tap receives the fraction of
/// its `16 x 16` subsample grid that falls inside the rectangle.
pub fn linear_motion_kernel(spec: &MotionSpec, size: usize) -> Result<Kernel> {
    spec.validate(size)?;
    if spec.length <= 1.0 {
        return Kernel::delta(size);
    }
    let (dx, dy) = (spec.angle.cos(), -spec.angle.sin());
    let half_len = spec.length / 2.0;
    let r = (size / 2) as f64;
    let n = SUPERSAMPLING;
    let mut taps = vec![0.0; size * size];
    for row in 0..size {
        for col in 0..size {
            let mut hits = 0usize;
            for sy in 0..n {
                let py = row as f64 - r - 0.5 + (sy as f64 + 0.5) / n as f64;
                for sx in 0..n {
                    let px = col as f64 - r - 0.5 + (sx as f64 + 0.5) / n as f64;
                    let along = px * dx + py * dy;
                    let across = -px * dy + py * dx;
                    if along.abs() <= half_len && across.abs() <= 0.5 {
                        hits += 1;
                    }
                }
            }
            taps[row * size + col] = hits as f64;
        }
    }
    Kernel::normalized(size, taps)
}

const TRAJECTORY_STEPS: usize = 256;

/// Kernel traced by a seeded random walk with momentum, scaled so that the
/// support diameter never exceeds `spec.length`.
pub fn random_trajectory_kernel(spec: &MotionSpec, size: usize) -> Result<Kernel> {
    spec.validate(size)?;
    ensure!(spec.trajectory_seed != 0, Parameter, "trajectory seed 0 denotes a straight line");
    let mut rng = ChaCha8Rng::seed_from_u64(spec.trajectory_seed);
    let mut heading = spec.angle;
    let mut turn = 0.0f64;
    let mut pos = (0.0f64, 0.0f64);
    let mut pts = Vec::with_capacity(TRAJECTORY_STEPS);
    pts.push(pos);
    for _ in 1..TRAJECTORY_STEPS {
        turn = 0.85 * turn + 0.15 * (rng.random::<f64>() - 0.5);
        if rng.random::<f64>() < 0.02 {
            turn += (rng.random::<f64>() - 0.5) * 1.5;
        }
        heading += turn;
        pos = (pos.0 + heading.cos(), pos.1 - heading.sin());
        pts.push(pos);
    }

    let mut diameter = 0.0f64;
    for (i, a) in pts.iter().enumerate() {
        for b in &pts[i + 1..] {
            diameter = diameter.max(((a.0 - b.0).powi(2) + (a.1 - b.1).powi(2)).sqrt());
        }
    }
    // Rounding each point to a pixel moves it by at most sqrt(2)/2.
    let target = (spec.length - SQRT_2).max(0.0);
    if diameter == 0.0 || target == 0.0 {
        return Kernel::delta(size);
    }
    let scale = target / diameter;
    let (min_x, max_x) = pts.iter().fold((f64::MAX, f64::MIN), |(lo, hi), p| (lo.min(p.0), hi.max(p.0)));
    let (min_y, max_y) = pts.iter().fold((f64::MAX, f64::MIN), |(lo, hi), p| (lo.min(p.1), hi.max(p.1)));
    let (cx, cy) = ((min_x + max_x) / 2.0, (min_y + max_y) / 2.0);
    let r = (size / 2) as isize;
    let mut taps = vec![0.0; size * size];
    for p in &pts {
        let col = ((p.0 - cx) * scale).round() as isize + r;
        let row = ((p.1 - cy) * scale).round() as isize + r;
        taps[row as usize * size + col as usize] += 1.0;
    }
    Kernel::normalized(size, taps)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::FRAC_PI_4;

    #[test]
    fn unit_length_is_delta() {
        for angle in [0.0, 0.3, FRAC_PI_4] {
            assert_eq!(linear_motion_kernel(&MotionSpec::linear(1.0, angle), 5).unwrap(), Kernel::delta(5).unwrap());
        }
    }

    #[test]
    fn horizontal_length_five() {
        let k = linear_motion_kernel(&MotionSpec::linear(5.0, 0.0), 7).unwrap();
        for row in 0..7 {
            for col in 0..7 {
                let expected = if row == 3 && (1..=5).contains(&col) { 0.2 } else { 0.0 };
                assert!((k.tap(row, col) - expected).abs() < 1e-12, "tap ({row},{col}) = {}", k.tap(row, col));
            }
        }
    }

    #[test]
    fn vertical_is_transpose_of_horizontal() {
        let h = linear_motion_kernel(&MotionSpec::linear(5.0, 0.0), 7).unwrap();
        let v = linear_motion_kernel(&MotionSpec::linear(5.0, std::f64::consts::FRAC_PI_2), 7).unwrap();
        for row in 0..7 {
            for col in 0..7 {
                assert!((h.tap(row, col) - v.tap(col, row)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn parameter_errors() {
        assert!(linear_motion_kernel(&MotionSpec::linear(9.0, 0.0), 7).is_err());
        assert!(linear_motion_kernel(&MotionSpec::linear(0.5, 0.0), 7).is_err());
        assert!(linear_motion_kernel(&MotionSpec::linear(3.0, 0.0), 6).is_err());
        assert!(random_trajectory_kernel(&MotionSpec::linear(3.0, 0.0), 7).is_err());
    }

    #[test]
    fn trajectory_is_deterministic_normalized_and_bounded() {
        for seed in 1..=100u64 {
            let spec = MotionSpec { length: 3.0 + (seed % 13) as f64, angle: seed as f64 * 0.1, trajectory_seed: seed, noise_sigma: 0.0 };
            let k = random_trajectory_kernel(&spec, 17).unwrap();
            assert_eq!(k, random_trajectory_kernel(&spec, 17).unwrap());
            let sum: f64 = k.taps().iter().sum();
            assert!((sum - 1.0).abs() < 1e-6);
            assert!(k.support_diameter() <= spec.length + 1e-9, "seed {seed}: {} > {}", k.support_diameter(), spec.length);
        }
    }

    #[test]
    fn dispatch_by_seed() {
        let line = MotionSpec::linear(5.0, 0.0);
        assert_eq!(motion_kernel(&line, 7).unwrap(), linear_motion_kernel(&line, 7).unwrap());
        let walk = MotionSpec { trajectory_seed: 4, ..line };
        assert_eq!(motion_kernel(&walk, 7).unwrap(), random_trajectory_kernel(&walk, 7).unwrap());
    }
}
