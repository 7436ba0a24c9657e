use rand::Rng;

use crate::error::Result;
use crate::image::Image;

/// Procedural sharp image: a smooth gradient background with hard-edged
/// rectangles, disks and stripes, all samples in `[0, 1]`.
pub fn synthetic_scene<R: Rng + ?Sized>(height: usize, width: usize, channels: usize, rng: &mut R) -> Result<Image> {
    let (h, w) = (height as f64, width as f64);
    let mut base = [[0.0f64; 3]; 3];
    for coeffs in base.iter_mut().take(channels) {
        *coeffs = [rng.random_range(0.25..0.75), rng.random_range(-0.2..0.2), rng.random_range(-0.2..0.2)];
    }
    let mut data = vec![0f64; height * width * channels];
    for y in 0..height {
        for x in 0..width {
            for c in 0..channels {
                let b = base[c];
                data[(y * width + x) * channels + c] = b[0] + b[1] * (x as f64 / w - 0.5) + b[2] * (y as f64 / h - 0.5);
            }
        }
    }

    let shapes = 6 + (height * width / 400).min(24);
    for _ in 0..shapes {
        let mut color = [0.0; 3];
        for v in color.iter_mut().take(channels) {
            *v = rng.random_range(0.05..0.95);
        }
        let kind = rng.random_range(0..3u8);
        let cy = rng.random_range(0.0..h);
        let cx = rng.random_range(0.0..w);
        let size = rng.random_range(0.06..0.3) * h.min(w);
        let aspect = rng.random_range(0.4..2.5);
        let tilt: f64 = rng.random_range(0.0..std::f64::consts::PI);
        let period = rng.random_range(2.5..7.0);
        let (ct, st) = (tilt.cos(), tilt.sin());
        for y in 0..height {
            for x in 0..width {
                let (dy, dx) = (y as f64 - cy, x as f64 - cx);
                let (u, v) = (dx * ct + dy * st, -dx * st + dy * ct);
                let inside = match kind {
                    0 => u.abs() <= size * aspect / 2.0 && v.abs() <= size / aspect / 2.0,
                    1 => (u / aspect).powi(2) + (v * aspect).powi(2) <= (size / 2.0).powi(2),
                    _ => u.abs() <= size && v.abs() <= size / 2.0 && (u / period).rem_euclid(1.0) < 0.5,
                };
                if inside {
                    for c in 0..channels {
                        data[(y * width + x) * channels + c] = color[c];
                    }
                }
            }
        }
    }
    Image::new(height, width, channels, data.into_iter().map(|v| v.clamp(0.0, 1.0) as f32).collect())
}
