//! Procedural piecewise-smooth test scenes. Deblurring fixtures need sharp
//! edges (to expose ringing) on smooth backgrounds (to expose noise
//! amplification); these scenes provide both without shipping photographs.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::image::Image;
use crate::io::{save_image, BitDepth};

/// Deterministic synthetic scene: smooth shaded background with random
/// rectangles, disks, and line strokes at varying intensities.
pub fn gen_scene(height: usize, width: usize, channels: usize, seed: u64) -> Image {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut img = Image::zeros(height, width, channels);
    for c in 0..channels {
        let base = rng.gen_range(0.25..0.75);
        let ax = rng.gen_range(0.5..2.0) * std::f64::consts::PI;
        let ay = rng.gen_range(0.5..2.0) * std::f64::consts::PI;
        let phase = rng.gen_range(0.0..std::f64::consts::TAU);
        let amp = rng.gen_range(0.05..0.2);
        for y in 0..height {
            for x in 0..width {
                let u = x as f64 / width as f64;
                let v = y as f64 / height as f64;
                let s = base + amp * (ax * u + ay * v + phase).sin();
                img.set(c, y, x, s);
            }
        }
    }

    let shapes = 6 + rng.gen_range(0..6);
    for _ in 0..shapes {
        let value: f64 = rng.gen_range(0.05..0.95);
        let tint: Vec<f64> = (0..channels)
            .map(|_| (value + rng.gen_range(-0.15..0.15)).clamp(0.0, 1.0))
            .collect();
        match rng.gen_range(0..3) {
            0 => {
                // Axis-aligned rectangle.
                let rh = rng.gen_range(height / 8..height / 2);
                let rw = rng.gen_range(width / 8..width / 2);
                let y0 = rng.gen_range(0..height - rh);
                let x0 = rng.gen_range(0..width - rw);
                for c in 0..channels {
                    for y in y0..y0 + rh {
                        for x in x0..x0 + rw {
                            img.set(c, y, x, tint[c]);
                        }
                    }
                }
            }
            1 => {
                // Disk.
                let r = rng.gen_range(height.min(width) / 10..height.min(width) / 3) as f64;
                let cy = rng.gen_range(0..height) as f64;
                let cx = rng.gen_range(0..width) as f64;
                for c in 0..channels {
                    for y in 0..height {
                        for x in 0..width {
                            let d = (y as f64 - cy).hypot(x as f64 - cx);
                            if d < r {
                                img.set(c, y, x, tint[c]);
                            }
                        }
                    }
                }
            }
            _ => {
                // Thick line stroke.
                let y0 = rng.gen_range(0.0..height as f64);
                let x0 = rng.gen_range(0.0..width as f64);
                let angle = rng.gen_range(0.0..std::f64::consts::PI);
                let (dy, dx) = (angle.sin(), angle.cos());
                let half_w = rng.gen_range(1.0..3.0);
                for c in 0..channels {
                    for y in 0..height {
                        for x in 0..width {
                            // Distance from (y,x) to the infinite line.
                            let d = ((y as f64 - y0) * dx - (x as f64 - x0) * dy).abs();
                            if d < half_w {
                                img.set(c, y, x, tint[c]);
                            }
                        }
                    }
                }
            }
        }
    }
    img
}

/// Write `count` scenes as 16-bit PNGs named `clean_###.png`.
pub fn write_clean_set(
    dir: &Path,
    count: usize,
    size: usize,
    channels: usize,
    seed: u64,
) -> Result<Vec<std::path::PathBuf>> {
    std::fs::create_dir_all(dir)?;
    let mut paths = Vec::with_capacity(count);
    for i in 0..count {
        let img = gen_scene(size, size, channels, seed.wrapping_add(i as u64));
        let path = dir.join(format!("clean_{i:03}.png"));
        save_image(&path, &img, BitDepth::Sixteen)?;
        paths.push(path);
    }
    Ok(paths)
}
