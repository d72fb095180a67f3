//! Procedural test images: gradients, oriented waves, rectangles and discs.

use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::dataset::PairRgb8;
use super::image_io::{to_u8, write_rgb8, Rgb8};
use crate::error::{io_err, Result};

pub fn synthetic_image<R: Rng + ?Sized>(height: usize, width: usize, rng: &mut R) -> Rgb8 {
    let mut px = vec![[0.0f64; 3]; height * width];
    let base: [f64; 3] = [rng.gen(), rng.gen(), rng.gen()];
    let grad: [[f64; 2]; 3] = std::array::from_fn(|_| [rng.gen_range(-0.4..0.4), rng.gen_range(-0.4..0.4)]);
    let theta: f64 = rng.gen_range(0.0..std::f64::consts::PI);
    let freq: f64 = rng.gen_range(0.05..0.35);
    let amp: [f64; 3] = std::array::from_fn(|_| rng.gen_range(0.0..0.2));
    let (ct, st) = (theta.cos(), theta.sin());
    for y in 0..height {
        for x in 0..width {
            let (fy, fx) = (y as f64 / height as f64, x as f64 / width as f64);
            let wave = (freq * (x as f64 * ct + y as f64 * st)).sin();
            for c in 0..3 {
                px[y * width + x][c] = base[c] + grad[c][0] * fy + grad[c][1] * fx + amp[c] * wave;
            }
        }
    }
    let shapes = rng.gen_range(2..6);
    for _ in 0..shapes {
        let color: [f64; 3] = [rng.gen(), rng.gen(), rng.gen()];
        let cy = rng.gen_range(0.0..height as f64);
        let cx = rng.gen_range(0.0..width as f64);
        let ry = rng.gen_range(2.0..(height as f64 / 3.0).max(3.0));
        let rx = rng.gen_range(2.0..(width as f64 / 3.0).max(3.0));
        let disc = rng.gen_bool(0.5);
        for y in 0..height {
            for x in 0..width {
                let (dy, dx) = ((y as f64 - cy) / ry, (x as f64 - cx) / rx);
                let inside = if disc { dy * dy + dx * dx <= 1.0 } else { dy.abs() <= 1.0 && dx.abs() <= 1.0 };
                if inside {
                    px[y * width + x] = color;
                }
            }
        }
    }
    let data = px.iter().flat_map(|p| p.map(to_u8)).collect();
    Rgb8 { height, width, data }
}

/// `count` square HR images of side `hr_side` with their bicubic LR
/// partners. Image `i` depends only on `(seed, i)`.
pub fn synthetic_pairs(count: usize, hr_side: usize, scale: usize, seed: u64) -> Result<Vec<PairRgb8>> {
    (0..count)
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(i as u64);
            PairRgb8::from_hr(synthetic_image(hr_side, hr_side, &mut rng), scale)
        })
        .collect()
}

/// Writes `count` synthetic HR images as `img_<i>.png` into `dir`.
pub fn write_synthetic_dataset(dir: &Path, count: usize, hr_side: usize, seed: u64) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    (0..count)
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(i as u64);
            let path = dir.join(format!("img_{i:04}.png"));
            write_rgb8(&path, &synthetic_image(hr_side, hr_side, &mut rng))?;
            Ok(path)
        })
        .collect()
}
