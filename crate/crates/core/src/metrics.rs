//! Y-channel evaluation metrics.

use crate::error::{arg_err, Result};
use crate::scalar::Scalar;
use crate::tensor::{Shape, Tensor};

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_C1: f64 = (0.01 * 255.0) * (0.01 * 255.0);
pub const SSIM_C2: f64 = (0.03 * 255.0) * (0.03 * 255.0);

/// Studio-swing BT.601 luma of RGB in `[0,1]`, in the `[16,235]` range.
/// Inputs are clamped to `[0,1]` first.
pub fn rgb_to_y<T: Scalar>(img: &Tensor<T>) -> Result<Tensor<T>> {
    let s = img.shape();
    if s.c != 3 {
        return arg_err("rgb_to_y", format!("expected 3 channels, got {s}"));
    }
    let plane = s.plane();
    let mut out = Tensor::zeros(Shape::new(s.n, 1, s.h, s.w));
    let d = img.data();
    for n in 0..s.n {
        let base = n * 3 * plane;
        let (r, rest) = d[base..base + 3 * plane].split_at(plane);
        let (g, b) = rest.split_at(plane);
        let o = &mut out.data_mut()[n * plane..(n + 1) * plane];
        for i in 0..plane {
            let c = |v: T| v.as_f64().clamp(0.0, 1.0);
            o[i] = T::of(16.0 + 65.481 * c(r[i]) + 128.553 * c(g[i]) + 24.966 * c(b[i]));
        }
    }
    Ok(out)
}

/// Rounds to the nearest integer level, for comparisons against tools that
/// evaluate on 8-bit luma.
pub fn quantize<T: Scalar>(img: &Tensor<T>) -> Tensor<T> {
    img.map(|v| v.round())
}

fn shaved<T: Scalar>(op: &'static str, sr: &Tensor<T>, hr: &Tensor<T>, shave: usize) -> Result<(Tensor<T>, Tensor<T>)> {
    sr.expect_same_shape(hr, op)?;
    let s = hr.shape();
    let min = 2 * shave + 1;
    if s.h < min || s.w < min {
        return arg_err(op, format!("image {}x{} is smaller than {min} per side for border {shave}", s.h, s.w));
    }
    let (h, w) = (s.h - 2 * shave, s.w - 2 * shave);
    Ok((sr.crop(shave, shave, h, w)?, hr.crop(shave, shave, h, w)?))
}

/// PSNR in dB for values on a 0..255 scale, after shaving `shave` pixels
/// from every border. Identical images give `f64::INFINITY`.
pub fn psnr<T: Scalar>(sr: &Tensor<T>, hr: &Tensor<T>, shave: usize) -> Result<f64> {
    let (a, b) = shaved("psnr", sr, hr, shave)?;
    let mse = a.data().iter().zip(b.data()).map(|(&x, &y)| (x.as_f64() - y.as_f64()).powi(2)).sum::<f64>()
        / a.len() as f64;
    if mse == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (255.0 * 255.0 / mse).log10())
}

/// Normalized 1-D Gaussian taps; the 2-D window is their outer product.
pub fn gaussian_taps(size: usize, sigma: f64) -> Vec<f64> {
    let c = (size as f64 - 1.0) / 2.0;
    let raw: Vec<f64> = (0..size).map(|i| (-((i as f64 - c).powi(2)) / (2.0 * sigma * sigma)).exp()).collect();
    let s: f64 = raw.iter().sum();
    raw.into_iter().map(|v| v / s).collect()
}

/// Valid-mode separable filtering of one plane.
fn filter_valid(src: &[f64], h: usize, w: usize, taps: &[f64]) -> (Vec<f64>, usize, usize) {
    let k = taps.len();
    let (oh, ow) = (h + 1 - k, w + 1 - k);
    let mut rows = vec![0.0; h * ow];
    for y in 0..h {
        for x in 0..ow {
            rows[y * ow + x] = taps.iter().enumerate().map(|(i, t)| t * src[y * w + x + i]).sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = taps.iter().enumerate().map(|(i, t)| t * rows[(y + i) * ow + x]).sum();
        }
    }
    (out, oh, ow)
}

/// Single-scale SSIM with an 11x11 Gaussian window (sigma 1.5), averaged
/// over valid window positions, then over planes.
pub fn ssim<T: Scalar>(sr: &Tensor<T>, hr: &Tensor<T>, shave: usize) -> Result<f64> {
    let (a, b) = shaved("ssim", sr, hr, shave)?;
    let s = a.shape();
    if s.h < SSIM_WINDOW || s.w < SSIM_WINDOW {
        return arg_err("ssim", format!("shaved image {}x{} is smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} window", s.h, s.w));
    }
    let taps = gaussian_taps(SSIM_WINDOW, SSIM_SIGMA);
    let planes = s.n * s.c;
    let mut total = 0.0;
    for p in 0..planes {
        let x: Vec<f64> = a.data()[p * s.plane()..(p + 1) * s.plane()].iter().map(|v| v.as_f64()).collect();
        let y: Vec<f64> = b.data()[p * s.plane()..(p + 1) * s.plane()].iter().map(|v| v.as_f64()).collect();
        let xx: Vec<f64> = x.iter().map(|v| v * v).collect();
        let yy: Vec<f64> = y.iter().map(|v| v * v).collect();
        let xy: Vec<f64> = x.iter().zip(&y).map(|(u, v)| u * v).collect();
        let (mx, oh, ow) = filter_valid(&x, s.h, s.w, &taps);
        let (my, ..) = filter_valid(&y, s.h, s.w, &taps);
        let (sxx, ..) = filter_valid(&xx, s.h, s.w, &taps);
        let (syy, ..) = filter_valid(&yy, s.h, s.w, &taps);
        let (sxy, ..) = filter_valid(&xy, s.h, s.w, &taps);
        let mut acc = 0.0;
        for i in 0..oh * ow {
            let (m1, m2) = (mx[i], my[i]);
            let v1 = sxx[i] - m1 * m1;
            let v2 = syy[i] - m2 * m2;
            let cov = sxy[i] - m1 * m2;
            acc += ((2.0 * m1 * m2 + SSIM_C1) * (2.0 * cov + SSIM_C2))
                / ((m1 * m1 + m2 * m2 + SSIM_C1) * (v1 + v2 + SSIM_C2));
        }
        total += acc / (oh * ow) as f64;
    }
    Ok(total / planes as f64)
}

/// PSNR and SSIM of two RGB images in `[0,1]` on their luma channel.
pub fn y_psnr_ssim<T: Scalar>(sr: &Tensor<T>, hr: &Tensor<T>, shave: usize, quantize_y: bool) -> Result<(f64, f64)> {
    let (mut a, mut b) = (rgb_to_y(sr)?, rgb_to_y(hr)?);
    if quantize_y {
        a = quantize(&a);
        b = quantize(&b);
    }
    Ok((psnr(&a, &b, shave)?, ssim(&a, &b, shave)?))
}

/// Formats a real with 6 decimals; infinity prints as `inf`.
pub fn fmt_metric(v: f64) -> String {
    if v.is_infinite() && v > 0.0 {
        "inf".to_string()
    } else {
        format!("{v:.6}")
    }
}

/// `name,psnr,ssim` CSV row.
pub fn metric_row(name: &str, psnr_db: f64, ssim_val: f64) -> String {
    format!("{name},{},{}", fmt_metric(psnr_db), fmt_metric(ssim_val))
}
