//! Separable bicubic resampling in the MATLAB `imresize` convention:
//! Keys kernel with a = -0.5, kernel stretched by `1/scale` when
//! downscaling (antialiasing), half-pixel-centred sampling and edge
//! replication at the borders.

use super::image_io::quantize_u8;
use crate::error::{arg_err, Result};
use crate::scalar::Scalar;
use crate::tensor::{Shape, Tensor};

/// Keys cubic convolution kernel with a = -0.5.
pub fn cubic(x: f64) -> f64 {
    let ax = x.abs();
    let ax2 = ax * ax;
    let ax3 = ax2 * ax;
    if ax <= 1.0 {
        1.5 * ax3 - 2.5 * ax2 + 1.0
    } else if ax <= 2.0 {
        -0.5 * ax3 + 2.5 * ax2 - 4.0 * ax + 2.0
    } else {
        0.0
    }
}

/// Per-output-site source indices and normalized weights along one axis.
#[derive(Clone, Debug, PartialEq)]
pub struct ResampleWeights {
    pub out_len: usize,
    pub taps: usize,
    /// `out_len * taps` source indices, already clamped into `0..in_len`.
    pub index: Vec<usize>,
    pub weight: Vec<f64>,
}

impl ResampleWeights {
    pub fn site(&self, o: usize) -> (&[usize], &[f64]) {
        let r = o * self.taps..(o + 1) * self.taps;
        (&self.index[r.clone()], &self.weight[r])
    }
}

pub fn bicubic_weights(in_len: usize, out_len: usize, scale: f64) -> ResampleWeights {
    let antialias = scale < 1.0;
    let kernel_width = if antialias { 4.0 / scale } else { 4.0 };
    let taps = kernel_width.ceil() as usize + 2;
    let mut index = Vec::with_capacity(out_len * taps);
    let mut weight = Vec::with_capacity(out_len * taps);
    for o in 0..out_len {
        let u = (o as f64 + 0.5) / scale - 0.5;
        let left = (u - kernel_width / 2.0).floor() as i64;
        let start = weight.len();
        for j in 0..taps as i64 {
            let src = left + j;
            let d = u - src as f64;
            weight.push(if antialias { scale * cubic(scale * d) } else { cubic(d) });
            index.push(src.clamp(0, in_len as i64 - 1) as usize);
        }
        let total: f64 = weight[start..].iter().sum();
        for w in &mut weight[start..] {
            *w /= total;
        }
    }
    ResampleWeights { out_len, taps, index, weight }
}

fn output_len(op: &'static str, in_len: usize, scale: f64) -> Result<usize> {
    let n = (in_len as f64 * scale).round();
    if n < 1.0 {
        return arg_err(op, format!("output length {n} from {in_len} at scale {scale} is below 1"));
    }
    Ok(n as usize)
}

/// Resizes every plane by `scale` (output size `round(in * scale)`).
/// Height is resampled first, then width.
pub fn bicubic_resize<T: Scalar>(img: &Tensor<T>, scale: f64) -> Result<Tensor<T>> {
    if !(scale > 0.0 && scale.is_finite()) {
        return arg_err("bicubic_resize", format!("scale must be positive and finite, got {scale}"));
    }
    let s = img.shape();
    let oh = output_len("bicubic_resize", s.h, scale)?;
    let ow = output_len("bicubic_resize", s.w, scale)?;
    if scale == 1.0 {
        return Ok(img.clone());
    }
    let wy = bicubic_weights(s.h, oh, scale);
    let wx = bicubic_weights(s.w, ow, scale);
    let mut out = Tensor::zeros(Shape::new(s.n, s.c, oh, ow));
    let mut mid = vec![0.0f64; oh * s.w];
    for n in 0..s.n {
        for c in 0..s.c {
            let src = img.plane(n, c);
            for oy in 0..oh {
                let (idx, wts) = wy.site(oy);
                let row = &mut mid[oy * s.w..(oy + 1) * s.w];
                row.fill(0.0);
                for (&iy, &wt) in idx.iter().zip(wts) {
                    for (r, &v) in row.iter_mut().zip(&src[iy * s.w..(iy + 1) * s.w]) {
                        *r += wt * v.as_f64();
                    }
                }
            }
            let dst = out.plane_mut(n, c);
            for oy in 0..oh {
                let row = &mid[oy * s.w..(oy + 1) * s.w];
                for ox in 0..ow {
                    let (idx, wts) = wx.site(ox);
                    let v: f64 = idx.iter().zip(wts).map(|(&ix, &wt)| wt * row[ix]).sum();
                    dst[oy * ow + ox] = T::of(v);
                }
            }
        }
    }
    Ok(out)
}

/// Bicubic downscale by an integer factor followed by 8-bit quantization,
/// matching an LR image that was saved to disk. Height and width must be
/// multiples of `factor`.
pub fn degrade<T: Scalar>(hr: &Tensor<T>, factor: usize) -> Result<Tensor<T>> {
    let s = hr.shape();
    if factor == 0 || !s.h.is_multiple_of(factor) || !s.w.is_multiple_of(factor) {
        return arg_err("degrade", format!("{}x{} is not divisible by factor {factor}", s.h, s.w));
    }
    Ok(quantize_u8(&bicubic_resize(hr, 1.0 / factor as f64)?))
}
