use super::{Shape, Tensor};
use crate::error::{arg_err, Result};
use crate::scalar::Scalar;

/// Source taps `(i0, i1, frac)` for one output coordinate, half-pixel centers
/// (align_corners = false), clamped at the borders.
fn taps(out_len: usize, in_len: usize) -> Vec<(usize, usize, f64)> {
    let scale = in_len as f64 / out_len as f64;
    (0..out_len)
        .map(|o| {
            let src = ((o as f64 + 0.5) * scale - 0.5).max(0.0);
            let i0 = (src.floor() as usize).min(in_len - 1);
            let i1 = (i0 + 1).min(in_len - 1);
            (i0, i1, src - i0 as f64)
        })
        .collect()
}

pub fn resize_bilinear<T: Scalar>(x: &Tensor<T>, out_h: usize, out_w: usize) -> Result<Tensor<T>> {
    let s = x.shape();
    if out_h == 0 || out_w == 0 {
        return arg_err("resize_bilinear", format!("output size {out_h}x{out_w} must be at least 1x1"));
    }
    if s.h == 0 || s.w == 0 {
        return arg_err("resize_bilinear", "empty input plane");
    }
    if (out_h, out_w) == (s.h, s.w) {
        return Ok(x.clone());
    }
    let ty = taps(out_h, s.h);
    let tx = taps(out_w, s.w);
    let mut out = Tensor::zeros(Shape::new(s.n, s.c, out_h, out_w));
    for n in 0..s.n {
        for c in 0..s.c {
            let src = x.plane(n, c);
            let dst = out.plane_mut(n, c);
            for (oy, &(y0, y1, fy)) in ty.iter().enumerate() {
                let (fy, gy) = (T::of(fy), T::of(1.0 - fy));
                for (ox, &(x0, x1, fx)) in tx.iter().enumerate() {
                    let (fx, gx) = (T::of(fx), T::of(1.0 - fx));
                    let top = src[y0 * s.w + x0] * gx + src[y0 * s.w + x1] * fx;
                    let bot = src[y1 * s.w + x0] * gx + src[y1 * s.w + x1] * fx;
                    dst[oy * out_w + ox] = top * gy + bot * fy;
                }
            }
        }
    }
    Ok(out)
}

pub fn resize_bilinear_backward<T: Scalar>(in_shape: Shape, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
    let gs = grad_out.shape();
    if (gs.h, gs.w) == (in_shape.h, in_shape.w) {
        return Ok(grad_out.clone());
    }
    let ty = taps(gs.h, in_shape.h);
    let tx = taps(gs.w, in_shape.w);
    let mut gx = Tensor::zeros(in_shape);
    for n in 0..gs.n {
        for c in 0..gs.c {
            let go = grad_out.plane(n, c).to_vec();
            let dst = gx.plane_mut(n, c);
            let w = in_shape.w;
            for (oy, &(y0, y1, fy)) in ty.iter().enumerate() {
                let (fy, gy) = (T::of(fy), T::of(1.0 - fy));
                for (ox, &(x0, x1, fx)) in tx.iter().enumerate() {
                    let (fx, gxw) = (T::of(fx), T::of(1.0 - fx));
                    let g = go[oy * gs.w + ox];
                    dst[y0 * w + x0] += g * gy * gxw;
                    dst[y0 * w + x1] += g * gy * fx;
                    dst[y1 * w + x0] += g * fy * gxw;
                    dst[y1 * w + x1] += g * fy * fx;
                }
            }
        }
    }
    Ok(gx)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_size_is_identity() {
        let x = Tensor::<f32>::from_fn([1, 2, 3, 5], |_, c, y, x| (c * 15 + y * 5 + x) as f32 * 0.1);
        assert_eq!(resize_bilinear(&x, 3, 5).unwrap(), x);
    }

    #[test]
    fn constant_stays_constant() {
        let x = Tensor::<f64>::full([1, 1, 3, 4], 2.5);
        for (h, w) in [(1, 1), (7, 2), (9, 13)] {
            let y = resize_bilinear(&x, h, w).unwrap();
            assert!(y.data().iter().all(|&v| (v - 2.5).abs() < 1e-12));
        }
    }

    #[test]
    fn zero_size_rejected() {
        assert!(resize_bilinear(&Tensor::<f32>::zeros([1, 1, 2, 2]), 0, 3).is_err());
    }
}
