use super::{Shape, Tensor};
use crate::error::{arg_err, shape_err, Result};
use crate::scalar::Scalar;

/// Sub-pixel rearrangement `(n, c*r*r, h, w) -> (n, c, h*r, w*r)` with
/// `out[n, c, y*r+i, x*r+j] = in[n, c*r*r + i*r + j, y, x]`.
pub fn pixel_shuffle<T: Scalar>(x: &Tensor<T>, r: usize) -> Result<Tensor<T>> {
    let s = x.shape();
    if r == 0 {
        return arg_err("pixel_shuffle", "factor must be at least 1");
    }
    if !s.c.is_multiple_of(r * r) {
        return shape_err("pixel_shuffle", format!("channels {} not divisible by r^2 = {}", s.c, r * r));
    }
    let oc = s.c / (r * r);
    let os = Shape::new(s.n, oc, s.h * r, s.w * r);
    let mut out = Tensor::zeros(os);
    for n in 0..s.n {
        for c in 0..oc {
            let dst = out.plane_mut(n, c);
            for i in 0..r {
                for j in 0..r {
                    let src = x.plane(n, c * r * r + i * r + j);
                    for y in 0..s.h {
                        for xx in 0..s.w {
                            dst[(y * r + i) * os.w + xx * r + j] = src[y * s.w + xx];
                        }
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Exact inverse of [`pixel_shuffle`].
pub fn pixel_unshuffle<T: Scalar>(x: &Tensor<T>, r: usize) -> Result<Tensor<T>> {
    let s = x.shape();
    if r == 0 {
        return arg_err("pixel_unshuffle", "factor must be at least 1");
    }
    if !s.h.is_multiple_of(r) || !s.w.is_multiple_of(r) {
        return shape_err("pixel_unshuffle", format!("spatial size {}x{} not divisible by {r}", s.h, s.w));
    }
    let os = Shape::new(s.n, s.c * r * r, s.h / r, s.w / r);
    let mut out = Tensor::zeros(os);
    for n in 0..s.n {
        for c in 0..s.c {
            let src = x.plane(n, c).to_vec();
            for i in 0..r {
                for j in 0..r {
                    let dst = out.plane_mut(n, c * r * r + i * r + j);
                    for y in 0..os.h {
                        for xx in 0..os.w {
                            dst[y * os.w + xx] = src[(y * r + i) * s.w + xx * r + j];
                        }
                    }
                }
            }
        }
    }
    Ok(out)
}
