use std::fmt;

use super::{Shape, Tensor};
use crate::error::{arg_err, shape_err, Result};
use crate::scalar::Scalar;

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum PoolKind {
    Max,
    Avg,
    /// Mean over each whole plane; window and stride are ignored.
    GlobalAvg,
}

impl fmt::Display for PoolKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PoolKind::Max => "max",
            PoolKind::Avg => "avg",
            PoolKind::GlobalAvg => "global_avg",
        })
    }
}

fn out_shape(s: Shape, kind: PoolKind, k: usize, stride: usize) -> Result<Shape> {
    if kind == PoolKind::GlobalAvg {
        if s.plane() == 0 {
            return shape_err("pool2d", "empty spatial plane");
        }
        return Ok(Shape::new(s.n, s.c, 1, 1));
    }
    if k == 0 || stride == 0 {
        return arg_err("pool2d", format!("window {k} and stride {stride} must be positive"));
    }
    if k > s.h || k > s.w {
        return shape_err("pool2d", format!("{kind} window {k} larger than input {}x{}", s.h, s.w));
    }
    Ok(Shape::new(s.n, s.c, (s.h - k) / stride + 1, (s.w - k) / stride + 1))
}

/// Windowed pooling without padding, or global average pooling.
pub fn pool2d<T: Scalar>(x: &Tensor<T>, kind: PoolKind, k: usize, stride: usize) -> Result<Tensor<T>> {
    let s = x.shape();
    let os = out_shape(s, kind, k, stride)?;
    let mut out = Tensor::zeros(os);
    for n in 0..s.n {
        for c in 0..s.c {
            let src = x.plane(n, c);
            let dst = out.plane_mut(n, c);
            if kind == PoolKind::GlobalAvg {
                dst[0] = src.iter().copied().sum::<T>() / T::of(src.len() as f64);
                continue;
            }
            let inv = T::one() / T::of((k * k) as f64);
            for oy in 0..os.h {
                for ox in 0..os.w {
                    let (y0, x0) = (oy * stride, ox * stride);
                    let mut acc = match kind {
                        PoolKind::Max => T::neg_infinity(),
                        _ => T::zero(),
                    };
                    for y in y0..y0 + k {
                        for &v in &src[y * s.w + x0..y * s.w + x0 + k] {
                            match kind {
                                PoolKind::Max => {
                                    if v > acc {
                                        acc = v
                                    }
                                }
                                _ => acc += v,
                            }
                        }
                    }
                    dst[oy * os.w + ox] = if kind == PoolKind::Avg { acc * inv } else { acc };
                }
            }
        }
    }
    Ok(out)
}

/// Gradient with respect to the pooled input. Max pooling routes each
/// output gradient to the first maximum in row-major window order.
pub fn pool2d_backward<T: Scalar>(
    x: &Tensor<T>,
    grad_out: &Tensor<T>,
    kind: PoolKind,
    k: usize,
    stride: usize,
) -> Result<Tensor<T>> {
    let s = x.shape();
    let os = out_shape(s, kind, k, stride)?;
    if grad_out.shape() != os {
        return shape_err("pool2d_backward", format!("grad {} vs output {}", grad_out.shape(), os));
    }
    let mut gx = Tensor::zeros(s);
    for n in 0..s.n {
        for c in 0..s.c {
            let src = x.plane(n, c).to_vec();
            let go = grad_out.plane(n, c).to_vec();
            let dst = gx.plane_mut(n, c);
            if kind == PoolKind::GlobalAvg {
                let g = go[0] / T::of(dst.len() as f64);
                dst.iter_mut().for_each(|v| *v = g);
                continue;
            }
            let inv = T::one() / T::of((k * k) as f64);
            for oy in 0..os.h {
                for ox in 0..os.w {
                    let g = go[oy * os.w + ox];
                    let (y0, x0) = (oy * stride, ox * stride);
                    match kind {
                        PoolKind::Max => {
                            let mut best = y0 * s.w + x0;
                            for y in y0..y0 + k {
                                for xx in x0..x0 + k {
                                    if src[y * s.w + xx] > src[best] {
                                        best = y * s.w + xx;
                                    }
                                }
                            }
                            dst[best] += g;
                        }
                        _ => {
                            for y in y0..y0 + k {
                                for v in &mut dst[y * s.w + x0..y * s.w + x0 + k] {
                                    *v += g * inv;
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    Ok(gx)
}
