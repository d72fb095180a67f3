use super::{Shape, Tensor};
use crate::error::{arg_err, shape_err, Result};
use crate::scalar::Scalar;

/// Stride, zero padding and channel grouping of a 2-D convolution.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub struct ConvSpec {
    pub stride: usize,
    pub padding: usize,
    pub groups: usize,
}

impl ConvSpec {
    pub const fn new(stride: usize, padding: usize, groups: usize) -> Self {
        ConvSpec { stride, padding, groups }
    }

    /// Stride 1, `(k-1)/2` padding: spatial size is preserved for odd `k`.
    pub const fn same(k: usize) -> Self {
        ConvSpec { stride: 1, padding: (k - 1) / 2, groups: 1 }
    }

    pub const fn depthwise(k: usize, channels: usize) -> Self {
        ConvSpec { stride: 1, padding: (k - 1) / 2, groups: channels }
    }

    pub const fn pointwise() -> Self {
        ConvSpec { stride: 1, padding: 0, groups: 1 }
    }

    pub fn out_len(&self, len: usize, k: usize) -> Option<usize> {
        let padded = len + 2 * self.padding;
        (padded >= k).then(|| (padded - k) / self.stride + 1)
    }
}

struct Geometry {
    x: Shape,
    out: Shape,
    k: usize,
    cin_g: usize,
    cout_g: usize,
}

fn check(x: Shape, w: Shape, bias_len: usize, spec: ConvSpec) -> Result<Geometry> {
    const OP: &str = "conv2d";
    if spec.stride == 0 {
        return arg_err(OP, "stride must be at least 1");
    }
    if spec.groups == 0 || !x.c.is_multiple_of(spec.groups) {
        return arg_err(OP, format!("groups={} does not divide input channels c_in={}", spec.groups, x.c));
    }
    if !w.n.is_multiple_of(spec.groups) {
        return arg_err(OP, format!("groups={} does not divide output channels c_out={}", spec.groups, w.n));
    }
    if w.h != w.w {
        return shape_err(OP, format!("kernel must be square, got {}x{}", w.h, w.w));
    }
    if w.h.is_multiple_of(2) {
        return arg_err(OP, format!("kernel size must be odd, got {}", w.h));
    }
    let cin_g = x.c / spec.groups;
    if w.c != cin_g {
        return shape_err(
            OP,
            format!("weight dim 1 (c_in/groups) is {}, expected {} for c_in={} groups={}", w.c, cin_g, x.c, spec.groups),
        );
    }
    if bias_len != w.n {
        return shape_err(OP, format!("bias length {} does not match c_out={}", bias_len, w.n));
    }
    let k = w.h;
    let (Some(oh), Some(ow)) = (spec.out_len(x.h, k), spec.out_len(x.w, k)) else {
        return shape_err(
            OP,
            format!("kernel {k} with padding {} exceeds input spatial size {}x{}", spec.padding, x.h, x.w),
        );
    };
    Ok(Geometry { x, out: Shape::new(x.n, w.n, oh, ow), k, cin_g, cout_g: w.n / spec.groups })
}

/// Output columns `[lo, hi)` whose input column `ox*stride + kx - pad` is in bounds.
#[inline]
fn valid_range(out_len: usize, in_len: usize, kx: usize, stride: usize, pad: usize) -> (usize, usize) {
    // ix = ox*s + kx - pad >= 0  <=>  ox >= ceil((pad - kx)/s)
    let lo = if kx >= pad { 0 } else { (pad - kx).div_ceil(stride) };
    // ix <= in_len - 1  <=>  ox <= (in_len - 1 + pad - kx)/s
    let hi = if in_len + pad > kx { ((in_len - 1 + pad - kx) / stride + 1).min(out_len) } else { 0 };
    (lo, hi.max(lo))
}

/// 2-D cross-correlation with zero padding. `weight` is `(c_out, c_in/groups, k, k)`
/// and `bias` has `c_out` entries.
pub fn conv2d<T: Scalar>(x: &Tensor<T>, weight: &Tensor<T>, bias: &[T], spec: ConvSpec) -> Result<Tensor<T>> {
    let g = check(x.shape(), weight.shape(), bias.len(), spec)?;
    let (s, p, k) = (spec.stride, spec.padding, g.k);
    let out_shape = g.out;
    let mut out = Tensor::zeros(out_shape);
    let (ih, iw, oh, ow) = (g.x.h, g.x.w, out_shape.h, out_shape.w);
    let pointwise = k == 1 && s == 1 && p == 0;
    let wd = weight.data();

    for n in 0..out_shape.n {
        for co in 0..out_shape.c {
            let grp = co / g.cout_g;
            let mut acc = vec![bias[co]; oh * ow];
            for cig in 0..g.cin_g {
                let ci = grp * g.cin_g + cig;
                let src = x.plane(n, ci);
                let wbase = (co * g.cin_g + cig) * k * k;
                if pointwise {
                    let wv = wd[wbase];
                    for (a, &v) in acc.iter_mut().zip(src) {
                        *a += wv * v;
                    }
                    continue;
                }
                for ky in 0..k {
                    let (oy_lo, oy_hi) = valid_range(oh, ih, ky, s, p);
                    for kx in 0..k {
                        let wv = wd[wbase + ky * k + kx];
                        let (ox_lo, ox_hi) = valid_range(ow, iw, kx, s, p);
                        if ox_lo >= ox_hi {
                            continue;
                        }
                        for oy in oy_lo..oy_hi {
                            let iy = oy * s + ky - p;
                            let row = &src[iy * iw..(iy + 1) * iw];
                            let dst = &mut acc[oy * ow..(oy + 1) * ow];
                            if s == 1 {
                                let ix0 = ox_lo + kx - p;
                                let n_cols = ox_hi - ox_lo;
                                for (a, &v) in dst[ox_lo..ox_hi].iter_mut().zip(&row[ix0..ix0 + n_cols]) {
                                    *a += wv * v;
                                }
                            } else {
                                for ox in ox_lo..ox_hi {
                                    dst[ox] += wv * row[ox * s + kx - p];
                                }
                            }
                        }
                    }
                }
            }
            out.plane_mut(n, co).copy_from_slice(&acc);
        }
    }
    Ok(out)
}

/// Per-pixel channel mixing with a `(c_out, c_in, 1, 1)` weight; identical to a
/// 1x1 [`conv2d`].
pub fn fully_connected<T: Scalar>(x: &Tensor<T>, weight: &Tensor<T>, bias: &[T]) -> Result<Tensor<T>> {
    let ws = weight.shape();
    if ws.h != 1 || ws.w != 1 {
        return shape_err("fully_connected", format!("weight must be (c_out, c_in, 1, 1), got {ws}"));
    }
    if ws.c != x.shape().c {
        return shape_err(
            "fully_connected",
            format!("input channel dim is {}, weight expects c_in={}", x.shape().c, ws.c),
        );
    }
    conv2d(x, weight, bias, ConvSpec::pointwise())
}

/// Gradients of [`conv2d`] with respect to input, weight and bias.
pub fn conv2d_backward<T: Scalar>(
    x: &Tensor<T>,
    weight: &Tensor<T>,
    grad_out: &Tensor<T>,
    spec: ConvSpec,
) -> Result<(Tensor<T>, Tensor<T>, Vec<T>)> {
    let g = check(x.shape(), weight.shape(), weight.shape().n, spec)?;
    if grad_out.shape() != g.out {
        return shape_err("conv2d_backward", format!("grad_out {} vs output {}", grad_out.shape(), g.out));
    }
    let (s, p, k) = (spec.stride, spec.padding, g.k);
    let (ih, iw, oh, ow) = (g.x.h, g.x.w, g.out.h, g.out.w);
    let wd = weight.data();
    let mut gx = Tensor::zeros(g.x);
    let mut gw = Tensor::zeros(weight.shape());
    let mut gb = vec![T::zero(); g.out.c];

    for (co, b) in gb.iter_mut().enumerate() {
        let mut acc = T::zero();
        for n in 0..g.out.n {
            acc += grad_out.plane(n, co).iter().copied().sum::<T>();
        }
        *b = acc;
    }

    let gwd = gw.data_mut();
    for n in 0..g.x.n {
        for co in 0..g.out.c {
            let grp = co / g.cout_g;
            let go = grad_out.plane(n, co);
            for cig in 0..g.cin_g {
                let ci = grp * g.cin_g + cig;
                let src = x.plane(n, ci);
                let wbase = (co * g.cin_g + cig) * k * k;
                for ky in 0..k {
                    let (oy_lo, oy_hi) = valid_range(oh, ih, ky, s, p);
                    for kx in 0..k {
                        let (ox_lo, ox_hi) = valid_range(ow, iw, kx, s, p);
                        let mut acc = T::zero();
                        for oy in oy_lo..oy_hi {
                            let iy = oy * s + ky - p;
                            for ox in ox_lo..ox_hi {
                                acc += go[oy * ow + ox] * src[iy * iw + ox * s + kx - p];
                            }
                        }
                        gwd[wbase + ky * k + kx] += acc;
                    }
                }
            }
        }
    }

    for n in 0..g.x.n {
        for ci in 0..g.x.c {
            let grp = ci / g.cin_g;
            let cig = ci % g.cin_g;
            let mut acc = vec![T::zero(); ih * iw];
            for co in grp * g.cout_g..(grp + 1) * g.cout_g {
                let go = grad_out.plane(n, co);
                let wbase = (co * g.cin_g + cig) * k * k;
                for ky in 0..k {
                    let (oy_lo, oy_hi) = valid_range(oh, ih, ky, s, p);
                    for kx in 0..k {
                        let wv = wd[wbase + ky * k + kx];
                        let (ox_lo, ox_hi) = valid_range(ow, iw, kx, s, p);
                        if ox_lo >= ox_hi {
                            continue;
                        }
                        for oy in oy_lo..oy_hi {
                            let iy = oy * s + ky - p;
                            let gorow = &go[oy * ow..(oy + 1) * ow];
                            let dst = &mut acc[iy * iw..(iy + 1) * iw];
                            if s == 1 {
                                let ix0 = ox_lo + kx - p;
                                let n_cols = ox_hi - ox_lo;
                                for (a, &v) in dst[ix0..ix0 + n_cols].iter_mut().zip(&gorow[ox_lo..ox_hi]) {
                                    *a += wv * v;
                                }
                            } else {
                                for ox in ox_lo..ox_hi {
                                    dst[ox * s + kx - p] += wv * gorow[ox];
                                }
                            }
                        }
                    }
                }
            }
            gx.plane_mut(n, ci).copy_from_slice(&acc);
        }
    }
    Ok((gx, gw, gb))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn box_sum_of_padded_ones() {
        let x = Tensor::<f32>::full([1, 1, 3, 3], 1.0);
        let w = Tensor::<f32>::full([1, 1, 3, 3], 1.0);
        let y = conv2d(&x, &w, &[0.0], ConvSpec::same(3)).unwrap();
        assert_eq!(y.shape(), Shape::new(1, 1, 3, 3));
        assert_eq!(y.at(0, 0, 1, 1), 9.0);
        assert_eq!(y.at(0, 0, 0, 0), 4.0);
        assert_eq!(y.at(0, 0, 0, 1), 6.0);
    }

    #[test]
    fn identity_kernel() {
        let x = Tensor::<f32>::from_fn([2, 3, 4, 5], |n, c, y, x| (n * 100 + c * 20 + y * 5 + x) as f32 * 0.37);
        let mut w = Tensor::<f32>::zeros([3, 3, 1, 1]);
        for c in 0..3 {
            w.set(c, c, 0, 0, 1.0);
        }
        let y = conv2d(&x, &w, &[0.0; 3], ConvSpec::pointwise()).unwrap();
        assert_eq!(y, x);
    }

    #[test]
    fn strided_output_shape() {
        let x = Tensor::<f32>::zeros([1, 2, 16, 15]);
        let w = Tensor::<f32>::zeros([4, 2, 3, 3]);
        let y = conv2d(&x, &w, &[0.0; 4], ConvSpec::new(2, 0, 1)).unwrap();
        assert_eq!(y.shape(), Shape::new(1, 4, 7, 7));
    }

    #[test]
    fn rejects_bad_groups_and_shapes() {
        let x = Tensor::<f32>::zeros([1, 4, 8, 8]);
        let w = Tensor::<f32>::zeros([4, 1, 3, 3]);
        let err = conv2d(&x, &w, &[0.0; 4], ConvSpec::new(1, 1, 3)).unwrap_err();
        assert!(err.to_string().contains("groups=3"));
        let err = conv2d(&x, &w, &[0.0; 4], ConvSpec::new(1, 1, 1)).unwrap_err();
        assert!(err.to_string().contains("weight dim 1"), "{err}");
        let err = conv2d(&x, &w, &[0.0; 3], ConvSpec::new(1, 1, 4)).unwrap_err();
        assert!(err.to_string().contains("bias length"));
        let even = Tensor::<f32>::zeros([4, 1, 2, 2]);
        assert!(conv2d(&x, &even, &[0.0; 4], ConvSpec::new(1, 0, 4)).is_err());
    }

    #[test]
    fn fully_connected_hand_product() {
        let x = Tensor::<f32>::full([1, 2, 1, 1], 1.0);
        let w = Tensor::from_vec([2, 2, 1, 1], vec![1.0, 1.0, 2.0, 2.0]).unwrap();
        let y = fully_connected(&x, &w, &[0.0, 1.0]).unwrap();
        assert_eq!(y.data(), &[2.0, 5.0]);
        assert!(fully_connected(&Tensor::<f32>::zeros([1, 3, 1, 1]), &w, &[0.0, 0.0]).is_err());
    }

    #[test]
    fn valid_range_matches_bruteforce() {
        for in_len in 1..9 {
            for k in [1usize, 3, 5, 7] {
                for s in 1..4 {
                    for p in 0..4 {
                        let padded = in_len + 2 * p;
                        if padded < k {
                            continue;
                        }
                        let out_len = (padded - k) / s + 1;
                        for kx in 0..k {
                            let (lo, hi) = valid_range(out_len, in_len, kx, s, p);
                            let want: Vec<usize> = (0..out_len)
                                .filter(|&o| {
                                    let ix = (o * s + kx) as isize - p as isize;
                                    ix >= 0 && (ix as usize) < in_len
                                })
                                .collect();
                            let got: Vec<usize> = (lo..hi).collect();
                            assert_eq!(got, want, "in={in_len} k={k} s={s} p={p} kx={kx}");
                        }
                    }
                }
            }
        }
    }
}
