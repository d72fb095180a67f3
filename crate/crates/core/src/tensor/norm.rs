use super::{Shape, Tensor};
use crate::error::{arg_err, shape_err, Result};
use crate::scalar::Scalar;

/// Per-site statistics kept from the forward pass.
#[derive(Clone, Debug)]
pub struct LayerNormSaved<T> {
    /// Normalized input before the affine map.
    pub xhat: Tensor<T>,
    /// `1/sqrt(var + eps)` per (n, y, x) site.
    pub rstd: Vec<T>,
}

/// Normalizes across the channel axis independently at every (n, y, x) site,
/// then applies the per-channel affine `gamma * xhat + beta`.
pub fn layer_norm_channels<T: Scalar>(
    x: &Tensor<T>,
    gamma: &[T],
    beta: &[T],
    eps: T,
) -> Result<(Tensor<T>, LayerNormSaved<T>)> {
    let s = x.shape();
    if s.c == 0 {
        return arg_err("layer_norm_channels", "channel dimension c is 0");
    }
    if gamma.len() != s.c || beta.len() != s.c {
        return shape_err(
            "layer_norm_channels",
            format!("gamma/beta lengths {}/{} do not match c={}", gamma.len(), beta.len(), s.c),
        );
    }
    if eps <= T::zero() {
        return arg_err("layer_norm_channels", "eps must be positive");
    }
    let p = s.plane();
    let inv_c = T::one() / T::of(s.c as f64);
    let mut y = Tensor::zeros(s);
    let mut xhat = Tensor::zeros(s);
    let mut rstd = vec![T::zero(); s.n * p];
    let xd = x.data();
    for n in 0..s.n {
        let base = n * s.c * p;
        for i in 0..p {
            let mut mean = T::zero();
            for c in 0..s.c {
                mean += xd[base + c * p + i];
            }
            mean *= inv_c;
            let mut var = T::zero();
            for c in 0..s.c {
                let d = xd[base + c * p + i] - mean;
                var += d * d;
            }
            var *= inv_c;
            let r = T::one() / (var + eps).sqrt();
            rstd[n * p + i] = r;
            for c in 0..s.c {
                let o = base + c * p + i;
                let h = (xd[o] - mean) * r;
                xhat.data_mut()[o] = h;
                y.data_mut()[o] = gamma[c] * h + beta[c];
            }
        }
    }
    Ok((y, LayerNormSaved { xhat, rstd }))
}

/// Returns `(grad_x, grad_gamma, grad_beta)`.
pub fn layer_norm_channels_backward<T: Scalar>(
    saved: &LayerNormSaved<T>,
    gamma: &[T],
    grad_out: &Tensor<T>,
) -> Result<(Tensor<T>, Vec<T>, Vec<T>)> {
    let s: Shape = saved.xhat.shape();
    if grad_out.shape() != s || gamma.len() != s.c {
        return shape_err("layer_norm_channels_backward", format!("grad {} vs saved {}", grad_out.shape(), s));
    }
    let p = s.plane();
    let inv_c = T::one() / T::of(s.c as f64);
    let xh = saved.xhat.data();
    let go = grad_out.data();
    let mut gx = Tensor::zeros(s);
    let mut gg = vec![T::zero(); s.c];
    let mut gb = vec![T::zero(); s.c];
    for n in 0..s.n {
        let base = n * s.c * p;
        for i in 0..p {
            let mut m1 = T::zero();
            let mut m2 = T::zero();
            for c in 0..s.c {
                let o = base + c * p + i;
                let gh = go[o] * gamma[c];
                m1 += gh;
                m2 += gh * xh[o];
            }
            m1 *= inv_c;
            m2 *= inv_c;
            let r = saved.rstd[n * p + i];
            for c in 0..s.c {
                let o = base + c * p + i;
                let gh = go[o] * gamma[c];
                gx.data_mut()[o] = r * (gh - m1 - xh[o] * m2);
            }
        }
        for c in 0..s.c {
            let off = base + c * p;
            for i in 0..p {
                gg[c] += go[off + i] * xh[off + i];
                gb[c] += go[off + i];
            }
        }
    }
    Ok((gx, gg, gb))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_channels_normalize_to_zero() {
        let x = Tensor::<f64>::full([1, 5, 2, 3], 4.25);
        let (y, _) = layer_norm_channels(&x, &[1.0; 5], &[0.0; 5], 1e-6).unwrap();
        assert!(y.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn two_channel_closed_form() {
        let x = Tensor::<f64>::from_vec([1, 2, 1, 1], vec![1.0, 3.0]).unwrap();
        let (y, _) = layer_norm_channels(&x, &[1.0; 2], &[0.0; 2], 1e-12).unwrap();
        assert!((y.data()[0] + 1.0).abs() < 1e-9);
        assert!((y.data()[1] - 1.0).abs() < 1e-9);
    }

    #[test]
    fn rejects_zero_channels_and_bad_affine() {
        let x = Tensor::<f32>::zeros([1, 0, 2, 2]);
        assert!(layer_norm_channels(&x, &[], &[], 1e-6).is_err());
        let x = Tensor::<f32>::zeros([1, 3, 2, 2]);
        assert!(layer_norm_channels(&x, &[1.0; 2], &[0.0; 3], 1e-6).is_err());
    }
}
