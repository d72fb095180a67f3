//! Training objectives: mean-reduced L1 and the KL-divergence term that the
//! second training stage adds to it.

use crate::error::{shape_err, Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Weights of the second-stage objective `alpha * L1 + beta * KL`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossWeights {
    pub alpha: f64,
    pub beta: f64,
    pub kl_epsilon: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights { alpha: 1.0, beta: 1.0, kl_epsilon: 1e-8 }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha >= 0.0 && self.beta >= 0.0) {
            return Err(Error::InvalidArgument { op: "LossWeights", detail: "alpha and beta must be >= 0".into() });
        }
        if !(self.kl_epsilon > 0.0) {
            return Err(Error::InvalidArgument { op: "LossWeights", detail: "kl_epsilon must be > 0".into() });
        }
        Ok(())
    }
}

fn same_shape<T: Scalar>(sr: &Tensor<T>, hr: &Tensor<T>, op: &'static str) -> Result<()> {
    if sr.shape() != hr.shape() {
        return shape_err(op, format!("sr {} vs hr {}", sr.shape(), hr.shape()));
    }
    Ok(())
}

/// Mean absolute difference.
pub fn l1_loss<T: Scalar>(sr: &Tensor<T>, hr: &Tensor<T>) -> Result<T> {
    same_shape(sr, hr, "l1_loss")?;
    let total: T = sr.data().iter().zip(hr.data()).map(|(&a, &b)| (a - b).abs()).sum();
    Ok(total / T::of(sr.len() as f64))
}

/// Gradient of [`l1_loss`] with respect to `sr`; zero where `sr == hr`.
pub fn l1_loss_grad<T: Scalar>(sr: &Tensor<T>, hr: &Tensor<T>) -> Result<Tensor<T>> {
    same_shape(sr, hr, "l1_loss")?;
    let inv = T::one() / T::of(sr.len() as f64);
    sr.zip_map(hr, "l1_loss", |a, b| {
        if a > b {
            inv
        } else if a < b {
            -inv
        } else {
            T::zero()
        }
    })
}

fn clamp01<T: Scalar>(v: T) -> T {
    v.max(T::zero()).min(T::one())
}

fn check_finite<T: Scalar>(t: &Tensor<T>, what: &str) -> Result<()> {
    if let Some(i) = t.data().iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite(format!("kl_loss {what} at flat index {i}")));
    }
    Ok(())
}

/// KL divergence `sum_i p_hr(i) ln(p_hr(i) / p_sr(i))`, averaged over the batch.
///
/// Each image (all channels jointly) is clamped to `[0, 1]` and turned into a
/// distribution by `p(i) = (x_i + eps) / sum_j (x_j + eps)`.
pub fn kl_loss<T: Scalar>(sr: &Tensor<T>, hr: &Tensor<T>, eps: f64) -> Result<T> {
    same_shape(sr, hr, "kl_loss")?;
    check_finite(sr, "sr")?;
    check_finite(hr, "hr")?;
    let s = sr.shape();
    let per = s.c * s.plane();
    let eps = T::of(eps);
    let mut total = T::zero();
    for n in 0..s.n {
        let a = &sr.data()[n * per..(n + 1) * per];
        let b = &hr.data()[n * per..(n + 1) * per];
        let zs: T = a.iter().map(|&v| clamp01(v) + eps).sum();
        let zh: T = b.iter().map(|&v| clamp01(v) + eps).sum();
        let mut kl = T::zero();
        for (&sv, &hv) in a.iter().zip(b) {
            let ph = (clamp01(hv) + eps) / zh;
            let ps = (clamp01(sv) + eps) / zs;
            kl += ph * (ph / ps).ln();
        }
        total += kl;
    }
    Ok(total / T::of(s.n as f64))
}

/// Gradient of [`kl_loss`] with respect to `sr`. The clamp passes gradient
/// only strictly inside `(0, 1)`.
pub fn kl_loss_grad<T: Scalar>(sr: &Tensor<T>, hr: &Tensor<T>, eps: f64) -> Result<Tensor<T>> {
    same_shape(sr, hr, "kl_loss")?;
    check_finite(sr, "sr")?;
    check_finite(hr, "hr")?;
    let s = sr.shape();
    let per = s.c * s.plane();
    let eps = T::of(eps);
    let inv_n = T::one() / T::of(s.n as f64);
    let mut g = Tensor::zeros(s);
    for n in 0..s.n {
        let a = &sr.data()[n * per..(n + 1) * per];
        let b = &hr.data()[n * per..(n + 1) * per];
        let zs: T = a.iter().map(|&v| clamp01(v) + eps).sum();
        let zh: T = b.iter().map(|&v| clamp01(v) + eps).sum();
        let dst = &mut g.data_mut()[n * per..(n + 1) * per];
        for ((d, &sv), &hv) in dst.iter_mut().zip(a).zip(b) {
            if sv > T::zero() && sv < T::one() {
                let ph = (clamp01(hv) + eps) / zh;
                *d = inv_n * (T::one() / zs - ph / (sv + eps));
            }
        }
    }
    Ok(g)
}

/// `alpha * l1_loss + beta * kl_loss`.
pub fn stage2_loss<T: Scalar>(sr: &Tensor<T>, hr: &Tensor<T>, w: &LossWeights) -> Result<T> {
    w.validate()?;
    let l1 = l1_loss(sr, hr)?;
    if w.beta == 0.0 {
        return Ok(T::of(w.alpha) * l1);
    }
    Ok(T::of(w.alpha) * l1 + T::of(w.beta) * kl_loss(sr, hr, w.kl_epsilon)?)
}
