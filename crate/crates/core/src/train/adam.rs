use crate::error::{Error, Result};
use crate::params::ParamStore;
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamParams {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamParams {
    fn default() -> Self {
        AdamParams { beta1: 0.9, beta2: 0.99, eps: 1e-8 }
    }
}

/// First and second moment estimates plus the step counter.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState<T> {
    pub m: ParamStore<T>,
    pub v: ParamStore<T>,
    pub step: u64,
}

impl<T: Scalar> AdamState<T> {
    pub fn new(params: &ParamStore<T>) -> Self {
        AdamState { m: params.zeros_like(), v: params.zeros_like(), step: 0 }
    }

    pub fn bit_eq(&self, other: &Self) -> bool {
        self.step == other.step && self.m.bit_eq(&other.m) && self.v.bit_eq(&other.v)
    }
}

/// One bias-corrected Adam update. All gradients are checked before any
/// parameter is touched, so a rejected step leaves params and state intact.
pub fn adam_step<T: Scalar>(
    params: &mut ParamStore<T>,
    grads: &ParamStore<T>,
    state: &mut AdamState<T>,
    lr: f64,
    hp: AdamParams,
) -> Result<()> {
    for (name, p) in params.iter() {
        let g = grads.get(name).ok_or_else(|| Error::MissingParams(vec![format!("gradient for {name}")]))?;
        if g.shape() != p.shape() {
            return crate::error::shape_err("adam_step", format!("gradient {name} is {} but parameter is {}", g.shape(), p.shape()));
        }
        if let Some(i) = g.data().iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("gradient of {name} at flat index {i} is {}", g.data()[i])));
        }
        if !state.m.contains(name) || !state.v.contains(name) {
            return Err(Error::MissingParams(vec![format!("optimizer state for {name}")]));
        }
    }
    state.step += 1;
    let t = state.step as i32;
    let (b1, b2) = (T::of(hp.beta1), T::of(hp.beta2));
    let one = T::one();
    let bc1 = T::of(1.0 - hp.beta1.powi(t));
    let bc2 = T::of(1.0 - hp.beta2.powi(t));
    let lr = T::of(lr);
    let eps = T::of(hp.eps);
    for (name, p) in params.iter_mut() {
        let g = grads.get(name).expect("checked above").data();
        let m = state.m.get_mut(name).expect("checked above").data_mut();
        for (mi, &gi) in m.iter_mut().zip(g) {
            *mi = b1 * *mi + (one - b1) * gi;
        }
        let v = state.v.get_mut(name).expect("checked above").data_mut();
        for (vi, &gi) in v.iter_mut().zip(g) {
            *vi = b2 * *vi + (one - b2) * gi * gi;
        }
        let m = state.m.get(name).expect("checked above").data();
        let v = state.v.get(name).expect("checked above").data();
        for ((pi, &mi), &vi) in p.data_mut().iter_mut().zip(m).zip(v) {
            let mhat = mi / bc1;
            let vhat = vi / bc2;
            *pi -= lr * mhat / (vhat.sqrt() + eps);
        }
    }
    Ok(())
}
