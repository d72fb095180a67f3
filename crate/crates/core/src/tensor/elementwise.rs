use std::fmt;
use std::str::FromStr;

use super::Tensor;
use crate::error::{shape_err, Result};
use crate::scalar::Scalar;

/// Pointwise nonlinearity.
///
/// Backward uses a zero subgradient exactly at the kinks of `relu` (0) and
/// `relu6` (0 and 6). `leaky_relu` uses slope 0.05 on the negative side and
/// at 0.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum Activation {
    Relu,
    LeakyRelu,
    Relu6,
    Sigmoid,
    None,
}

impl Activation {
    pub const LEAKY_SLOPE: f64 = 0.05;

    #[inline]
    pub fn apply<T: Scalar>(self, v: T) -> T {
        match self {
            Activation::Relu => v.max(T::zero()),
            Activation::LeakyRelu => {
                if v > T::zero() {
                    v
                } else {
                    v * T::of(Self::LEAKY_SLOPE)
                }
            }
            Activation::Relu6 => v.max(T::zero()).min(T::of(6.0)),
            Activation::Sigmoid => T::one() / (T::one() + (-v).exp()),
            Activation::None => v,
        }
    }

    /// Derivative at pre-activation `x` with output `y`.
    #[inline]
    pub fn derivative<T: Scalar>(self, x: T, y: T) -> T {
        match self {
            Activation::Relu => {
                if x > T::zero() {
                    T::one()
                } else {
                    T::zero()
                }
            }
            Activation::LeakyRelu => {
                if x > T::zero() {
                    T::one()
                } else {
                    T::of(Self::LEAKY_SLOPE)
                }
            }
            Activation::Relu6 => {
                if x > T::zero() && x < T::of(6.0) {
                    T::one()
                } else {
                    T::zero()
                }
            }
            Activation::Sigmoid => y * (T::one() - y),
            Activation::None => T::one(),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Activation::Relu => "relu",
            Activation::LeakyRelu => "leaky_relu",
            Activation::Relu6 => "relu6",
            Activation::Sigmoid => "sigmoid",
            Activation::None => "none",
        }
    }
}

impl fmt::Display for Activation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Activation {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        Ok(match s {
            "relu" => Activation::Relu,
            "leaky_relu" | "leakyrelu" => Activation::LeakyRelu,
            "relu6" => Activation::Relu6,
            "sigmoid" => Activation::Sigmoid,
            "none" | "identity" => Activation::None,
            other => return Err(format!("unknown activation '{other}'")),
        })
    }
}

pub fn activation<T: Scalar>(x: &Tensor<T>, kind: Activation) -> Tensor<T> {
    if kind == Activation::None {
        return x.clone();
    }
    x.map(|v| kind.apply(v))
}

pub fn activation_backward<T: Scalar>(
    x: &Tensor<T>,
    y: &Tensor<T>,
    grad_out: &Tensor<T>,
    kind: Activation,
) -> Result<Tensor<T>> {
    if x.shape() != grad_out.shape() || y.shape() != x.shape() {
        return shape_err("activation_backward", format!("input {} vs grad {}", x.shape(), grad_out.shape()));
    }
    let mut g = grad_out.clone();
    for ((gv, &xv), &yv) in g.data_mut().iter_mut().zip(x.data()).zip(y.data()) {
        *gv *= kind.derivative(xv, yv);
    }
    Ok(g)
}
