use std::rc::Rc;

use crate::error::Result;
use crate::params::ParamStore;
use crate::scalar::Scalar;
use crate::tensor::{self, Activation, ConvSpec, PoolKind, Shape, Tensor};

/// The kernel vocabulary the network is written against.
///
/// `Tape` records each call for differentiation; `Eval` just computes and
/// lets intermediate values drop as soon as they are unused.
pub trait Graph<T: Scalar> {
    type Value: Clone;

    fn param(&mut self, name: &str) -> Result<Self::Value>;
    fn constant(&mut self, t: Tensor<T>) -> Self::Value;
    fn value<'a>(&'a self, v: &'a Self::Value) -> &'a Tensor<T>;

    fn shape(&self, v: &Self::Value) -> Shape {
        self.value(v).shape()
    }

    fn conv2d(&mut self, x: &Self::Value, w: &Self::Value, b: &Self::Value, spec: ConvSpec) -> Result<Self::Value>;
    fn add(&mut self, a: &Self::Value, b: &Self::Value) -> Result<Self::Value>;
    fn mul(&mut self, a: &Self::Value, b: &Self::Value) -> Result<Self::Value>;
    /// `x * s` with `s` of shape (n, c, 1, 1) broadcast over each plane.
    fn mul_channels(&mut self, x: &Self::Value, s: &Self::Value) -> Result<Self::Value>;
    fn scale(&mut self, x: &Self::Value, k: f64) -> Result<Self::Value>;
    fn activation(&mut self, x: &Self::Value, kind: Activation) -> Result<Self::Value>;
    fn layer_norm(&mut self, x: &Self::Value, gamma: &Self::Value, beta: &Self::Value, eps: f64)
        -> Result<Self::Value>;
    fn pixel_shuffle(&mut self, x: &Self::Value, r: usize) -> Result<Self::Value>;
    fn pool2d(&mut self, x: &Self::Value, kind: PoolKind, k: usize, stride: usize) -> Result<Self::Value>;
    fn resize_bilinear(&mut self, x: &Self::Value, h: usize, w: usize) -> Result<Self::Value>;
}

/// Tape-free evaluation.
pub struct Eval<'p, T> {
    params: &'p ParamStore<T>,
}

impl<'p, T: Scalar> Eval<'p, T> {
    pub fn new(params: &'p ParamStore<T>) -> Self {
        Eval { params }
    }
}

impl<T: Scalar> Graph<T> for Eval<'_, T> {
    type Value = Rc<Tensor<T>>;

    fn param(&mut self, name: &str) -> Result<Self::Value> {
        Ok(Rc::new(self.params.require(name)?.clone()))
    }

    fn constant(&mut self, t: Tensor<T>) -> Self::Value {
        Rc::new(t)
    }

    fn value<'a>(&'a self, v: &'a Self::Value) -> &'a Tensor<T> {
        v
    }

    fn conv2d(&mut self, x: &Self::Value, w: &Self::Value, b: &Self::Value, spec: ConvSpec) -> Result<Self::Value> {
        Ok(Rc::new(tensor::conv2d(x, w, b.data(), spec)?))
    }

    fn add(&mut self, a: &Self::Value, b: &Self::Value) -> Result<Self::Value> {
        Ok(Rc::new(a.add(b)?))
    }

    fn mul(&mut self, a: &Self::Value, b: &Self::Value) -> Result<Self::Value> {
        Ok(Rc::new(a.mul(b)?))
    }

    fn mul_channels(&mut self, x: &Self::Value, s: &Self::Value) -> Result<Self::Value> {
        Ok(Rc::new(x.mul_channels(s)?))
    }

    fn scale(&mut self, x: &Self::Value, k: f64) -> Result<Self::Value> {
        Ok(Rc::new(x.scale(T::of(k))))
    }

    fn activation(&mut self, x: &Self::Value, kind: Activation) -> Result<Self::Value> {
        Ok(Rc::new(tensor::activation(x, kind)))
    }

    fn layer_norm(&mut self, x: &Self::Value, gamma: &Self::Value, beta: &Self::Value, eps: f64)
        -> Result<Self::Value> {
        let (y, _) = tensor::layer_norm_channels(x, gamma.data(), beta.data(), T::of(eps))?;
        Ok(Rc::new(y))
    }

    fn pixel_shuffle(&mut self, x: &Self::Value, r: usize) -> Result<Self::Value> {
        Ok(Rc::new(tensor::pixel_shuffle(x, r)?))
    }

    fn pool2d(&mut self, x: &Self::Value, kind: PoolKind, k: usize, stride: usize) -> Result<Self::Value> {
        Ok(Rc::new(tensor::pool2d(x, kind, k, stride)?))
    }

    fn resize_bilinear(&mut self, x: &Self::Value, h: usize, w: usize) -> Result<Self::Value> {
        Ok(Rc::new(tensor::resize_bilinear(x, h, w)?))
    }
}
