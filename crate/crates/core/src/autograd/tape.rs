use indexmap::IndexMap;

use super::Graph;
use crate::error::{Error, Result};
use crate::loss;
use crate::params::ParamStore;
use crate::scalar::Scalar;
use crate::tensor::{self, Activation, ConvSpec, LayerNormSaved, PoolKind, Shape, Tensor};

/// Handle to a node recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Accumulated gradients keyed by parameter name.
pub type GradMap<T> = ParamStore<T>;

enum Op<T> {
    Constant,
    Param(String),
    Conv { x: Var, w: Var, b: Var, spec: ConvSpec },
    Add(Var, Var),
    Mul(Var, Var),
    MulChannels { x: Var, s: Var },
    Scale(Var, T),
    Act { x: Var, kind: Activation },
    LayerNorm { x: Var, gamma: Var, beta: Var, saved: LayerNormSaved<T> },
    PixelShuffle { x: Var, r: usize },
    Pool { x: Var, kind: PoolKind, k: usize, stride: usize },
    Resize { x: Var },
    Sum(Var),
    Mean(Var),
    L1 { sr: Var, hr: Tensor<T> },
    Kl { sr: Var, hr: Tensor<T>, eps: f64 },
    /// A value produced by a kernel with no backward rule.
    Opaque { kernel: &'static str },
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    needs_grad: bool,
}

/// Append-only record of kernel calls. Nodes are topologically ordered by
/// construction; [`Tape::backward`] walks them in reverse append order.
///
/// Parameter gradients accumulate across `backward` calls until
/// [`Tape::zero_grad`].
pub struct Tape<'p, T> {
    params: &'p ParamStore<T>,
    nodes: Vec<Node<T>>,
    param_vars: IndexMap<String, Var>,
    grads: GradMap<T>,
}

impl<'p, T: Scalar> Tape<'p, T> {
    pub fn new(params: &'p ParamStore<T>) -> Self {
        Tape { params, nodes: Vec::new(), param_vars: IndexMap::new(), grads: params.zeros_like() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn grads(&self) -> &GradMap<T> {
        &self.grads
    }

    pub fn into_grads(self) -> GradMap<T> {
        self.grads
    }

    pub fn zero_grad(&mut self) {
        self.grads = self.params.zeros_like();
    }

    fn node(&self, v: Var) -> Result<&Node<T>> {
        self.nodes
            .get(v.0)
            .ok_or_else(|| Error::Autograd(format!("dangling node id {} (tape has {} nodes)", v.0, self.nodes.len())))
    }

    fn val(&self, v: Var) -> Result<&Tensor<T>> {
        Ok(&self.node(v)?.value)
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, inputs: &[Var]) -> Var {
        let needs_grad = match &op {
            Op::Constant => false,
            Op::Param(_) => true,
            _ => inputs.iter().any(|v| self.nodes[v.0].needs_grad),
        };
        self.nodes.push(Node { value, op, needs_grad });
        Var(self.nodes.len() - 1)
    }

    pub fn value_of(&self, v: Var) -> Result<&Tensor<T>> {
        self.val(v)
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let s = self.val(x)?.sum();
        Ok(self.push(Tensor::scalar(s), Op::Sum(x), &[x]))
    }

    pub fn mean(&mut self, x: Var) -> Result<Var> {
        let s = self.val(x)?.mean();
        Ok(self.push(Tensor::scalar(s), Op::Mean(x), &[x]))
    }

    pub fn l1_loss(&mut self, sr: Var, hr: &Tensor<T>) -> Result<Var> {
        let l = loss::l1_loss(self.val(sr)?, hr)?;
        Ok(self.push(Tensor::scalar(l), Op::L1 { sr, hr: hr.clone() }, &[sr]))
    }

    pub fn kl_loss(&mut self, sr: Var, hr: &Tensor<T>, eps: f64) -> Result<Var> {
        let l = loss::kl_loss(self.val(sr)?, hr, eps)?;
        Ok(self.push(Tensor::scalar(l), Op::Kl { sr, hr: hr.clone(), eps }, &[sr]))
    }

    /// `alpha * L1 + beta * KL`; with `beta == 0` no KL node is recorded.
    pub fn stage2_loss(&mut self, sr: Var, hr: &Tensor<T>, w: &loss::LossWeights) -> Result<Var> {
        w.validate()?;
        let l1 = self.l1_loss(sr, hr)?;
        let l1 = self.scale(&l1, w.alpha)?;
        if w.beta == 0.0 {
            return Ok(l1);
        }
        let kl = self.kl_loss(sr, hr, w.kl_epsilon)?;
        let kl = self.scale(&kl, w.beta)?;
        self.add(&l1, &kl)
    }

    /// Records a value computed outside the differentiable vocabulary.
    /// Backward fails if any gradient has to flow through it.
    pub fn opaque(&mut self, kernel: &'static str, inputs: &[Var], value: Tensor<T>) -> Var {
        self.push(value, Op::Opaque { kernel }, inputs)
    }

    /// Accumulates d(loss)/d(param) into the gradient map and returns it.
    /// Parameters the loss does not depend on keep zero gradients.
    pub fn backward(&mut self, loss: Var) -> Result<&GradMap<T>> {
        let shape = self.node(loss)?.value.shape();
        if shape != Shape::scalar() {
            return Err(Error::Autograd(format!("loss must be a (1, 1, 1, 1) scalar, got {shape}")));
        }
        let mut grads: Vec<Option<Tensor<T>>> = (0..=loss.0).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::scalar(T::one()));

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.needs_grad {
                continue;
            }
            let mut send = |v: Var, t: Tensor<T>| -> Result<()> {
                if !self.nodes[v.0].needs_grad {
                    return Ok(());
                }
                match &mut grads[v.0] {
                    Some(acc) => acc.add_assign(&t),
                    slot @ None => {
                        *slot = Some(t);
                        Ok(())
                    }
                }
            };
            match &node.op {
                Op::Constant => {}
                Op::Param(name) => {
                    let slot = self.grads.get_mut(name).ok_or_else(|| Error::MissingParams(vec![name.clone()]))?;
                    slot.add_assign(&g)?;
                }
                Op::Conv { x, w, b, spec } => {
                    let (gx, gw, gb) = tensor::conv2d_backward(&self.nodes[x.0].value, &self.nodes[w.0].value, &g, *spec)?;
                    let bshape = self.nodes[b.0].value.shape();
                    send(*x, gx)?;
                    send(*w, gw)?;
                    send(*b, Tensor::from_vec(bshape, gb)?)?;
                }
                Op::Add(a, b) => {
                    send(*a, g.clone())?;
                    send(*b, g)?;
                }
                Op::Mul(a, b) => {
                    let ga = g.mul(&self.nodes[b.0].value)?;
                    let gb = g.mul(&self.nodes[a.0].value)?;
                    send(*a, ga)?;
                    send(*b, gb)?;
                }
                Op::MulChannels { x, s } => {
                    let sv = &self.nodes[s.0].value;
                    let xv = &self.nodes[x.0].value;
                    let gx = g.mul_channels(sv)?;
                    let xs = xv.shape();
                    let mut gs = Tensor::zeros(sv.shape());
                    for n in 0..xs.n {
                        for c in 0..xs.c {
                            let d: T = g.plane(n, c).iter().zip(xv.plane(n, c)).map(|(&a, &b)| a * b).sum();
                            gs.set(n, c, 0, 0, d);
                        }
                    }
                    send(*x, gx)?;
                    send(*s, gs)?;
                }
                Op::Scale(x, k) => send(*x, g.scale(*k))?,
                Op::Act { x, kind } => {
                    let gx = tensor::activation_backward(&self.nodes[x.0].value, &node.value, &g, *kind)?;
                    send(*x, gx)?;
                }
                Op::LayerNorm { x, gamma, beta, saved } => {
                    let gv = &self.nodes[gamma.0].value;
                    let (gx, gg, gb) = tensor::layer_norm_channels_backward(saved, gv.data(), &g)?;
                    let (gs, bs) = (gv.shape(), self.nodes[beta.0].value.shape());
                    send(*x, gx)?;
                    send(*gamma, Tensor::from_vec(gs, gg)?)?;
                    send(*beta, Tensor::from_vec(bs, gb)?)?;
                }
                Op::PixelShuffle { x, r } => send(*x, tensor::pixel_unshuffle(&g, *r)?)?,
                Op::Pool { x, kind, k, stride } => {
                    send(*x, tensor::pool2d_backward(&self.nodes[x.0].value, &g, *kind, *k, *stride)?)?;
                }
                Op::Resize { x } => {
                    send(*x, tensor::resize_bilinear_backward(self.nodes[x.0].value.shape(), &g)?)?;
                }
                Op::Sum(x) => {
                    let gv = g.data()[0];
                    send(*x, Tensor::full(self.nodes[x.0].value.shape(), gv))?;
                }
                Op::Mean(x) => {
                    let xs = self.nodes[x.0].value.shape();
                    let gv = g.data()[0] / T::of(xs.numel() as f64);
                    send(*x, Tensor::full(xs, gv))?;
                }
                Op::L1 { sr, hr } => {
                    let gs = loss::l1_loss_grad(&self.nodes[sr.0].value, hr)?.scale(g.data()[0]);
                    send(*sr, gs)?;
                }
                Op::Kl { sr, hr, eps } => {
                    let gs = loss::kl_loss_grad(&self.nodes[sr.0].value, hr, *eps)?.scale(g.data()[0]);
                    send(*sr, gs)?;
                }
                Op::Opaque { kernel, .. } => {
                    return Err(Error::Autograd(format!(
                        "kernel '{kernel}' has no registered backward rule but lies on a gradient path"
                    )));
                }
            }
        }
        Ok(&self.grads)
    }
}

impl<T: Scalar> Graph<T> for Tape<'_, T> {
    type Value = Var;

    fn param(&mut self, name: &str) -> Result<Var> {
        if let Some(&v) = self.param_vars.get(name) {
            return Ok(v);
        }
        let t = self.params.require(name)?.clone();
        let v = self.push(t, Op::Param(name.to_string()), &[]);
        self.param_vars.insert(name.to_string(), v);
        Ok(v)
    }

    fn constant(&mut self, t: Tensor<T>) -> Var {
        self.push(t, Op::Constant, &[])
    }

    fn value<'a>(&'a self, v: &'a Var) -> &'a Tensor<T> {
        &self.nodes[v.0].value
    }

    fn conv2d(&mut self, x: &Var, w: &Var, b: &Var, spec: ConvSpec) -> Result<Var> {
        let y = tensor::conv2d(self.val(*x)?, self.val(*w)?, self.val(*b)?.data(), spec)?;
        Ok(self.push(y, Op::Conv { x: *x, w: *w, b: *b, spec }, &[*x, *w, *b]))
    }

    fn add(&mut self, a: &Var, b: &Var) -> Result<Var> {
        let y = self.val(*a)?.add(self.val(*b)?)?;
        Ok(self.push(y, Op::Add(*a, *b), &[*a, *b]))
    }

    fn mul(&mut self, a: &Var, b: &Var) -> Result<Var> {
        let y = self.val(*a)?.mul(self.val(*b)?)?;
        Ok(self.push(y, Op::Mul(*a, *b), &[*a, *b]))
    }

    fn mul_channels(&mut self, x: &Var, s: &Var) -> Result<Var> {
        let y = self.val(*x)?.mul_channels(self.val(*s)?)?;
        Ok(self.push(y, Op::MulChannels { x: *x, s: *s }, &[*x, *s]))
    }

    fn scale(&mut self, x: &Var, k: f64) -> Result<Var> {
        let k = T::of(k);
        let y = self.val(*x)?.scale(k);
        Ok(self.push(y, Op::Scale(*x, k), &[*x]))
    }

    fn activation(&mut self, x: &Var, kind: Activation) -> Result<Var> {
        let y = tensor::activation(self.val(*x)?, kind);
        Ok(self.push(y, Op::Act { x: *x, kind }, &[*x]))
    }

    fn layer_norm(&mut self, x: &Var, gamma: &Var, beta: &Var, eps: f64) -> Result<Var> {
        let (y, saved) =
            tensor::layer_norm_channels(self.val(*x)?, self.val(*gamma)?.data(), self.val(*beta)?.data(), T::of(eps))?;
        Ok(self.push(y, Op::LayerNorm { x: *x, gamma: *gamma, beta: *beta, saved }, &[*x, *gamma, *beta]))
    }

    fn pixel_shuffle(&mut self, x: &Var, r: usize) -> Result<Var> {
        let y = tensor::pixel_shuffle(self.val(*x)?, r)?;
        Ok(self.push(y, Op::PixelShuffle { x: *x, r }, &[*x]))
    }

    fn pool2d(&mut self, x: &Var, kind: PoolKind, k: usize, stride: usize) -> Result<Var> {
        let y = tensor::pool2d(self.val(*x)?, kind, k, stride)?;
        Ok(self.push(y, Op::Pool { x: *x, kind, k, stride }, &[*x]))
    }

    fn resize_bilinear(&mut self, x: &Var, h: usize, w: usize) -> Result<Var> {
        let y = tensor::resize_bilinear(self.val(*x)?, h, w)?;
        Ok(self.push(y, Op::Resize { x: *x }, &[*x]))
    }
}
