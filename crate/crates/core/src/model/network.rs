//! Forward pass of the network, written once against [`Graph`].

use super::config::LN_EPS;
use super::{layers, FuseMode, ModelConfig, ResidualPosition};
use crate::autograd::{Eval, Graph};
use crate::error::{shape_err, Result};
use crate::params::ParamStore;
use crate::scalar::Scalar;
use crate::tensor::{Activation, ConvSpec, PoolKind, Tensor};

/// Smallest spatial side the ESA reduction chain accepts.
pub const ESA_MIN_SIDE: usize = 8;
/// Max-pool window of the ESA chain; clamped to the downsampled map.
pub const ESA_POOL: usize = 7;
pub const ESA_POOL_STRIDE: usize = 3;

fn conv<T: Scalar, G: Graph<T>>(g: &mut G, name: &str, x: &G::Value, spec: ConvSpec) -> Result<G::Value> {
    let w = g.param(&format!("{name}.weight"))?;
    let b = g.param(&format!("{name}.bias"))?;
    g.conv2d(x, &w, &b, spec)
}

/// Spatial sizes inside ESA: `(after stride-2 conv, pool window, after pool)`.
pub fn esa_geometry(h: usize, w: usize) -> Option<((usize, usize), usize, (usize, usize))> {
    if h < ESA_MIN_SIDE || w < ESA_MIN_SIDE {
        return None;
    }
    let (h1, w1) = ((h - 3) / 2 + 1, (w - 3) / 2 + 1);
    let k = ESA_POOL.min(h1).min(w1);
    let (h2, w2) = ((h1 - k) / ESA_POOL_STRIDE + 1, (w1 - k) / ESA_POOL_STRIDE + 1);
    Some(((h1, w1), k, (h2, w2)))
}

/// Enhanced spatial attention: a sigmoid mask computed from a reduced,
/// strided, pooled view of `x`, applied elementwise to `x`.
pub fn esa_forward<T: Scalar, G: Graph<T>>(g: &mut G, prefix: &str, x: &G::Value) -> Result<G::Value> {
    let s = g.shape(x);
    let Some((_, pool_k, _)) = esa_geometry(s.h, s.w) else {
        return shape_err(
            "esa_forward",
            format!("spatial size {}x{} below the ESA minimum of {ESA_MIN_SIDE}x{ESA_MIN_SIDE}", s.h, s.w),
        );
    };
    let p = |n: &str| format!("{prefix}.{n}");
    let c1 = conv(g, &p("conv_in"), x, ConvSpec::pointwise())?;
    let down = conv(g, &p("conv_down"), &c1, ConvSpec::new(2, 0, 1))?;
    let pooled = g.pool2d(&down, PoolKind::Max, pool_k, ESA_POOL_STRIDE)?;
    let a = conv(g, &p("conv_a"), &pooled, ConvSpec::same(3))?;
    let a = g.activation(&a, Activation::Relu)?;
    let b = conv(g, &p("conv_b"), &a, ConvSpec::same(3))?;
    let up = g.resize_bilinear(&b, s.h, s.w)?;
    let skip = conv(g, &p("conv_skip"), &c1, ConvSpec::pointwise())?;
    let sum = g.add(&up, &skip)?;
    let m = conv(g, &p("conv_out"), &sum, ConvSpec::pointwise())?;
    let m = g.activation(&m, Activation::Sigmoid)?;
    g.mul(x, &m)
}

/// Channel attention block: a narrowing 3x3 conv pair, gated per channel by
/// squeeze-excite attention, added back onto `x`.
pub fn cab_forward<T: Scalar, G: Graph<T>>(
    g: &mut G,
    prefix: &str,
    act: Activation,
    x: &G::Value,
) -> Result<G::Value> {
    let p = |n: &str| format!("{prefix}.{n}");
    let y = conv(g, &p("conv1"), x, ConvSpec::same(3))?;
    let y = g.activation(&y, act)?;
    let y = conv(g, &p("conv2"), &y, ConvSpec::same(3))?;
    let pooled = g.pool2d(&y, PoolKind::GlobalAvg, 0, 0)?;
    let z = conv(g, &p("squeeze"), &pooled, ConvSpec::pointwise())?;
    let z = g.activation(&z, Activation::Relu)?;
    let z = conv(g, &p("excite"), &z, ConvSpec::pointwise())?;
    let z = g.activation(&z, Activation::Sigmoid)?;
    let y = g.mul_channels(&y, &z)?;
    g.add(x, &y)
}

fn dw_sep<T: Scalar, G: Graph<T>>(g: &mut G, cfg: &ModelConfig, name: &str, x: &G::Value) -> Result<G::Value> {
    let y = conv(g, name, x, ConvSpec::depthwise(cfg.dw_kernel, cfg.dim))?;
    if cfg.dw_pointwise {
        return conv(g, &format!("{name}_pw"), &y, ConvSpec::pointwise());
    }
    Ok(y)
}

/// One hybrid attention separable block.
pub fn hasb_forward<T: Scalar, G: Graph<T>>(
    g: &mut G,
    cfg: &ModelConfig,
    index: usize,
    x: &G::Value,
) -> Result<G::Value> {
    let s = g.shape(x);
    if s.c != cfg.dim {
        return shape_err("hasb_forward", format!("input has {} channels, block expects dim={}", s.c, cfg.dim));
    }
    let p = |n: &str| format!("blocks.{index}.{n}");
    let d = dw_sep(g, cfg, &p("dw1"), x)?;
    let gamma = g.param(&p("norm.weight"))?;
    let beta = g.param(&p("norm.bias"))?;
    let fo = g.layer_norm(&d, &gamma, &beta, LN_EPS)?;

    let d1 = conv(g, &p("fc1"), &fo, ConvSpec::pointwise())?;
    let d2 = conv(g, &p("fc2"), &fo, ConvSpec::pointwise())?;
    let gate = g.activation(&d1, cfg.gate_activation)?;
    let mut fused = match cfg.fuse_mode {
        FuseMode::Multiply => g.mul(&gate, &d2)?,
        FuseMode::Add => g.add(&gate, &d2)?,
    };
    if cfg.third_branch {
        let d3 = conv(g, &p("fc3"), &fo, ConvSpec::pointwise())?;
        let d3 = if cfg.use_esa { esa_forward(g, &p("esa"), &d3)? } else { d3 };
        fused = g.add(&fused, &d3)?;
    }
    let h = conv(g, &p("fc_out"), &fused, ConvSpec::pointwise())?;
    let out = match cfg.block_residual_position {
        ResidualPosition::AfterDwConv => {
            let y = dw_sep(g, cfg, &p("dw2"), &h)?;
            g.add(&y, x)?
        }
        ResidualPosition::BeforeDwConv => {
            let y = g.add(&h, x)?;
            dw_sep(g, cfg, &p("dw2"), &y)?
        }
    };
    if cfg.use_cab {
        return cab_forward(g, &p("cab"), cfg.gate_activation, &out);
    }
    Ok(out)
}

/// Full forward pass. Returns the shallow features `F_0`, each block output
/// `F_1..F_K`, and the super-resolved image.
pub fn forward_features<T: Scalar, G: Graph<T>>(
    g: &mut G,
    cfg: &ModelConfig,
    x: &G::Value,
) -> Result<(Vec<G::Value>, G::Value)> {
    let s = g.shape(x);
    if s.c != 3 {
        return shape_err("forward", format!("input must have 3 channels, got {}", s.c));
    }
    if cfg.use_esa && cfg.num_blocks > 0 && (s.h < ESA_MIN_SIDE || s.w < ESA_MIN_SIDE) {
        return shape_err(
            "forward",
            format!("input {}x{} smaller than the {ESA_MIN_SIDE}x{ESA_MIN_SIDE} minimum", s.h, s.w),
        );
    }
    let f0 = conv(g, "head", x, ConvSpec::same(3))?;
    let mut feats = vec![f0.clone()];
    let mut f = f0.clone();
    for i in 0..cfg.num_blocks {
        let y = hasb_forward(g, cfg, i, &f)?;
        f = if cfg.per_block_residual { g.add(&y, &f)? } else { y };
        feats.push(f.clone());
    }
    let fdf = conv(g, "trunk", &f, ConvSpec::same(3))?;
    let r = g.add(&fdf, &f0)?;
    let r = conv(g, "recon", &r, ConvSpec::same(3))?;
    let out = g.pixel_shuffle(&r, cfg.scale)?;
    Ok((feats, out))
}

pub fn forward<T: Scalar, G: Graph<T>>(g: &mut G, cfg: &ModelConfig, x: &G::Value) -> Result<G::Value> {
    Ok(forward_features(g, cfg, x)?.1)
}

/// Tape-free inference on an `(n, 3, h, w)` batch.
pub fn infer<T: Scalar>(cfg: &ModelConfig, params: &ParamStore<T>, x: &Tensor<T>) -> Result<Tensor<T>> {
    layers::check_params(cfg, params)?;
    let mut g = Eval::new(params);
    let xv = g.constant(x.clone());
    let y = forward(&mut g, cfg, &xv)?;
    Ok(std::rc::Rc::try_unwrap(y).unwrap_or_else(|rc| (*rc).clone()))
}
