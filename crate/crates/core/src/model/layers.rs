//! The network's parameterized layers as a flat table. Initialization,
//! parameter validation and the analytic parameter count all read it.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::ModelConfig;
use crate::error::{Error, Result};
use crate::params::ParamStore;
use crate::scalar::Scalar;
use crate::tensor::{Shape, Tensor};

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum LayerKind {
    Conv { cin: usize, cout: usize, k: usize, groups: usize },
    /// Channel layer norm with per-channel gamma/beta.
    Norm { c: usize },
}

#[derive(Clone, Debug, PartialEq)]
pub struct LayerSpec {
    pub name: String,
    pub kind: LayerKind,
}

impl LayerSpec {
    fn conv(name: String, cin: usize, cout: usize, k: usize, groups: usize) -> Self {
        LayerSpec { name, kind: LayerKind::Conv { cin, cout, k, groups } }
    }

    pub fn weight_shape(&self) -> Shape {
        match self.kind {
            LayerKind::Conv { cin, cout, k, groups } => Shape::new(cout, cin / groups, k, k),
            LayerKind::Norm { c } => Shape::new(c, 1, 1, 1),
        }
    }

    pub fn bias_shape(&self) -> Shape {
        match self.kind {
            LayerKind::Conv { cout, .. } => Shape::new(cout, 1, 1, 1),
            LayerKind::Norm { c } => Shape::new(c, 1, 1, 1),
        }
    }

    pub fn param_count(&self) -> usize {
        self.weight_shape().numel() + self.bias_shape().numel()
    }

    pub fn weight_name(&self) -> String {
        format!("{}.weight", self.name)
    }

    pub fn bias_name(&self) -> String {
        format!("{}.bias", self.name)
    }
}

pub fn block_layers(cfg: &ModelConfig, i: usize) -> Vec<LayerSpec> {
    let c = cfg.dim;
    let h = cfg.hidden();
    let k = cfg.dw_kernel;
    let p = |s: &str| format!("blocks.{i}.{s}");
    let mut v = vec![LayerSpec::conv(p("dw1"), c, c, k, c)];
    if cfg.dw_pointwise {
        v.push(LayerSpec::conv(p("dw1_pw"), c, c, 1, 1));
    }
    v.push(LayerSpec { name: p("norm"), kind: LayerKind::Norm { c } });
    v.push(LayerSpec::conv(p("fc1"), c, h, 1, 1));
    v.push(LayerSpec::conv(p("fc2"), c, h, 1, 1));
    if cfg.third_branch {
        v.push(LayerSpec::conv(p("fc3"), c, h, 1, 1));
    }
    if cfg.use_esa {
        let f = cfg.esa_channels();
        v.push(LayerSpec::conv(p("esa.conv_in"), h, f, 1, 1));
        v.push(LayerSpec::conv(p("esa.conv_down"), f, f, 3, 1));
        v.push(LayerSpec::conv(p("esa.conv_a"), f, f, 3, 1));
        v.push(LayerSpec::conv(p("esa.conv_b"), f, f, 3, 1));
        v.push(LayerSpec::conv(p("esa.conv_skip"), f, f, 1, 1));
        v.push(LayerSpec::conv(p("esa.conv_out"), f, h, 1, 1));
    }
    v.push(LayerSpec::conv(p("fc_out"), h, c, 1, 1));
    v.push(LayerSpec::conv(p("dw2"), c, c, k, c));
    if cfg.dw_pointwise {
        v.push(LayerSpec::conv(p("dw2_pw"), c, c, 1, 1));
    }
    if cfg.use_cab {
        let m = c / cfg.cab_reduction;
        let s = c / cfg.ca_reduction;
        v.push(LayerSpec::conv(p("cab.conv1"), c, m, 3, 1));
        v.push(LayerSpec::conv(p("cab.conv2"), m, c, 3, 1));
        v.push(LayerSpec::conv(p("cab.squeeze"), c, s, 1, 1));
        v.push(LayerSpec::conv(p("cab.excite"), s, c, 1, 1));
    }
    v
}

/// Every parameterized layer in forward order.
pub fn layer_table(cfg: &ModelConfig) -> Vec<LayerSpec> {
    let c = cfg.dim;
    let mut v = vec![LayerSpec::conv("head".into(), 3, c, 3, 1)];
    for i in 0..cfg.num_blocks {
        v.extend(block_layers(cfg, i));
    }
    v.push(LayerSpec::conv("trunk".into(), c, c, 3, 1));
    v.push(LayerSpec::conv("recon".into(), c, 3 * cfg.scale * cfg.scale, 3, 1));
    v
}

/// Conv weights uniform in `±1/sqrt(fan_in)`, zero biases, unit LN gamma
/// and zero beta.
pub fn init_params<T: Scalar>(cfg: &ModelConfig, seed: u64) -> Result<ParamStore<T>> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut store = ParamStore::new();
    for layer in layer_table(cfg) {
        let ws = layer.weight_shape();
        let w = match layer.kind {
            LayerKind::Conv { .. } => {
                let fan_in = (ws.c * ws.h * ws.w) as f64;
                let bound = fan_in.sqrt().recip();
                let data = (0..ws.numel()).map(|_| T::of(rng.gen_range(-bound..bound))).collect();
                Tensor::from_vec(ws, data)?
            }
            LayerKind::Norm { .. } => Tensor::full(ws, T::one()),
        };
        store.insert(layer.weight_name(), w);
        store.insert(layer.bias_name(), Tensor::zeros(layer.bias_shape()));
    }
    Ok(store)
}

/// Checks that `params` holds every tensor the config needs with the right
/// shape. Missing names are reported together.
pub fn check_params<T: Scalar>(cfg: &ModelConfig, params: &ParamStore<T>) -> Result<()> {
    let mut missing = Vec::new();
    for layer in layer_table(cfg) {
        for (name, shape) in [(layer.weight_name(), layer.weight_shape()), (layer.bias_name(), layer.bias_shape())] {
            match params.get(&name) {
                None => missing.push(name),
                Some(t) if t.shape() != shape => {
                    return Err(Error::Shape {
                        op: "check_params",
                        detail: format!("{name} has shape {}, config expects {shape}", t.shape()),
                    })
                }
                Some(_) => {}
            }
        }
    }
    if missing.is_empty() {
        Ok(())
    } else {
        Err(Error::MissingParams(missing))
    }
}
