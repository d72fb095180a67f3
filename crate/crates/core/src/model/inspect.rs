use super::{check_params, forward_features, ModelConfig};
use crate::autograd::{Eval, Graph};
use crate::error::{arg_err, Result};
use crate::params::ParamStore;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// One 8-bit grayscale mosaic of every channel of a feature map.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FeatureGrid {
    pub block: usize,
    pub cols: usize,
    pub rows: usize,
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<u8>,
}

/// `(cols, rows)` for `c` tiles: `cols = ceil(sqrt(c))`, `rows = ceil(c / cols)`.
pub fn grid_layout(c: usize) -> (usize, usize) {
    if c == 0 {
        return (0, 0);
    }
    let mut cols = (c as f64).sqrt() as usize;
    while cols * cols < c {
        cols += 1;
    }
    (cols, c.div_ceil(cols))
}

/// Tiles the channels of batch item 0 of `feat` into a grid, each channel
/// min-max stretched to `[0, 255]`. Constant channels render black; unused
/// trailing tiles stay black.
pub fn feature_grid<T: Scalar>(block: usize, feat: &Tensor<T>) -> FeatureGrid {
    let s = feat.shape();
    let (cols, rows) = grid_layout(s.c);
    let (width, height) = (cols * s.w, rows * s.h);
    let mut pixels = vec![0u8; width * height];
    for c in 0..s.c {
        let plane = feat.plane(0, c);
        let (lo, hi) = plane.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| {
            let v = v.as_f64();
            (lo.min(v), hi.max(v))
        });
        if !(hi > lo) {
            continue;
        }
        let (tx, ty) = ((c % cols) * s.w, (c / cols) * s.h);
        for y in 0..s.h {
            for x in 0..s.w {
                let v = (plane[y * s.w + x].as_f64() - lo) / (hi - lo) * 255.0;
                pixels[(ty + y) * width + tx + x] = v.round().clamp(0.0, 255.0) as u8;
            }
        }
    }
    FeatureGrid { block, cols, rows, width, height, pixels }
}

/// Feature grids for the requested block outputs; index 0 is the shallow
/// feature map and `i` the output of block `i`.
pub fn dump_feature_maps<T: Scalar>(
    cfg: &ModelConfig,
    params: &ParamStore<T>,
    x: &Tensor<T>,
    block_indices: &[usize],
) -> Result<Vec<FeatureGrid>> {
    if let Some(&bad) = block_indices.iter().find(|&&i| i > cfg.num_blocks) {
        return arg_err("dump_feature_maps", format!("block index {bad} outside [0, {}]", cfg.num_blocks));
    }
    check_params(cfg, params)?;
    let mut g = Eval::new(params);
    let xv = g.constant(x.clone());
    let (feats, _) = forward_features(&mut g, cfg, &xv)?;
    Ok(block_indices.iter().map(|&i| feature_grid(i, &feats[i])).collect())
}
