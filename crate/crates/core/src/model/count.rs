//! Analytic parameter and multiply-accumulate accounting.
//!
//! Convolutions cost `k^2 * (c_in/groups) * c_out * h_out * w_out` MACs, FC
//! layers are 1x1 convolutions, and the pooling/resize steps inside the
//! attention branches cost one MAC per output element. Biases, norms and
//! pointwise nonlinearities are not counted.

use super::network::{ESA_POOL, ESA_POOL_STRIDE};
use super::{layer_table, LayerKind, ModelConfig};

pub fn count_params(cfg: &ModelConfig) -> u64 {
    layer_table(cfg).iter().map(|l| l.param_count() as u64).sum()
}

fn group_of(name: &str) -> String {
    match name.split('.').collect::<Vec<_>>().as_slice() {
        ["blocks", i, sub, ..] if sub.starts_with("esa") || sub.starts_with("cab") => format!("blocks.{i}.{sub}"),
        ["blocks", i, ..] => format!("blocks.{i}.body"),
        [top, ..] => (*top).to_string(),
        [] => String::new(),
    }
}

/// Parameter totals per group (`head`, `blocks.<i>.body`, `blocks.<i>.esa`,
/// `blocks.<i>.cab`, `trunk`, `recon`) in order of first appearance.
pub fn param_breakdown(cfg: &ModelConfig) -> Vec<(String, u64)> {
    let mut out: Vec<(String, u64)> = Vec::new();
    for l in layer_table(cfg) {
        let g = group_of(&l.name);
        let n = l.param_count() as u64;
        match out.iter_mut().find(|(name, _)| *name == g) {
            Some((_, acc)) => *acc += n,
            None => out.push((g, n)),
        }
    }
    out
}

/// ESA spatial sizes without the minimum-size guard, for accounting at any
/// resolution.
fn esa_sizes(h: usize, w: usize) -> ((usize, usize), (usize, usize)) {
    let h1 = h.saturating_sub(3) / 2 + 1;
    let w1 = w.saturating_sub(3) / 2 + 1;
    let k = ESA_POOL.min(h1).min(w1);
    ((h1, w1), ((h1 - k) / ESA_POOL_STRIDE + 1, (w1 - k) / ESA_POOL_STRIDE + 1))
}

/// Per-layer MACs for one forward pass producing an `out_h x out_w` image.
pub fn flops_breakdown(cfg: &ModelConfig, out_h: usize, out_w: usize) -> Vec<(String, u64)> {
    let (h, w) = ((out_h / cfg.scale).max(1), (out_w / cfg.scale).max(1));
    let full = (h * w) as u64;
    let ((h1, w1), (h2, w2)) = esa_sizes(h, w);
    let (down, pooled) = ((h1 * w1) as u64, (h2 * w2) as u64);
    let mut out = Vec::new();
    for l in layer_table(cfg) {
        let LayerKind::Conv { cin, cout, k, groups } = l.kind else {
            continue;
        };
        let per_site = (k * k * (cin / groups) * cout) as u64;
        let sites = if l.name.ends_with("esa.conv_down") {
            down
        } else if l.name.ends_with("esa.conv_a") || l.name.ends_with("esa.conv_b") {
            pooled
        } else if l.name.ends_with("cab.squeeze") || l.name.ends_with("cab.excite") {
            1
        } else {
            full
        };
        out.push((l.name.clone(), per_site * sites));
        if l.name.ends_with("esa.conv_down") {
            let f = cout as u64;
            let prefix = l.name.trim_end_matches("conv_down");
            out.push((format!("{prefix}pool"), f * pooled));
            out.push((format!("{prefix}resize"), f * full));
        }
        if l.name.ends_with("cab.conv2") {
            let prefix = l.name.trim_end_matches("conv2");
            out.push((format!("{prefix}global_pool"), cout as u64));
        }
    }
    out
}

/// Total MACs for one image of the given output size (batch 1).
pub fn count_flops(cfg: &ModelConfig, out_h: usize, out_w: usize) -> u64 {
    flops_breakdown(cfg, out_h, out_w).iter().map(|(_, m)| m).sum()
}
