//! Direct-loop reference implementations used as test oracles. They work on
//! a plain 4-D array type and never call the library's kernels.
#![allow(dead_code)]

pub mod sweeps;

use hasn::model::ModelConfig;
use hasn::{ParamStore, Shape, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[derive(Clone, Debug, PartialEq)]
pub struct Arr {
    pub n: usize,
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub v: Vec<f64>,
}

impl Arr {
    pub fn zeros(n: usize, c: usize, h: usize, w: usize) -> Self {
        Arr { n, c, h, w, v: vec![0.0; n * c * h * w] }
    }

    pub fn idx(&self, n: usize, c: usize, y: usize, x: usize) -> usize {
        ((n * self.c + c) * self.h + y) * self.w + x
    }

    pub fn get(&self, n: usize, c: usize, y: usize, x: usize) -> f64 {
        self.v[self.idx(n, c, y, x)]
    }

    pub fn put(&mut self, n: usize, c: usize, y: usize, x: usize, val: f64) {
        let i = self.idx(n, c, y, x);
        self.v[i] = val;
    }

    pub fn from_t(t: &Tensor<f64>) -> Self {
        let s = t.shape();
        Arr { n: s.n, c: s.c, h: s.h, w: s.w, v: t.data().to_vec() }
    }

    pub fn to_t(&self) -> Tensor<f64> {
        Tensor::from_vec(Shape::new(self.n, self.c, self.h, self.w), self.v.clone()).unwrap()
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Arr { v: self.v.iter().map(|&x| f(x)).collect(), ..self.clone() }
    }

    pub fn zip(&self, o: &Arr, f: impl Fn(f64, f64) -> f64) -> Self {
        assert_eq!((self.n, self.c, self.h, self.w), (o.n, o.c, o.h, o.w));
        Arr { v: self.v.iter().zip(&o.v).map(|(&a, &b)| f(a, b)).collect(), ..self.clone() }
    }
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn rand_t<R: Rng>(r: &mut R, s: Shape, lo: f64, hi: f64) -> Tensor<f64> {
    let v = (0..s.numel()).map(|_| r.gen_range(lo..hi)).collect();
    Tensor::from_vec(s, v).unwrap()
}

/// Largest elementwise |a-b| / max(1, |b|).
pub fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len(), "length mismatch");
    assert!(a.iter().chain(b).all(|v| v.is_finite()), "non-finite value");
    a.iter().zip(b).map(|(x, y)| (x - y).abs() / y.abs().max(1.0)).fold(0.0, f64::max)
}

/// Zero-padded strided grouped cross-correlation.
pub fn conv_ref(x: &Arr, w: &Arr, b: &[f64], stride: usize, pad: usize, groups: usize) -> Arr {
    let (co, cig, k) = (w.n, w.c, w.h);
    let oh = (x.h + 2 * pad - k) / stride + 1;
    let ow = (x.w + 2 * pad - k) / stride + 1;
    let cog = co / groups;
    let mut out = Arr::zeros(x.n, co, oh, ow);
    for n in 0..x.n {
        for o in 0..co {
            let g = o / cog;
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut acc = b[o];
                    for ci in 0..cig {
                        let c = g * cig + ci;
                        for ky in 0..k {
                            for kx in 0..w.w {
                                let iy = (oy * stride + ky) as isize - pad as isize;
                                let ix = (ox * stride + kx) as isize - pad as isize;
                                if iy >= 0 && ix >= 0 && (iy as usize) < x.h && (ix as usize) < x.w {
                                    acc += w.get(o, ci, ky, kx) * x.get(n, c, iy as usize, ix as usize);
                                }
                            }
                        }
                    }
                    out.put(n, o, oy, ox, acc);
                }
            }
        }
    }
    out
}

pub fn max_pool_ref(x: &Arr, k: usize, s: usize) -> Arr {
    let (oh, ow) = ((x.h - k) / s + 1, (x.w - k) / s + 1);
    let mut out = Arr::zeros(x.n, x.c, oh, ow);
    for n in 0..x.n {
        for c in 0..x.c {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut m = f64::NEG_INFINITY;
                    for dy in 0..k {
                        for dx in 0..k {
                            m = m.max(x.get(n, c, oy * s + dy, ox * s + dx));
                        }
                    }
                    out.put(n, c, oy, ox, m);
                }
            }
        }
    }
    out
}

pub fn avg_pool_ref(x: &Arr, k: usize, s: usize) -> Arr {
    let (oh, ow) = ((x.h - k) / s + 1, (x.w - k) / s + 1);
    let mut out = Arr::zeros(x.n, x.c, oh, ow);
    for n in 0..x.n {
        for c in 0..x.c {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut t = 0.0;
                    for dy in 0..k {
                        for dx in 0..k {
                            t += x.get(n, c, oy * s + dy, ox * s + dx);
                        }
                    }
                    out.put(n, c, oy, ox, t / (k * k) as f64);
                }
            }
        }
    }
    out
}

pub fn gap_ref(x: &Arr) -> Arr {
    let mut out = Arr::zeros(x.n, x.c, 1, 1);
    for n in 0..x.n {
        for c in 0..x.c {
            let mut t = 0.0;
            for y in 0..x.h {
                for xx in 0..x.w {
                    t += x.get(n, c, y, xx);
                }
            }
            out.put(n, c, 0, 0, t / (x.h * x.w) as f64);
        }
    }
    out
}

/// Bilinear resize with half-pixel centres; source coordinates below zero
/// snap to zero and the upper neighbour is clamped to the last pixel.
pub fn bilinear_ref(x: &Arr, oh: usize, ow: usize) -> Arr {
    let mut out = Arr::zeros(x.n, x.c, oh, ow);
    let coord = |o: usize, inl: usize, outl: usize| {
        let s = ((o as f64 + 0.5) * inl as f64 / outl as f64 - 0.5).max(0.0);
        let i0 = (s.floor() as usize).min(inl - 1);
        (i0, (i0 + 1).min(inl - 1), s - i0 as f64)
    };
    for n in 0..x.n {
        for c in 0..x.c {
            for oy in 0..oh {
                let (y0, y1, fy) = coord(oy, x.h, oh);
                for ox in 0..ow {
                    let (x0, x1, fx) = coord(ox, x.w, ow);
                    let v = (1.0 - fy) * ((1.0 - fx) * x.get(n, c, y0, x0) + fx * x.get(n, c, y0, x1))
                        + fy * ((1.0 - fx) * x.get(n, c, y1, x0) + fx * x.get(n, c, y1, x1));
                    out.put(n, c, oy, ox, v);
                }
            }
        }
    }
    out
}

fn keys(t: f64) -> f64 {
    let a = -0.5;
    let t = t.abs();
    if t <= 1.0 {
        (a + 2.0) * t.powi(3) - (a + 3.0) * t * t + 1.0
    } else if t <= 2.0 {
        a * t.powi(3) - 5.0 * a * t * t + 8.0 * a * t - 4.0 * a
    } else {
        0.0
    }
}

/// Normalized stretched-kernel weights over every source index whose
/// weight can be nonzero, with out-of-range indices replicated.
fn axis_weights(o: usize, in_len: usize, scale: f64) -> Vec<(usize, f64)> {
    let stretch = scale.min(1.0);
    let centre = (o as f64 + 0.5) / scale - 0.5;
    let reach = 2.0 / stretch;
    let lo = (centre - reach).floor() as i64 - 1;
    let hi = (centre + reach).ceil() as i64 + 1;
    let mut taps: Vec<(usize, f64)> = (lo..=hi)
        .map(|j| (j.clamp(0, in_len as i64 - 1) as usize, stretch * keys(stretch * (centre - j as f64))))
        .collect();
    let total: f64 = taps.iter().map(|t| t.1).sum();
    for t in &mut taps {
        t.1 /= total;
    }
    taps
}

/// Direct 2-D evaluation of the separable stretched bicubic sum.
pub fn bicubic_ref(x: &Arr, scale: f64) -> Arr {
    let oh = (x.h as f64 * scale).round() as usize;
    let ow = (x.w as f64 * scale).round() as usize;
    let mut out = Arr::zeros(x.n, x.c, oh, ow);
    for n in 0..x.n {
        for c in 0..x.c {
            for oy in 0..oh {
                let wy = axis_weights(oy, x.h, scale);
                for ox in 0..ow {
                    let wx = axis_weights(ox, x.w, scale);
                    let mut acc = 0.0;
                    for &(iy, a) in &wy {
                        for &(ix, b) in &wx {
                            acc += a * b * x.get(n, c, iy, ix);
                        }
                    }
                    out.put(n, c, oy, ox, acc);
                }
            }
        }
    }
    out
}

pub fn sigmoid(v: f64) -> f64 {
    1.0 / (1.0 + (-v).exp())
}

pub fn act_ref(name: &str, v: f64) -> f64 {
    match name {
        "relu" => v.max(0.0),
        "relu6" => v.clamp(0.0, 6.0),
        "leaky_relu" => if v > 0.0 { v } else { 0.05 * v },
        "sigmoid" => sigmoid(v),
        "none" => v,
        other => panic!("unknown activation {other}"),
    }
}

/// Per-site normalization over channels with population variance.
pub fn layer_norm_ref(x: &Arr, gamma: &[f64], beta: &[f64], eps: f64) -> Arr {
    let mut out = x.clone();
    for n in 0..x.n {
        for y in 0..x.h {
            for xx in 0..x.w {
                let vals: Vec<f64> = (0..x.c).map(|c| x.get(n, c, y, xx)).collect();
                let mean = vals.iter().sum::<f64>() / x.c as f64;
                let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / x.c as f64;
                for c in 0..x.c {
                    out.put(n, c, y, xx, gamma[c] * (vals[c] - mean) / (var + eps).sqrt() + beta[c]);
                }
            }
        }
    }
    out
}

pub fn pixel_shuffle_ref(x: &Arr, r: usize) -> Arr {
    let c = x.c / (r * r);
    let mut out = Arr::zeros(x.n, c, x.h * r, x.w * r);
    for n in 0..x.n {
        for ch in 0..c {
            for y in 0..x.h * r {
                for xx in 0..x.w * r {
                    let src = ch * r * r + (y % r) * r + (xx % r);
                    out.put(n, ch, y, xx, x.get(n, src, y / r, xx / r));
                }
            }
        }
    }
    out
}

/// Parameter lookup for the straight-line oracles.
pub struct P<'a>(pub &'a ParamStore<f64>);

impl P<'_> {
    pub fn w(&self, name: &str) -> Arr {
        Arr::from_t(self.0.get(&format!("{name}.weight")).unwrap_or_else(|| panic!("missing {name}.weight")))
    }

    pub fn b(&self, name: &str) -> Vec<f64> {
        self.0.get(&format!("{name}.bias")).unwrap().data().to_vec()
    }

    pub fn conv(&self, name: &str, x: &Arr, stride: usize, pad: usize, groups: usize) -> Arr {
        conv_ref(x, &self.w(name), &self.b(name), stride, pad, groups)
    }
}

pub fn esa_ref(p: &P, prefix: &str, x: &Arr) -> Arr {
    let c1 = p.conv(&format!("{prefix}.conv_in"), x, 1, 0, 1);
    let c2 = p.conv(&format!("{prefix}.conv_down"), &c1, 2, 0, 1);
    let k = 7.min(c2.h).min(c2.w);
    let pooled = max_pool_ref(&c2, k, 3);
    let a = p.conv(&format!("{prefix}.conv_a"), &pooled, 1, 1, 1).map(|v| v.max(0.0));
    let b = p.conv(&format!("{prefix}.conv_b"), &a, 1, 1, 1);
    let up = bilinear_ref(&b, x.h, x.w);
    let skip = p.conv(&format!("{prefix}.conv_skip"), &c1, 1, 0, 1);
    let m = p.conv(&format!("{prefix}.conv_out"), &up.zip(&skip, |a, b| a + b), 1, 0, 1).map(sigmoid);
    x.zip(&m, |a, b| a * b)
}

pub fn cab_ref(p: &P, prefix: &str, act: &str, x: &Arr) -> Arr {
    let y = p.conv(&format!("{prefix}.conv1"), x, 1, 1, 1).map(|v| act_ref(act, v));
    let y = p.conv(&format!("{prefix}.conv2"), &y, 1, 1, 1);
    let s = gap_ref(&y);
    let s = p.conv(&format!("{prefix}.squeeze"), &s, 1, 0, 1).map(|v| v.max(0.0));
    let s = p.conv(&format!("{prefix}.excite"), &s, 1, 0, 1).map(sigmoid);
    let mut out = x.clone();
    for n in 0..y.n {
        for c in 0..y.c {
            for yy in 0..y.h {
                for xx in 0..y.w {
                    let i = out.idx(n, c, yy, xx);
                    out.v[i] += y.get(n, c, yy, xx) * s.get(n, c, 0, 0);
                }
            }
        }
    }
    out
}

fn dw_ref(p: &P, cfg: &ModelConfig, name: &str, x: &Arr) -> Arr {
    let y = p.conv(name, x, 1, cfg.dw_kernel / 2, x.c);
    if cfg.dw_pointwise {
        p.conv(&format!("{name}_pw"), &y, 1, 0, 1)
    } else {
        y
    }
}

pub fn hasb_ref(p: &P, cfg: &ModelConfig, i: usize, x: &Arr) -> Arr {
    let name = |s: &str| format!("blocks.{i}.{s}");
    let act = cfg.gate_activation.name();
    let d = dw_ref(p, cfg, &name("dw1"), x);
    let fo = layer_norm_ref(&d, &p.w(&name("norm")).v, &p.b(&name("norm")), 1e-6);
    let d1 = p.conv(&name("fc1"), &fo, 1, 0, 1).map(|v| act_ref(act, v));
    let d2 = p.conv(&name("fc2"), &fo, 1, 0, 1);
    let mut fused = match cfg.fuse_mode.to_string().as_str() {
        "multiply" => d1.zip(&d2, |a, b| a * b),
        _ => d1.zip(&d2, |a, b| a + b),
    };
    if cfg.third_branch {
        let d3 = p.conv(&name("fc3"), &fo, 1, 0, 1);
        let d3 = if cfg.use_esa { esa_ref(p, &name("esa"), &d3) } else { d3 };
        fused = fused.zip(&d3, |a, b| a + b);
    }
    let h = p.conv(&name("fc_out"), &fused, 1, 0, 1);
    let out = if cfg.block_residual_position.to_string() == "after_dwconv" {
        dw_ref(p, cfg, &name("dw2"), &h).zip(x, |a, b| a + b)
    } else {
        dw_ref(p, cfg, &name("dw2"), &h.zip(x, |a, b| a + b))
    };
    if cfg.use_cab {
        cab_ref(p, &name("cab"), act, &out)
    } else {
        out
    }
}

pub fn forward_ref(p: &P, cfg: &ModelConfig, x: &Arr) -> Arr {
    let f0 = p.conv("head", x, 1, 1, 1);
    let mut f = f0.clone();
    for i in 0..cfg.num_blocks {
        let y = hasb_ref(p, cfg, i, &f);
        f = if cfg.per_block_residual { y.zip(&f, |a, b| a + b) } else { y };
    }
    let fdf = p.conv("trunk", &f, 1, 1, 1);
    let r = p.conv("recon", &fdf.zip(&f0, |a, b| a + b), 1, 1, 1);
    pixel_shuffle_ref(&r, cfg.scale)
}

/// Parameters with every tensor drawn uniformly from `[-amp, amp]`, LN
/// gamma from `[0.5, 1.5]`.
pub fn random_params(cfg: &ModelConfig, seed: u64, amp: f64) -> ParamStore<f64> {
    let mut r = rng(seed);
    let mut store = hasn::model::init_params::<f64>(cfg, seed).unwrap();
    for (name, t) in store.iter_mut() {
        let gamma = name.ends_with("norm.weight");
        for v in t.data_mut() {
            *v = if gamma { r.gen_range(0.5..1.5) } else { r.gen_range(-amp..amp) };
        }
    }
    store
}
