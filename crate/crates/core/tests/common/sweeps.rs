//! Randomized comparisons between library kernels and the direct-loop
//! oracles, and the per-kernel gradient checks. Each returns the worst
//! error seen so callers can both assert and report it.

use hasn::autograd::{grad_check, Eval, GradCheckConfig, Graph, Tape, Var};
use hasn::data::bicubic_resize;
use hasn::loss::LossWeights;
use hasn::model::{self, FuseMode, ModelConfig, ResidualPosition};
use hasn::tensor::{self, Activation, ConvSpec, PoolKind};
use hasn::{ParamStore, Result, Shape, Tensor};
use rand::seq::SliceRandom;
use rand::Rng;

use super::*;

pub const INSTANCES: usize = 20;

fn eval_block(
    params: &ParamStore<f64>,
    x: &Tensor<f64>,
    f: impl FnOnce(&mut Eval<'_, f64>, &std::rc::Rc<Tensor<f64>>) -> Result<std::rc::Rc<Tensor<f64>>>,
) -> Tensor<f64> {
    let mut g = Eval::new(params);
    let xv = g.constant(x.clone());
    let y = f(&mut g, &xv).unwrap();
    (*y).clone()
}

/// Dense, strided, grouped and depthwise convolutions.
pub fn conv_sweep(seed: u64) -> f64 {
    let mut r = rng(seed);
    let mut worst: f64 = 0.0;
    for i in 0..INSTANCES {
        let k = [1, 3, 5, 7][r.gen_range(0..4)];
        let groups = [1, 2, 4][r.gen_range(0..3)];
        let depthwise = i % 4 == 0;
        let (cin, cout, groups) = if depthwise {
            let c = r.gen_range(1..6);
            (c, c, c)
        } else {
            (groups * r.gen_range(1..4), groups * r.gen_range(1..4), groups)
        };
        let stride = r.gen_range(1..3);
        let pad = r.gen_range(0..=k / 2);
        let h = r.gen_range(k..k + 9);
        let w = r.gen_range(k..k + 9);
        let shape = Shape::new(r.gen_range(1..3), cin, h, w);
        let x = rand_t(&mut r, shape, -1.0, 1.0);
        let shape = Shape::new(cout, cin / groups, k, k);
        let wt = rand_t(&mut r, shape, -1.0, 1.0);
        let b: Vec<f64> = (0..cout).map(|_| r.gen_range(-1.0..1.0)).collect();
        let got = tensor::conv2d(&x, &wt, &b, ConvSpec::new(stride, pad, groups)).unwrap();
        let want = conv_ref(&Arr::from_t(&x), &Arr::from_t(&wt), &b, stride, pad, groups);
        assert_eq!(Arr::from_t(&got).h, want.h);
        worst = worst.max(rel_err(got.data(), &want.v));
    }
    worst
}

pub fn pool_sweep(seed: u64) -> f64 {
    let mut r = rng(seed);
    let mut worst: f64 = 0.0;
    for i in 0..INSTANCES {
        let k = r.gen_range(1..5);
        let s = r.gen_range(1..4);
        let shape = Shape::new(2, r.gen_range(1..4), r.gen_range(k..12), r.gen_range(k..12));
        let x = rand_t(&mut r, shape, -2.0, 2.0);
        let a = Arr::from_t(&x);
        let (got, want) = match i % 3 {
            0 => (tensor::pool2d(&x, PoolKind::Max, k, s).unwrap(), max_pool_ref(&a, k, s)),
            1 => (tensor::pool2d(&x, PoolKind::Avg, k, s).unwrap(), avg_pool_ref(&a, k, s)),
            _ => (tensor::pool2d(&x, PoolKind::GlobalAvg, 0, 0).unwrap(), gap_ref(&a)),
        };
        worst = worst.max(rel_err(got.data(), &want.v));
    }
    worst
}

pub fn bilinear_sweep(seed: u64) -> f64 {
    let mut r = rng(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..INSTANCES {
        let shape = Shape::new(1, 2, r.gen_range(1..9), r.gen_range(1..9));
        let x = rand_t(&mut r, shape, -1.0, 1.0);
        let (oh, ow) = (r.gen_range(1..20), r.gen_range(1..20));
        let got = tensor::resize_bilinear(&x, oh, ow).unwrap();
        worst = worst.max(rel_err(got.data(), &bilinear_ref(&Arr::from_t(&x), oh, ow).v));
    }
    worst
}

pub fn bicubic_sweep(seed: u64) -> f64 {
    let mut r = rng(seed);
    let mut worst: f64 = 0.0;
    let scales = [0.25, 1.0 / 3.0, 0.5, 0.7, 1.5, 2.0, 3.0, 4.0];
    for _ in 0..INSTANCES {
        let scale = *scales.choose(&mut r).unwrap();
        let shape = Shape::new(1, 3, r.gen_range(4..25), r.gen_range(4..25));
        let x = rand_t(&mut r, shape, 0.0, 255.0);
        let got = bicubic_resize(&x, scale).unwrap();
        worst = worst.max(rel_err(got.data(), &bicubic_ref(&Arr::from_t(&x), scale).v));
    }
    worst
}

fn random_cfg<R: Rng>(r: &mut R) -> ModelConfig {
    let third_branch = r.gen_bool(0.8);
    ModelConfig {
        dim: [8, 12, 16][r.gen_range(0..3)],
        num_blocks: r.gen_range(1..3),
        dw_kernel: [3, 5, 7][r.gen_range(0..3)],
        scale: r.gen_range(2..5),
        fuse_mode: if r.gen() { FuseMode::Multiply } else { FuseMode::Add },
        gate_activation: *[Activation::Relu6, Activation::Relu, Activation::LeakyRelu, Activation::Sigmoid]
            .choose(r)
            .unwrap(),
        use_esa: third_branch && r.gen(),
        use_cab: r.gen(),
        third_branch,
        per_block_residual: r.gen(),
        block_residual_position: if r.gen() { ResidualPosition::AfterDwConv } else { ResidualPosition::BeforeDwConv },
        dw_pointwise: r.gen_bool(0.3),
        esa_reduction: 4,
        cab_reduction: 2,
        ca_reduction: 2,
        ..ModelConfig::desk()
    }
}

pub fn esa_sweep(seed: u64) -> f64 {
    let mut r = rng(seed);
    let mut worst: f64 = 0.0;
    for i in 0..INSTANCES {
        let cfg = ModelConfig { use_esa: true, third_branch: true, ..random_cfg(&mut r) };
        let params = random_params(&cfg, seed + i as u64, 0.5);
        let s = Shape::new(r.gen_range(1..3), cfg.hidden(), r.gen_range(8..30), r.gen_range(8..30));
        let x = rand_t(&mut r, s, -1.0, 1.0);
        let got = eval_block(&params, &x, |g, x| model::esa_forward(g, "blocks.0.esa", x));
        let want = esa_ref(&P(&params), "blocks.0.esa", &Arr::from_t(&x));
        worst = worst.max(rel_err(got.data(), &want.v));
    }
    worst
}

pub fn cab_sweep(seed: u64) -> f64 {
    let mut r = rng(seed);
    let mut worst: f64 = 0.0;
    for i in 0..INSTANCES {
        let cfg = ModelConfig { use_cab: true, ..random_cfg(&mut r) };
        let params = random_params(&cfg, seed + i as u64, 0.5);
        let shape = Shape::new(1, cfg.dim, r.gen_range(1..12), r.gen_range(1..12));
        let x = rand_t(&mut r, shape, -1.0, 1.0);
        let act = cfg.gate_activation;
        let got = eval_block(&params, &x, |g, x| model::cab_forward(g, "blocks.0.cab", act, x));
        let want = cab_ref(&P(&params), "blocks.0.cab", act.name(), &Arr::from_t(&x));
        worst = worst.max(rel_err(got.data(), &want.v));
    }
    worst
}

/// Single blocks over randomized ablation settings.
pub fn hasb_sweep(seed: u64) -> f64 {
    let mut r = rng(seed);
    let mut worst: f64 = 0.0;
    for i in 0..INSTANCES {
        let cfg = random_cfg(&mut r);
        let params = random_params(&cfg, seed + i as u64, 0.3);
        let shape = Shape::new(1, cfg.dim, r.gen_range(8..16), r.gen_range(8..16));
        let x = rand_t(&mut r, shape, -1.0, 1.0);
        let got = eval_block(&params, &x, |g, x| model::hasb_forward(g, &cfg, 0, x));
        let want = hasb_ref(&P(&params), &cfg, 0, &Arr::from_t(&x));
        worst = worst.max(rel_err(got.data(), &want.v));
    }
    worst
}

/// Whole networks through `infer`.
pub fn forward_sweep(seed: u64, instances: usize) -> f64 {
    let mut r = rng(seed);
    let mut worst: f64 = 0.0;
    for i in 0..instances {
        let cfg = random_cfg(&mut r);
        let params = random_params(&cfg, seed + i as u64, 0.2);
        let shape = Shape::new(1, 3, r.gen_range(8..13), r.gen_range(8..13));
        let x = rand_t(&mut r, shape, 0.0, 1.0);
        let got = model::infer(&cfg, &params, &x).unwrap();
        let want = forward_ref(&P(&params), &cfg, &Arr::from_t(&x));
        worst = worst.max(rel_err(got.data(), &want.v));
    }
    worst
}

/// Pushes values away from activation and clamp kinks so central
/// differences stay on one side.
fn off_kinks(t: &mut Tensor<f64>, kinks: &[f64], gap: f64) {
    for v in t.data_mut() {
        for &k in kinks {
            if (*v - k).abs() < gap {
                *v = k + if *v >= k { gap } else { -gap };
            }
        }
    }
}

/// `sum(y * c)` for a fixed random `c`, so every output entry carries a
/// distinct upstream gradient.
fn project(t: &mut Tape<'_, f64>, y: Var, seed: u64) -> Result<Var> {
    let s = t.value(&y).shape();
    let c = rand_t(&mut rng(seed), s, -1.0, 1.0);
    let c = t.constant(c);
    let p = t.mul(&y, &c)?;
    t.sum(p)
}

pub struct KernelCheck {
    pub kernel: &'static str,
    pub max_rel_err: f64,
    pub passed: bool,
}

fn check(
    kernel: &'static str,
    store: &ParamStore<f64>,
    tol: f64,
    f: impl Fn(&mut Tape<'_, f64>) -> Result<Var>,
) -> KernelCheck {
    let rep = grad_check(f, store, &GradCheckConfig::with_tol(tol)).unwrap();
    if let Some(msg) = &rep.failure {
        panic!("{kernel}: {msg}");
    }
    KernelCheck { kernel, max_rel_err: rep.max_rel_err(), passed: rep.passed }
}

fn store(items: Vec<(&str, Tensor<f64>)>) -> ParamStore<f64> {
    let mut s = ParamStore::new();
    for (n, t) in items {
        s.insert(n, t);
    }
    s
}

/// Every differentiable kernel in isolation at `tol`.
pub fn kernel_grad_checks(tol: f64) -> Vec<KernelCheck> {
    let mut r = rng(41);
    let mut out = Vec::new();
    let sh = Shape::new(2, 3, 5, 6);

    for (kernel, cin, cout, k, spec) in [
        ("conv2d", 3, 4, 3, ConvSpec::same(3)),
        ("conv2d_strided", 3, 2, 3, ConvSpec::new(2, 0, 1)),
        ("conv2d_grouped", 4, 6, 3, ConvSpec::new(1, 1, 2)),
        ("conv2d_depthwise", 3, 3, 5, ConvSpec::depthwise(5, 3)),
        ("conv2d_pointwise", 3, 5, 1, ConvSpec::pointwise()),
    ] {
        let s = store(vec![
            ("x", rand_t(&mut r, Shape::new(2, cin, 7, 6), -1.0, 1.0)),
            ("w", rand_t(&mut r, Shape::new(cout, cin / spec.groups, k, k), -1.0, 1.0)),
            ("b", rand_t(&mut r, Shape::new(1, cout, 1, 1), -1.0, 1.0)),
        ]);
        out.push(check(kernel, &s, tol, |t| {
            let (x, w, b) = (t.param("x")?, t.param("w")?, t.param("b")?);
            let y = t.conv2d(&x, &w, &b, spec)?;
            project(t, y, 1)
        }));
    }

    let s = store(vec![("a", rand_t(&mut r, sh, -1.0, 1.0)), ("b", rand_t(&mut r, sh, -1.0, 1.0))]);
    out.push(check("add", &s, tol, |t| {
        let (a, b) = (t.param("a")?, t.param("b")?);
        let y = t.add(&a, &b)?;
        project(t, y, 2)
    }));
    out.push(check("mul", &s, tol, |t| {
        let (a, b) = (t.param("a")?, t.param("b")?);
        let y = t.mul(&a, &b)?;
        project(t, y, 3)
    }));
    out.push(check("scale", &s, tol, |t| {
        let a = t.param("a")?;
        let y = t.scale(&a, -1.7)?;
        project(t, y, 4)
    }));
    let s = store(vec![
        ("x", rand_t(&mut r, sh, -1.0, 1.0)),
        ("s", rand_t(&mut r, Shape::new(2, 3, 1, 1), -1.0, 1.0)),
    ]);
    out.push(check("mul_channels", &s, tol, |t| {
        let (x, c) = (t.param("x")?, t.param("s")?);
        let y = t.mul_channels(&x, &c)?;
        project(t, y, 5)
    }));

    for (kernel, act) in [
        ("relu", Activation::Relu),
        ("relu6", Activation::Relu6),
        ("leaky_relu", Activation::LeakyRelu),
        ("sigmoid", Activation::Sigmoid),
    ] {
        let mut x = rand_t(&mut r, sh, -8.0, 8.0);
        off_kinks(&mut x, &[0.0, 6.0], 1e-2);
        let s = store(vec![("x", x)]);
        out.push(check(kernel, &s, tol, |t| {
            let x = t.param("x")?;
            let y = t.activation(&x, act)?;
            project(t, y, 6)
        }));
    }

    let s = store(vec![
        ("x", rand_t(&mut r, Shape::new(2, 5, 3, 4), -2.0, 2.0)),
        ("g", rand_t(&mut r, Shape::new(1, 5, 1, 1), 0.5, 1.5)),
        ("b", rand_t(&mut r, Shape::new(1, 5, 1, 1), -1.0, 1.0)),
    ]);
    out.push(check("layer_norm", &s, tol, |t| {
        let (x, g, b) = (t.param("x")?, t.param("g")?, t.param("b")?);
        let y = t.layer_norm(&x, &g, &b, 1e-6)?;
        project(t, y, 7)
    }));

    let s = store(vec![("x", rand_t(&mut r, Shape::new(1, 12, 3, 2), -1.0, 1.0))]);
    out.push(check("pixel_shuffle", &s, tol, |t| {
        let x = t.param("x")?;
        let y = t.pixel_shuffle(&x, 2)?;
        project(t, y, 8)
    }));

    let s = store(vec![("x", rand_t(&mut r, Shape::new(1, 2, 9, 8), -1.0, 1.0))]);
    for (kernel, kind, k, st) in [
        ("max_pool", PoolKind::Max, 3, 2),
        ("avg_pool", PoolKind::Avg, 3, 2),
        ("global_avg_pool", PoolKind::GlobalAvg, 0, 0),
    ] {
        out.push(check(kernel, &s, tol, |t| {
            let x = t.param("x")?;
            let y = t.pool2d(&x, kind, k, st)?;
            project(t, y, 9)
        }));
    }
    for (kernel, oh, ow) in [("bilinear_up", 13, 17), ("bilinear_down", 4, 3)] {
        out.push(check(kernel, &s, tol, |t| {
            let x = t.param("x")?;
            let y = t.resize_bilinear(&x, oh, ow)?;
            project(t, y, 10)
        }));
    }

    let shape = Shape::new(2, 3, 4, 4);

    let hr = rand_t(&mut r, shape, 0.05, 0.95);
    let mut sr = rand_t(&mut r, Shape::new(2, 3, 4, 4), 0.05, 0.95);
    for (v, h) in sr.data_mut().iter_mut().zip(hr.data()) {
        if (*v - h).abs() < 1e-2 {
            *v = h + 2e-2;
        }
    }
    let s = store(vec![("sr", sr)]);
    out.push(check("l1_loss", &s, tol, |t| {
        let x = t.param("sr")?;
        t.l1_loss(x, &hr)
    }));
    out.push(check("kl_loss", &s, tol, |t| {
        let x = t.param("sr")?;
        t.kl_loss(x, &hr, 1e-8)
    }));
    let w = LossWeights { alpha: 0.7, beta: 1.3, kl_epsilon: 1e-8 };
    out.push(check("stage2_loss", &s, tol, |t| {
        let x = t.param("sr")?;
        t.stage2_loss(x, &hr, &w)
    }));
    out
}

/// Full K=2, dim=16 network plus the stage-2 loss, gradient-checked with
/// respect to every parameter tensor.
pub fn network_grad_check(tol: f64) -> KernelCheck {
    let cfg = ModelConfig::desk();
    let mut params = model::init_params::<f64>(&cfg, 5).unwrap();
    // Centre the output so no pixel sits on the [0, 1] clamp inside the KL
    // term, where central differences would straddle a kink.
    params.get_mut("recon.bias").unwrap().data_mut().fill(0.5);
    params.get_mut("recon.weight").unwrap().data_mut().iter_mut().for_each(|v| *v *= 0.2);
    let mut r = rng(6);
    let x = rand_t(&mut r, Shape::new(1, 3, 10, 10), 0.1, 0.9);
    let y = model::infer(&cfg, &params, &x).unwrap();
    assert!(y.data().iter().all(|v| (0.02..0.98).contains(v)), "output touches the clamp");
    // Targets at least 0.02 from every output keep the L1 term off its kinks.
    let mut hr = y.clone();
    for v in hr.data_mut() {
        let d = r.gen_range(0.02..0.1);
        *v += if *v < 0.5 { d } else { -d };
    }
    let w = LossWeights::default();
    let mut gc = GradCheckConfig::with_tol(tol);
    // Each perturbation moves thousands of ReLU6 and max-pool inputs; the
    // chance that one crosses a kink grows with the step.
    gc.step = 1e-5;
    gc.samples = 24;
    gc.sample_above = 24;
    let rep = grad_check(
        |t| {
            let xv = t.constant(x.clone());
            let y = model::forward(t, &cfg, &xv)?;
            t.stage2_loss(y, &hr, &w)
        },
        &params,
        &gc,
    )
    .unwrap();
    if let Some(msg) = &rep.failure {
        panic!("network: {msg}");
    }
    KernelCheck { kernel: "hasn_k2_dim16_stage2", max_rel_err: rep.max_rel_err(), passed: rep.passed }
}
