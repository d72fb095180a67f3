//! `hasn` command-line tool: train, warm start, infer, evaluate, degrade,
//! count and inspect.
//!
//! Exit codes: 0 success, 1 partial failure, 2 usage or config error,
//! 3 numeric failure during training.

mod config;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use hasn::data::{
    bicubic_resize, crop_to_multiple, degrade, is_image_path, load_image, load_pair, read_rgb8, save_image, scan_dataset,
    write_gray8, write_rgb8, write_synthetic_dataset, DatasetSpec, ImagePair, PairStore, Rgb8,
};
use hasn::metrics::{fmt_metric, metric_row, y_psnr_ssim};
use hasn::model::{
    count_flops, count_params, dump_feature_maps, infer, load_checkpoint, param_breakdown, self_ensemble_infer,
    Checkpoint, ModelConfig,
};
use hasn::train::{self, LossKind, LogRow, Start, TrainJob, TrainRun, FINAL_CHECKPOINT};
use hasn::{Error, Tensor};

use config::{extract_overrides, ConfigError, RunConfig, RESOLVED_CONFIG};

struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    fn usage(message: impl Into<String>) -> Self {
        Failure { code: 2, message: message.into() }
    }

    fn partial(message: impl Into<String>) -> Self {
        Failure { code: 1, message: message.into() }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::Diverged { .. } | Error::NonFinite(_) => 3,
            Error::Autograd(_) => 1,
            _ => 2,
        };
        Failure { code, message: e.to_string() }
    }
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        Failure::usage(e.to_string())
    }
}

type CmdResult = Result<(), Failure>;

#[derive(Parser)]
#[command(name = "hasn", version, about = "Lightweight single-image super-resolution")]
#[command(after_help = "Config keys can be overridden with --model.KEY=VALUE, --train.KEY=VALUE or --data.KEY=VALUE.")]
struct Cli {
    #[command(subcommand)]
    cmd: Command,
}

#[derive(Args)]
struct ConfigArgs {
    /// `key = value` config file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Starting profile: paper or desk-smoke.
    #[arg(long)]
    profile: Option<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Train from scratch, or resume from a checkpoint.
    Train {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long, default_value = "run")]
        out_dir: PathBuf,
        /// Continue this checkpoint, optimizer state included.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Second-stage training from stage-1 weights with the L1 + KL loss.
    Warmstart {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Stage-1 checkpoint file, or a directory of ckpt_<iter>.hsnc files.
        #[arg(long = "from")]
        from: PathBuf,
        #[arg(long)]
        pick_iter: u64,
        #[arg(long, default_value = "run_stage2")]
        out_dir: PathBuf,
    },
    /// Upscale images with a trained model.
    Infer {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
        #[arg(long)]
        self_ensemble: bool,
        /// Image files or directories.
        #[arg(required = true)]
        inputs: Vec<PathBuf>,
    },
    /// Y-channel PSNR/SSIM of a model or of bicubic upscaling on an HR set.
    Eval {
        #[arg(long, conflicts_with = "baseline", required_unless_present = "baseline")]
        ckpt: Option<PathBuf>,
        /// Score plain upscaling instead of a model.
        #[arg(long, value_parser = ["bicubic"])]
        baseline: Option<String>,
        #[arg(long)]
        hr_dir: PathBuf,
        /// LR images matched by stem; generated by bicubic degradation otherwise.
        #[arg(long)]
        lr_dir: Option<PathBuf>,
        #[arg(long)]
        scale: Option<usize>,
        #[arg(long)]
        self_ensemble: bool,
        /// Round luma to integer levels before scoring.
        #[arg(long)]
        quantize_y: bool,
        /// Also write the CSV to this file.
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Bicubic-downscale HR images into LR images.
    Degrade {
        #[arg(long)]
        scale: usize,
        #[arg(long)]
        out_dir: PathBuf,
        #[arg(required = true)]
        inputs: Vec<PathBuf>,
    },
    /// Parameter and FLOP counts for a model config.
    Count {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Output resolution WxH for the FLOP count.
        #[arg(long, default_value = "1280x720")]
        out_res: String,
        /// Vary one model key, e.g. blocks=2,4,6 or kernel=3,5,7,9.
        #[arg(long)]
        sweep: Option<String>,
    },
    /// Write feature-map grids of selected block outputs.
    Inspect {
        #[arg(long)]
        ckpt: PathBuf,
        /// Comma-separated block indices; 0 is the shallow feature map.
        #[arg(long, value_delimiter = ',', required = true)]
        blocks: Vec<usize>,
        #[arg(long)]
        out_dir: PathBuf,
        input: PathBuf,
    },
}

fn main() -> ExitCode {
    let args: Vec<String> = std::env::args().collect();
    let (args, overrides) = match extract_overrides(args) {
        Ok(v) => v,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    };
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli.cmd, &overrides) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}

fn run(cmd: Command, overrides: &[(String, String)]) -> CmdResult {
    let takes_overrides = matches!(cmd, Command::Train { .. } | Command::Warmstart { .. } | Command::Count { .. });
    if !takes_overrides && !overrides.is_empty() {
        return Err(Failure::usage(format!("--{} is only accepted by train, warmstart and count", overrides[0].0)));
    }
    match cmd {
        Command::Train { cfg, out_dir, resume } => cmd_train(&cfg, overrides, &out_dir, resume.as_deref()),
        Command::Warmstart { cfg, from, pick_iter, out_dir } => cmd_warmstart(&cfg, overrides, &from, pick_iter, &out_dir),
        Command::Infer { ckpt, out_dir, self_ensemble, inputs } => cmd_infer(&ckpt, &out_dir, self_ensemble, &inputs),
        Command::Eval { ckpt, baseline: _, hr_dir, lr_dir, scale, self_ensemble, quantize_y, csv } => {
            cmd_eval(ckpt.as_deref(), &hr_dir, lr_dir, scale, self_ensemble, quantize_y, csv.as_deref())
        }
        Command::Degrade { scale, out_dir, inputs } => cmd_degrade(scale, &out_dir, &inputs),
        Command::Count { cfg, out_res, sweep } => cmd_count(&cfg, overrides, &out_res, sweep.as_deref()),
        Command::Inspect { ckpt, blocks, out_dir, input } => cmd_inspect(&ckpt, &blocks, &out_dir, &input),
    }
}

fn resolve(args: &ConfigArgs, overrides: &[(String, String)]) -> Result<RunConfig, Failure> {
    Ok(RunConfig::resolve(args.profile.as_deref(), args.config.as_deref(), overrides)?)
}

fn create_dir(dir: &Path) -> CmdResult {
    fs::create_dir_all(dir).map_err(|e| Failure::usage(format!("cannot create {}: {e}", dir.display())))
}

fn write_file(path: &Path, text: &str) -> CmdResult {
    fs::write(path, text).map_err(|e| Failure::usage(format!("cannot write {}: {e}", path.display())))
}

/// Fills in generated data when the config asks for it and no HR
/// directory is given. Everything lands under `out_dir/data`.
fn prepare_synthetic(cfg: &mut RunConfig, out_dir: &Path) -> CmdResult {
    let d = &mut cfg.data;
    if d.spec.hr_dirs.is_empty() && d.synthetic_count > 0 {
        let dir = out_dir.join("data").join("train_hr");
        write_synthetic_dataset(&dir, d.synthetic_count, d.synthetic_side, cfg.train.seed)?;
        d.spec.hr_dirs.push(dir);
        if d.eval_dir.is_none() && d.synthetic_eval > 0 {
            let dir = out_dir.join("data").join("eval_hr");
            let side = (d.synthetic_side * 2 / 3).div_ceil(cfg.model.scale) * cfg.model.scale;
            write_synthetic_dataset(&dir, d.synthetic_eval, side, cfg.train.seed.wrapping_add(1))?;
            d.eval_dir = Some(dir);
        }
    }
    Ok(())
}

fn load_eval_set(cfg: &RunConfig) -> Result<Vec<ImagePair<f32>>, Failure> {
    let Some(dir) = &cfg.data.eval_dir else { return Ok(Vec::new()) };
    let spec = DatasetSpec { hr_dirs: vec![dir.clone()], lr_dir: None, ..cfg.data.spec.clone() };
    let report = scan_dataset(&spec)?;
    report.entries.iter().map(|e| load_pair(e, &spec).map_err(Failure::from)).collect()
}

fn training_store(cfg: &RunConfig) -> Result<PairStore, Failure> {
    let report = scan_dataset(&cfg.data.spec)?;
    for w in &report.warnings {
        eprintln!("warning: {w}");
    }
    println!("dataset: {} images from {} director{}", report.entries.len(), cfg.data.spec.hr_dirs.len(),
        if cfg.data.spec.hr_dirs.len() == 1 { "y" } else { "ies" });
    Ok(PairStore::from_entries(cfg.data.spec.clone(), report.entries, cfg.data.memory_mb << 20))
}

fn print_row(row: &LogRow) {
    if let Some(p) = row.eval_psnr {
        println!("iter {:>8}  lr {:.3e}  loss {:.6}  eval_psnr {}", row.iter, row.lr, row.loss, fmt_metric(p));
    }
}

fn run_training(cfg: &RunConfig, out_dir: &Path, start: Option<Start<f32>>) -> Result<TrainRun<f32>, Failure> {
    let mut store = training_store(cfg)?;
    let eval = load_eval_set(cfg)?;
    let mut progress = print_row;
    let job = TrainJob {
        model: cfg.model.clone(),
        train: cfg.train.clone(),
        data: &mut store,
        patch_hr: cfg.data.spec.patch_hr(),
        augment: cfg.data.spec.augment,
        eval_set: &eval,
        out_dir: Some(out_dir.to_path_buf()),
        progress: Some(&mut progress),
    };
    let run = match start {
        Some(s) => train::train(job, s)?,
        None => train::warm_start(job)?,
    };
    Ok(run)
}

fn report_run(run: &TrainRun<f32>, out_dir: &Path) {
    println!("{}", run.header);
    if let Some(last) = run.log.last() {
        println!("finished at iter {} with loss {:.6}", last.iter, last.loss);
    }
    println!("wrote {}", out_dir.join(FINAL_CHECKPOINT).display());
}

fn cmd_train(args: &ConfigArgs, overrides: &[(String, String)], out_dir: &Path, resume: Option<&Path>) -> CmdResult {
    let mut cfg = resolve(args, overrides)?;
    cfg.train.validate()?;
    if cfg.train.stage != 1 {
        return Err(Failure::usage("train runs stage 1; use warmstart for stage 2"));
    }
    for d in &cfg.data.spec.hr_dirs {
        if !d.is_dir() {
            return Err(Failure::usage(format!("dataset directory not found: {}", d.display())));
        }
    }
    create_dir(out_dir)?;
    prepare_synthetic(&mut cfg, out_dir)?;
    write_file(&out_dir.join(RESOLVED_CONFIG), &cfg.to_text())?;
    let start = match resume {
        Some(p) => Start::Resume(load_checkpoint(p)?),
        None => Start::Fresh,
    };
    let run = run_training(&cfg, out_dir, Some(start))?;
    report_run(&run, out_dir);
    Ok(())
}

fn cmd_warmstart(args: &ConfigArgs, overrides: &[(String, String)], from: &Path, pick: u64, out_dir: &Path) -> CmdResult {
    if !from.exists() {
        return Err(Failure::usage(format!("stage-1 checkpoint not found: {}", from.display())));
    }
    let mut cfg = resolve(args, overrides)?;
    cfg.train.stage = 2;
    cfg.train.loss = LossKind::Stage2;
    cfg.train.warm_start_from = Some((from.to_path_buf(), pick));
    cfg.train.validate()?;
    for d in &cfg.data.spec.hr_dirs {
        if !d.is_dir() {
            return Err(Failure::usage(format!("dataset directory not found: {}", d.display())));
        }
    }
    create_dir(out_dir)?;
    prepare_synthetic(&mut cfg, out_dir)?;
    write_file(&out_dir.join(RESOLVED_CONFIG), &cfg.to_text())?;
    println!("optimizer state and learning-rate schedule restart for stage 2");
    let run = run_training(&cfg, out_dir, None)?;
    report_run(&run, out_dir);
    Ok(())
}

fn expand_inputs(inputs: &[PathBuf]) -> Vec<PathBuf> {
    let mut out = Vec::new();
    for p in inputs {
        if p.is_dir() {
            let mut files: Vec<PathBuf> = fs::read_dir(p)
                .into_iter()
                .flatten()
                .flatten()
                .map(|e| e.path())
                .filter(|f| f.is_file() && is_image_path(f))
                .collect();
            files.sort();
            out.extend(files);
        } else {
            out.push(p.clone());
        }
    }
    out
}

fn stem(p: &Path) -> String {
    p.file_stem().and_then(|s| s.to_str()).unwrap_or("image").to_string()
}

fn upscale(ck: &Checkpoint<f32>, x: &Tensor<f32>, ensemble: bool) -> hasn::Result<Tensor<f32>> {
    if ensemble {
        self_ensemble_infer(&ck.config, &ck.params, x)
    } else {
        infer(&ck.config, &ck.params, x)
    }
}

fn cmd_infer(ckpt: &Path, out_dir: &Path, ensemble: bool, inputs: &[PathBuf]) -> CmdResult {
    let ck: Checkpoint<f32> = load_checkpoint(ckpt)?;
    create_dir(out_dir)?;
    let files = expand_inputs(inputs);
    let s = ck.config.scale;
    let mut failed = Vec::new();
    for f in &files {
        let result = load_image::<f32>(f).and_then(|x| upscale(&ck, &x, ensemble)).and_then(|y| {
            let out = out_dir.join(format!("{}_x{s}.png", stem(f)));
            save_image(&out, &y).map(|_| out)
        });
        match result {
            Ok(out) => println!("{} -> {}", f.display(), out.display()),
            Err(e) => {
                eprintln!("failed: {}: {e}", f.display());
                failed.push(f.display().to_string());
            }
        }
    }
    if failed.is_empty() {
        Ok(())
    } else {
        Err(Failure::partial(format!("{} of {} images failed: {}", failed.len(), files.len(), failed.join(", "))))
    }
}

/// Scores the checkpoint, or bicubic upscaling when there is none.
#[allow(clippy::too_many_arguments)]
fn cmd_eval(
    ckpt: Option<&Path>,
    hr_dir: &Path,
    lr_dir: Option<PathBuf>,
    scale: Option<usize>,
    ensemble: bool,
    quantize_y: bool,
    csv: Option<&Path>,
) -> CmdResult {
    let model: Option<Checkpoint<f32>> = ckpt.map(load_checkpoint).transpose()?;
    let scale = match (&model, scale) {
        (Some(m), Some(s)) if s != m.config.scale => {
            return Err(Failure::usage(format!("--scale {s} conflicts with the checkpoint's scale {}", m.config.scale)))
        }
        (Some(m), _) => m.config.scale,
        (None, s) => s.unwrap_or(4),
    };
    let spec = DatasetSpec { hr_dirs: vec![hr_dir.to_path_buf()], lr_dir, scale, ..DatasetSpec::default() };
    let report = scan_dataset(&spec)?;
    for w in &report.warnings {
        eprintln!("warning: {w}");
    }
    let mut lines = vec!["image,psnr_db,ssim".to_string()];
    let (mut sum_p, mut sum_s, mut n) = (0.0, 0.0, 0usize);
    let mut failed = Vec::new();
    for e in &report.entries {
        let scored = load_pair::<f64>(e, &spec).and_then(|pair| {
            let sr = match &model {
                Some(m) => upscale(m, &pair.lr.cast(), ensemble)?.cast(),
                None => bicubic_resize(&pair.lr, scale as f64)?,
            };
            y_psnr_ssim(&sr, &pair.hr, scale, quantize_y)
        });
        match scored {
            Ok((p, s)) => {
                lines.push(metric_row(&e.stem, p, s));
                sum_p += p;
                sum_s += s;
                n += 1;
            }
            Err(err) => {
                eprintln!("failed: {}: {err}", e.hr_path.display());
                failed.push(e.stem.clone());
            }
        }
    }
    let nf = n.max(1) as f64;
    lines.push(metric_row("average", sum_p / nf, sum_s / nf));
    let text = lines.join("\n") + "\n";
    print!("{text}");
    if let Some(path) = csv {
        write_file(path, &text)?;
    }
    if failed.is_empty() {
        Ok(())
    } else {
        Err(Failure::partial(format!("{} images failed: {}", failed.len(), failed.join(", "))))
    }
}

fn cmd_degrade(scale: usize, out_dir: &Path, inputs: &[PathBuf]) -> CmdResult {
    if scale == 0 {
        return Err(Failure::usage("--scale must be at least 1"));
    }
    create_dir(out_dir)?;
    let files = expand_inputs(inputs);
    let mut failed = Vec::new();
    for f in &files {
        let result = read_rgb8(f).and_then(|hr| crop_to_multiple(&hr, scale)).and_then(|hr| {
            let lr = Rgb8::from_tensor(&degrade(&hr.to_tensor::<f64>(), scale)?)?;
            let out = out_dir.join(format!("{}.png", stem(f)));
            write_rgb8(&out, &lr).map(|_| out)
        });
        match result {
            Ok(out) => println!("{} -> {}", f.display(), out.display()),
            Err(e) => {
                eprintln!("failed: {}: {e}", f.display());
                failed.push(f.display().to_string());
            }
        }
    }
    if failed.is_empty() {
        Ok(())
    } else {
        Err(Failure::partial(format!("{} of {} images failed", failed.len(), files.len())))
    }
}

fn parse_res(s: &str) -> Result<(usize, usize), Failure> {
    let bad = || Failure::usage(format!("--out-res expects WxH, got '{s}'"));
    let (w, h) = s.split_once(['x', 'X']).ok_or_else(bad)?;
    let w: usize = w.trim().parse().map_err(|_| bad())?;
    let h: usize = h.trim().parse().map_err(|_| bad())?;
    if w == 0 || h == 0 {
        return Err(bad());
    }
    Ok((w, h))
}

fn sweep_key(k: &str) -> &str {
    match k {
        "blocks" => "num_blocks",
        "kernel" => "dw_kernel",
        other => other,
    }
}

fn human(n: u64) -> String {
    if n >= 1_000_000 {
        format!("{:.2}M", n as f64 / 1e6)
    } else {
        format!("{:.1}K", n as f64 / 1e3)
    }
}

fn cmd_count(args: &ConfigArgs, overrides: &[(String, String)], out_res: &str, sweep: Option<&str>) -> CmdResult {
    let cfg = resolve(args, overrides)?;
    let (w, h) = parse_res(out_res)?;
    let m = &cfg.model;
    if let Some(sw) = sweep {
        let (k, vals) = sw.split_once('=').ok_or_else(|| Failure::usage(format!("--sweep expects key=v1,v2,..., got '{sw}'")))?;
        let key = sweep_key(k.trim());
        println!("{:>12} {:>12} {:>10}", k.trim(), "params", "flops_g");
        let mut prev: Option<u64> = None;
        for v in vals.split(',').map(str::trim).filter(|v| !v.is_empty()) {
            let mut c: ModelConfig = m.clone();
            c.set(key, v)?;
            c.validate()?;
            let p = count_params(&c);
            let delta = prev.map(|q| format!("  ({:+})", p as i64 - q as i64)).unwrap_or_default();
            println!("{v:>12} {p:>12} {:>10.3}{delta}", count_flops(&c, h, w) as f64 / 1e9);
            prev = Some(p);
        }
        return Ok(());
    }
    let p = count_params(m);
    let f = count_flops(m, h, w);
    println!("params {p} ({})", human(p));
    println!("flops {:.3}G at {w}x{h} output", f as f64 / 1e9);
    println!("breakdown:");
    for (name, n) in param_breakdown(m) {
        println!("  {name:<24} {n:>10}");
    }
    Ok(())
}

fn cmd_inspect(ckpt: &Path, blocks: &[usize], out_dir: &Path, input: &Path) -> CmdResult {
    let ck: Checkpoint<f32> = load_checkpoint(ckpt)?;
    if let Some(&b) = blocks.iter().find(|&&b| b > ck.config.num_blocks) {
        return Err(Failure::usage(format!("block index {b} outside [0, {}]", ck.config.num_blocks)));
    }
    let x = load_image::<f32>(input)?;
    create_dir(out_dir)?;
    for g in dump_feature_maps(&ck.config, &ck.params, &x, blocks)? {
        let out = out_dir.join(format!("block_{}.png", g.block));
        write_gray8(&out, g.width, g.height, &g.pixels)?;
        println!("{} ({}x{} tiles, {}x{} px)", out.display(), g.cols, g.rows, g.width, g.height);
    }
    Ok(())
}
