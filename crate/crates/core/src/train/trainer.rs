//! Training loop, resume and two-stage warm start.

use std::fmt;
use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::adam::{adam_step, AdamParams, AdamState};
use super::schedule::lr_at;
use crate::autograd::{Graph, Tape};
use crate::data::{augment, pad_pair, sample_patch, ImagePair, PairStore, PatchImage};
use crate::error::{io_err, Error, Result};
use crate::loss::LossWeights;
use crate::metrics::{psnr, rgb_to_y};
use crate::model::{forward, infer, init_params, load_checkpoint, save_checkpoint, Checkpoint, ModelConfig};
use crate::params::ParamStore;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub const LOG_FILE: &str = "train_log.csv";
pub const LOG_COLUMNS: &str = "iter,lr,loss,eval_psnr";
pub const FINAL_CHECKPOINT: &str = "ckpt_final.hsnc";

pub fn checkpoint_name(iter: u64) -> String {
    format!("ckpt_{iter}.hsnc")
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LossKind {
    L1,
    /// `alpha * L1 + beta * KL`.
    Stage2,
}

impl fmt::Display for LossKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            LossKind::L1 => "l1",
            LossKind::Stage2 => "stage2",
        })
    }
}

impl FromStr for LossKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "l1" => Ok(LossKind::L1),
            "stage2" => Ok(LossKind::Stage2),
            _ => Err(Error::Config(format!("unknown loss '{s}' (expected l1 or stage2)"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub stage: u8,
    pub total_iters: u64,
    pub batch: usize,
    pub lr0: f64,
    pub milestones: Vec<u64>,
    pub adam: AdamParams,
    pub loss: LossKind,
    pub loss_weights: LossWeights,
    /// Stage-1 checkpoint (file, or directory of `ckpt_<iter>.hsnc`) and
    /// the iteration to pick from it.
    pub warm_start_from: Option<(PathBuf, u64)>,
    pub seed: u64,
    /// 0 disables periodic evaluation.
    pub eval_every: u64,
    /// 0 disables periodic checkpoints; the final one is always written.
    pub checkpoint_every: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig::stage1()
    }
}

impl TrainConfig {
    pub fn stage1() -> Self {
        TrainConfig {
            stage: 1,
            total_iters: 500_000,
            batch: 128,
            lr0: 2e-4,
            milestones: vec![250_000, 400_000, 450_000, 475_000],
            adam: AdamParams::default(),
            loss: LossKind::L1,
            loss_weights: LossWeights::default(),
            warm_start_from: None,
            seed: 0,
            eval_every: 5_000,
            checkpoint_every: 5_000,
        }
    }

    /// Second stage: same hyperparameters, twice the iterations, warm
    /// started from iteration 100k of stage 1.
    pub fn stage2(stage1_checkpoints: impl Into<PathBuf>) -> Self {
        TrainConfig {
            stage: 2,
            total_iters: 1_000_000,
            milestones: vec![500_000, 800_000, 900_000, 950_000],
            loss: LossKind::Stage2,
            warm_start_from: Some((stage1_checkpoints.into(), 100_000)),
            ..TrainConfig::stage1()
        }
    }

    /// Laptop-sized run: 200 iterations at batch 4 with the milestones at the
    /// same fractions of the run as the full schedule.
    pub fn desk() -> Self {
        TrainConfig {
            total_iters: 200,
            batch: 4,
            lr0: 1e-3,
            milestones: vec![100, 160, 180, 190],
            eval_every: 50,
            checkpoint_every: 50,
            ..TrainConfig::stage1()
        }
    }

    pub fn lr_at(&self, iter: u64) -> f64 {
        lr_at(self.lr0, &self.milestones, iter)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(1..=2).contains(&self.stage) {
            return bad(format!("train.stage must be 1 or 2, got {}", self.stage));
        }
        if self.batch == 0 {
            return bad("train.batch must be at least 1".into());
        }
        if !(self.lr0 > 0.0 && self.lr0.is_finite()) {
            return bad(format!("train.lr0 must be positive, got {}", self.lr0));
        }
        if self.milestones.windows(2).any(|w| w[0] >= w[1]) {
            return bad(format!("train.milestones must be strictly increasing: {:?}", self.milestones));
        }
        if self.milestones.last().is_some_and(|&m| m >= self.total_iters) {
            return bad(format!("train.milestones must be below total_iters {}", self.total_iters));
        }
        let a = &self.adam;
        if !(0.0..1.0).contains(&a.beta1) || !(0.0..1.0).contains(&a.beta2) || !(a.eps > 0.0) {
            return bad(format!("invalid Adam settings beta1={} beta2={} eps={}", a.beta1, a.beta2, a.eps));
        }
        self.loss_weights.validate()?;
        if self.stage == 2 && self.warm_start_from.is_none() {
            return bad("stage 2 requires train.warm_start_from".into());
        }
        Ok(())
    }

    pub fn loss_label(&self) -> String {
        match self.loss {
            LossKind::L1 => "l1".into(),
            LossKind::Stage2 => {
                format!("stage2(alpha={},beta={})", self.loss_weights.alpha, self.loss_weights.beta)
            }
        }
    }

    pub fn to_pairs(&self) -> Vec<(&'static str, String)> {
        let (ws, pick) = match &self.warm_start_from {
            Some((p, i)) => (p.display().to_string(), i.to_string()),
            None => (String::new(), String::new()),
        };
        let ms: Vec<String> = self.milestones.iter().map(u64::to_string).collect();
        vec![
            ("stage", self.stage.to_string()),
            ("total_iters", self.total_iters.to_string()),
            ("batch", self.batch.to_string()),
            ("lr0", self.lr0.to_string()),
            ("milestones", ms.join(",")),
            ("adam_beta1", self.adam.beta1.to_string()),
            ("adam_beta2", self.adam.beta2.to_string()),
            ("adam_eps", self.adam.eps.to_string()),
            ("loss", self.loss.to_string()),
            ("alpha", self.loss_weights.alpha.to_string()),
            ("beta", self.loss_weights.beta.to_string()),
            ("kl_epsilon", self.loss_weights.kl_epsilon.to_string()),
            ("warm_start_from", ws),
            ("pick_iter", pick),
            ("seed", self.seed.to_string()),
            ("eval_every", self.eval_every.to_string()),
            ("checkpoint_every", self.checkpoint_every.to_string()),
        ]
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        fn num<V: FromStr>(key: &str, v: &str) -> Result<V> {
            v.trim().parse().map_err(|_| Error::Config(format!("train.{key}: cannot parse '{v}'")))
        }
        match key {
            "stage" => self.stage = num(key, value)?,
            "total_iters" => self.total_iters = num(key, value)?,
            "batch" => self.batch = num(key, value)?,
            "lr0" => self.lr0 = num(key, value)?,
            "milestones" => {
                self.milestones = value
                    .split(',')
                    .map(str::trim)
                    .filter(|s| !s.is_empty())
                    .map(|s| num(key, s))
                    .collect::<Result<_>>()?
            }
            "adam_beta1" => self.adam.beta1 = num(key, value)?,
            "adam_beta2" => self.adam.beta2 = num(key, value)?,
            "adam_eps" => self.adam.eps = num(key, value)?,
            "loss" => self.loss = value.trim().parse()?,
            "alpha" => self.loss_weights.alpha = num(key, value)?,
            "beta" => self.loss_weights.beta = num(key, value)?,
            "kl_epsilon" => self.loss_weights.kl_epsilon = num(key, value)?,
            "warm_start_from" => {
                let v = value.trim();
                self.warm_start_from = if v.is_empty() {
                    None
                } else {
                    let pick = self.warm_start_from.as_ref().map_or(100_000, |w| w.1);
                    Some((PathBuf::from(v), pick))
                }
            }
            "pick_iter" => {
                let v = value.trim();
                if !v.is_empty() {
                    let pick = num(key, v)?;
                    let path = self.warm_start_from.take().map(|w| w.0).unwrap_or_default();
                    self.warm_start_from = Some((path, pick));
                }
            }
            "seed" => self.seed = num(key, value)?,
            "eval_every" => self.eval_every = num(key, value)?,
            "checkpoint_every" => self.checkpoint_every = num(key, value)?,
            _ => return Err(Error::Config(format!("unknown key train.{key}"))),
        }
        Ok(())
    }
}

/// How a run obtains its parameters and optimizer state.
pub enum Start<T> {
    /// Seeded initialization, fresh optimizer, iteration 0.
    Fresh,
    /// Continue a checkpoint exactly, optimizer state included.
    Resume(Checkpoint<T>),
    /// Given weights, fresh optimizer, iteration 0.
    Warm { params: ParamStore<T>, source: String },
}

#[derive(Clone, Debug, PartialEq)]
pub struct LogRow {
    /// Completed steps, so the first row is 1.
    pub iter: u64,
    pub lr: f64,
    pub loss: f64,
    pub eval_psnr: Option<f64>,
}

impl LogRow {
    pub fn to_csv(&self) -> String {
        let eval = self.eval_psnr.map(crate::metrics::fmt_metric).unwrap_or_default();
        format!("{},{:e},{:.8},{}", self.iter, self.lr, self.loss, eval)
    }
}

pub struct TrainJob<'a, T> {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub data: &'a mut PairStore,
    pub patch_hr: usize,
    pub augment: bool,
    /// Held-out pairs scored by mean Y-PSNR every `eval_every` steps.
    pub eval_set: &'a [ImagePair<T>],
    /// Where the CSV log and checkpoints go; nothing is written when `None`.
    pub out_dir: Option<PathBuf>,
    /// Called with every log row as it is produced.
    pub progress: Option<&'a mut dyn FnMut(&LogRow)>,
}

#[derive(Clone, Debug)]
pub struct TrainRun<T> {
    pub checkpoint: Checkpoint<T>,
    pub header: String,
    pub log: Vec<LogRow>,
}

impl<T> TrainRun<T> {
    /// Mean loss over log rows `range` (clamped to the log length).
    pub fn mean_loss(&self, range: std::ops::Range<usize>) -> f64 {
        let r = range.start.min(self.log.len())..range.end.min(self.log.len());
        let n = r.len().max(1) as f64;
        self.log[r].iter().map(|row| row.loss).sum::<f64>() / n
    }
}

/// Generator for the data draws of step `iter`; depends only on the seed
/// and the step, so a resumed run sees the same batches.
pub fn step_rng(seed: u64, iter: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x7472_6169_6e5f_7374);
    rng.set_stream(iter);
    rng
}

/// Assembles one `(lr, hr)` training batch.
pub fn sample_batch<T: Scalar, R: Rng + ?Sized>(
    data: &mut PairStore,
    batch: usize,
    patch_hr: usize,
    do_augment: bool,
    rng: &mut R,
) -> Result<(Tensor<T>, Tensor<T>)> {
    if data.is_empty() {
        return Err(Error::Dataset("training set is empty".into()));
    }
    let s = data.scale();
    let mut lrs = Vec::with_capacity(batch);
    let mut hrs = Vec::with_capacity(batch);
    for _ in 0..batch {
        let pair = data.get(rng.gen_range(0..data.len()))?;
        let (lh, lw) = pair.lr.dims();
        let (lp, hp) = if lh * s < patch_hr || lw * s < patch_hr {
            let (hr, lr) = pad_pair(&pair.hr, &pair.lr, s, patch_hr);
            sample_patch(&hr, &lr, s, patch_hr, rng)?
        } else {
            sample_patch(&pair.hr, &pair.lr, s, patch_hr, rng)?
        };
        let (mut lt, mut ht) = (lp.to_tensor::<T>(), hp.to_tensor::<T>());
        if do_augment {
            (lt, ht) = augment(&lt, &ht, rng)?;
        }
        lrs.push(lt);
        hrs.push(ht);
    }
    Ok((Tensor::stack(&lrs)?, Tensor::stack(&hrs)?))
}

/// Mean Y-channel PSNR of the model over `pairs`, shaving `scale` pixels.
pub fn evaluate_psnr<T: Scalar>(model: &ModelConfig, params: &ParamStore<T>, pairs: &[ImagePair<T>]) -> Result<f64> {
    let mut total = 0.0;
    for p in pairs {
        let sr = infer(model, params, &p.lr)?;
        total += psnr(&rgb_to_y(&sr)?, &rgb_to_y(&p.hr)?, p.scale)?;
    }
    Ok(total / pairs.len().max(1) as f64)
}

/// Loss value and parameter gradients for one batch.
pub fn loss_and_grads<T: Scalar>(
    model: &ModelConfig,
    cfg: &TrainConfig,
    params: &ParamStore<T>,
    lr: &Tensor<T>,
    hr: &Tensor<T>,
) -> Result<(f64, ParamStore<T>)> {
    let mut tape = Tape::new(params);
    let x = tape.constant(lr.clone());
    let sr = forward(&mut tape, model, &x)?;
    let loss = match cfg.loss {
        LossKind::L1 => tape.l1_loss(sr, hr)?,
        LossKind::Stage2 => tape.stage2_loss(sr, hr, &cfg.loss_weights)?,
    };
    let value = tape.value_of(loss)?.item()?.as_f64();
    if !value.is_finite() {
        return Err(Error::NonFinite(format!("loss is {value}")));
    }
    tape.backward(loss)?;
    Ok((value, tape.into_grads()))
}

struct LogSink {
    file: Option<fs::File>,
    path: PathBuf,
}

impl LogSink {
    fn open(out_dir: Option<&Path>, header: &str, append: bool) -> Result<Self> {
        let Some(dir) = out_dir else {
            return Ok(LogSink { file: None, path: PathBuf::new() });
        };
        fs::create_dir_all(dir).map_err(io_err(dir))?;
        let path = dir.join(LOG_FILE);
        let fresh = !append || !path.exists();
        let mut file = OpenOptions::new()
            .create(true)
            .write(true)
            .append(!fresh)
            .truncate(fresh)
            .open(&path)
            .map_err(io_err(&path))?;
        let text = if fresh { format!("{header}\n{LOG_COLUMNS}\n") } else { format!("{header}\n") };
        file.write_all(text.as_bytes()).map_err(io_err(&path))?;
        Ok(LogSink { file: Some(file), path })
    }

    fn row(&mut self, row: &LogRow) -> Result<()> {
        if let Some(f) = &mut self.file {
            writeln!(f, "{}", row.to_csv()).map_err(io_err(&self.path))?;
        }
        Ok(())
    }
}

/// Runs steps until `train.total_iters` completed steps. Each step samples
/// a batch, runs forward and backward, and applies one Adam update.
/// A non-finite loss or gradient halts the run; the pre-step state is then
/// saved as `ckpt_<iter>.hsnc` and `Error::Diverged` is returned.
pub fn train<T: Scalar>(job: TrainJob<'_, T>, start: Start<T>) -> Result<TrainRun<T>> {
    let TrainJob { model, train: cfg, data, patch_hr, augment: do_augment, eval_set, out_dir, mut progress } = job;
    model.validate()?;
    cfg.validate()?;
    if patch_hr == 0 || patch_hr % model.scale != 0 {
        return Err(Error::Config(format!("HR patch {patch_hr} is not a positive multiple of scale {}", model.scale)));
    }
    if data.scale() != model.scale {
        return Err(Error::Config(format!("dataset scale {} differs from model scale {}", data.scale(), model.scale)));
    }
    let (mut params, mut adam, mut iter, origin, append) = match start {
        Start::Fresh => {
            let p = init_params::<T>(&model, cfg.seed)?;
            let a = AdamState::new(&p);
            (p, a, 0, format!("fresh(seed={})", cfg.seed), false)
        }
        Start::Resume(ck) => {
            if ck.config != model {
                return Err(Error::Config("checkpoint model config differs from the run's model config".into()));
            }
            let a = ck.optimizer.ok_or_else(|| Error::Config("resume checkpoint has no optimizer state".into()))?;
            (ck.params, a, ck.iteration, format!("resume(iter={})", ck.iteration), true)
        }
        Start::Warm { params, source } => {
            crate::model::check_params(&model, &params)?;
            let a = AdamState::new(&params);
            (params, a, 0, format!("warm({source}) optimizer=reset"), false)
        }
    };
    if iter > cfg.total_iters {
        return Err(Error::Config(format!("start iteration {iter} is past total_iters {}", cfg.total_iters)));
    }
    let header = format!("# stage={} loss={} start={origin}", cfg.stage, cfg.loss_label());
    let mut sink = LogSink::open(out_dir.as_deref(), &header, append)?;
    let save = |params: &ParamStore<T>, adam: &AdamState<T>, iteration: u64, name: &str| -> Result<()> {
        if let Some(dir) = &out_dir {
            let ck = Checkpoint { config: model.clone(), iteration, params: params.clone(), optimizer: Some(adam.clone()) };
            save_checkpoint(dir.join(name), &ck)?;
        }
        Ok(())
    };

    let mut log = Vec::new();
    while iter < cfg.total_iters {
        let lr = cfg.lr_at(iter);
        let mut rng = step_rng(cfg.seed, iter);
        let (x, y) = sample_batch::<T, _>(data, cfg.batch, patch_hr, do_augment, &mut rng)?;
        let step = loss_and_grads(&model, &cfg, &params, &x, &y)
            .and_then(|(loss, grads)| adam_step(&mut params, &grads, &mut adam, lr, cfg.adam).map(|_| loss));
        let loss = match step {
            Ok(l) => l,
            Err(Error::NonFinite(detail)) => {
                save(&params, &adam, iter, &checkpoint_name(iter))?;
                return Err(Error::Diverged { iter, detail });
            }
            Err(e) => return Err(e),
        };
        iter += 1;
        let eval_psnr = if !eval_set.is_empty()
            && ((cfg.eval_every > 0 && iter % cfg.eval_every == 0) || iter == cfg.total_iters)
        {
            Some(evaluate_psnr(&model, &params, eval_set)?)
        } else {
            None
        };
        let row = LogRow { iter, lr, loss, eval_psnr };
        sink.row(&row)?;
        if let Some(f) = progress.as_mut() {
            f(&row);
        }
        log.push(row);
        if cfg.checkpoint_every > 0 && iter % cfg.checkpoint_every == 0 {
            save(&params, &adam, iter, &checkpoint_name(iter))?;
        }
    }
    save(&params, &adam, iter, FINAL_CHECKPOINT)?;
    let checkpoint = Checkpoint { config: model, iteration: iter, params, optimizer: Some(adam) };
    Ok(TrainRun { checkpoint, header, log })
}

/// Finds the stage-1 checkpoint to warm start from. A directory yields its
/// latest `ckpt_<n>.hsnc` with `n <= pick_iter`; a file must itself be at
/// or before `pick_iter`.
pub fn resolve_warm_start(path: &Path, pick_iter: u64) -> Result<PathBuf> {
    if path.is_dir() {
        let mut best: Option<(u64, PathBuf)> = None;
        for e in fs::read_dir(path).map_err(io_err(path))? {
            let p = e.map_err(io_err(path))?.path();
            let n = p
                .file_name()
                .and_then(|f| f.to_str())
                .and_then(|f| f.strip_prefix("ckpt_")?.strip_suffix(".hsnc")?.parse::<u64>().ok());
            if let Some(n) = n.filter(|&n| n <= pick_iter) {
                if best.as_ref().is_none_or(|b| n > b.0) {
                    best = Some((n, p));
                }
            }
        }
        return best
            .map(|b| b.1)
            .ok_or_else(|| Error::Config(format!("no checkpoint at or before iteration {pick_iter} in {}", path.display())));
    }
    if !path.exists() {
        return Err(Error::Io {
            path: path.to_path_buf(),
            source: std::io::Error::new(std::io::ErrorKind::NotFound, "checkpoint not found"),
        });
    }
    Ok(path.to_path_buf())
}

/// Loads the stage-1 weights chosen by `resolve_warm_start` and checks them
/// against `model`.
pub fn load_warm_start<T: Scalar>(path: &Path, pick_iter: u64, model: &ModelConfig) -> Result<Checkpoint<T>> {
    let file = resolve_warm_start(path, pick_iter)?;
    let ck: Checkpoint<T> = load_checkpoint(&file)?;
    if ck.iteration > pick_iter {
        return Err(Error::Config(format!(
            "{} is at iteration {} which is after pick_iter {pick_iter}",
            file.display(),
            ck.iteration
        )));
    }
    if &ck.config != model {
        return Err(Error::Config(format!("{} was trained with a different model config", file.display())));
    }
    Ok(ck)
}

/// Second stage: stage-1 weights from `train.warm_start_from`, a fresh
/// optimizer and schedule, and the combined L1 + KL loss.
pub fn warm_start<T: Scalar>(job: TrainJob<'_, T>) -> Result<TrainRun<T>> {
    let (path, pick) = job
        .train
        .warm_start_from
        .clone()
        .ok_or_else(|| Error::Config("warm start needs train.warm_start_from".into()))?;
    if job.train.stage != 2 || job.train.loss != LossKind::Stage2 {
        return Err(Error::Config("warm start runs stage 2 with loss = stage2".into()));
    }
    let ck = load_warm_start::<T>(&path, pick, &job.model)?;
    let source = format!("{}@{}", path.display(), ck.iteration);
    train(job, Start::Warm { params: ck.params, source })
}
