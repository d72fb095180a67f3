//! Run-level trainer behaviour on small synthetic data.

use std::fs;
use std::path::Path;

use hasn::data::{synthetic_pairs, ImagePair, PairRgb8, PairStore};
use hasn::model::{load_checkpoint, Checkpoint, ModelConfig};
use hasn::train::*;
use hasn::Error;

const PATCH: usize = 32;

fn pairs() -> Vec<PairRgb8> {
    synthetic_pairs(8, 48, 4, 21).unwrap()
}

fn eval_set() -> Vec<ImagePair<f32>> {
    synthetic_pairs(2, 32, 4, 22).unwrap().iter().map(|p| p.to_pair("eval".into())).collect()
}

fn quick(iters: u64) -> TrainConfig {
    TrainConfig {
        total_iters: iters,
        batch: 2,
        lr0: 1e-3,
        milestones: vec![iters / 2],
        eval_every: 0,
        checkpoint_every: 0,
        seed: 3,
        ..TrainConfig::desk()
    }
}

fn run(cfg: TrainConfig, start: Start<f32>, out: Option<&Path>) -> hasn::Result<TrainRun<f32>> {
    let mut store = PairStore::from_pairs(pairs());
    let eval = eval_set();
    let job = TrainJob {
        model: ModelConfig::desk(),
        train: cfg,
        data: &mut store,
        patch_hr: PATCH,
        augment: true,
        eval_set: &eval,
        out_dir: out.map(Path::to_path_buf),
        progress: None,
    };
    train(job, start)
}

fn same_state(a: &Checkpoint<f32>, b: &Checkpoint<f32>) -> bool {
    a.iteration == b.iteration
        && a.params.bit_eq(&b.params)
        && a.optimizer.as_ref().unwrap().bit_eq(b.optimizer.as_ref().unwrap())
}

#[test]
fn seeded_runs_are_bitwise_identical() {
    let a = run(quick(12), Start::Fresh, None).unwrap();
    let b = run(quick(12), Start::Fresh, None).unwrap();
    assert!(same_state(&a.checkpoint, &b.checkpoint));
    assert_eq!(a.log, b.log);
    let c = run(TrainConfig { seed: 4, ..quick(12) }, Start::Fresh, None).unwrap();
    assert!(!a.checkpoint.params.bit_eq(&c.checkpoint.params));
}

#[test]
fn interrupted_run_resumes_exactly() {
    let dir = tempfile::tempdir().unwrap();
    let whole = run(quick(100), Start::Fresh, None).unwrap();
    let first = run(TrainConfig { checkpoint_every: 50, ..quick(100) }.with_total(50), Start::Fresh, Some(dir.path()))
        .unwrap();
    let ck: Checkpoint<f32> = load_checkpoint(dir.path().join(checkpoint_name(50))).unwrap();
    assert!(same_state(&ck, &first.checkpoint));
    let rest = run(quick(100), Start::Resume(ck), Some(dir.path())).unwrap();
    assert!(same_state(&rest.checkpoint, &whole.checkpoint));
    assert_eq!(rest.log, whole.log[50..]);

    // The log was appended to, not replaced.
    let text = fs::read_to_string(dir.path().join(LOG_FILE)).unwrap();
    let rows: Vec<&str> = text.lines().filter(|l| !l.starts_with('#') && !l.starts_with("iter")).collect();
    assert_eq!(rows.len(), 100);
    assert!(text.lines().nth(2).unwrap().starts_with("1,"));
    assert!(text.contains("start=resume(iter=50)"));
}

trait WithTotal {
    fn with_total(self, iters: u64) -> Self;
}

impl WithTotal for TrainConfig {
    /// Stops early while keeping the schedule of the longer run.
    fn with_total(mut self, iters: u64) -> Self {
        self.total_iters = iters;
        self.milestones.retain(|&m| m < iters);
        self
    }
}

#[test]
fn five_plus_five_equals_ten() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = TrainConfig { milestones: vec![], ..quick(10) };
    let ten = run(cfg.clone(), Start::Fresh, None).unwrap();
    run(TrainConfig { total_iters: 5, ..cfg.clone() }, Start::Fresh, Some(dir.path())).unwrap();
    let ck: Checkpoint<f32> = load_checkpoint(dir.path().join(FINAL_CHECKPOINT)).unwrap();
    assert_eq!(ck.optimizer.as_ref().unwrap().step, 5);
    let resumed = run(cfg, Start::Resume(ck), None).unwrap();
    assert!(same_state(&resumed.checkpoint, &ten.checkpoint));
}

#[test]
fn log_rows_follow_the_csv_layout() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = TrainConfig { eval_every: 4, checkpoint_every: 5, ..quick(10) };
    let r = run(cfg, Start::Fresh, Some(dir.path())).unwrap();
    let text = fs::read_to_string(dir.path().join(LOG_FILE)).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "# stage=1 loss=l1 start=fresh(seed=3)");
    assert_eq!(lines[1], "iter,lr,loss,eval_psnr");
    assert_eq!(lines.len(), 12);
    for (i, line) in lines[2..].iter().enumerate() {
        let cols: Vec<&str> = line.split(',').collect();
        assert_eq!(cols.len(), 4, "{line}");
        assert_eq!(cols[0], (i + 1).to_string());
        assert!(cols[2].parse::<f64>().unwrap().is_finite());
        let evaluated = matches!(i + 1, 4 | 8 | 10);
        assert_eq!(!cols[3].is_empty(), evaluated, "{line}");
    }
    assert_eq!(r.log[4].lr, 1e-3);
    assert_eq!(r.log[5].lr, 5e-4);
    for name in [checkpoint_name(5), checkpoint_name(10), FINAL_CHECKPOINT.to_string()] {
        assert!(dir.path().join(&name).exists(), "{name}");
    }
    assert!(!dir.path().join(checkpoint_name(4)).exists());
}

#[test]
fn schedule_is_a_non_increasing_staircase() {
    let c = TrainConfig::stage1();
    let levels: Vec<f64> = (0..=500_000).step_by(1000).map(|i| c.lr_at(i)).collect();
    assert!(levels.windows(2).all(|w| w[1] <= w[0]));
    let mut distinct = levels.clone();
    distinct.dedup();
    assert_eq!(distinct.len(), c.milestones.len() + 1);
    assert_eq!(c.lr_at(0), 2e-4);
    assert_eq!(c.lr_at(250_000), 1e-4);
    assert_eq!(c.lr_at(480_000), 1.25e-5);
}

fn stage2(from: &Path, pick: u64, beta: f64, iters: u64) -> TrainConfig {
    let mut c = TrainConfig {
        stage: 2,
        loss: LossKind::Stage2,
        warm_start_from: Some((from.to_path_buf(), pick)),
        ..quick(iters)
    };
    c.loss_weights.beta = beta;
    c
}

fn run_warm(cfg: TrainConfig, out: Option<&Path>) -> hasn::Result<TrainRun<f32>> {
    let mut store = PairStore::from_pairs(pairs());
    let job = TrainJob {
        model: ModelConfig::desk(),
        train: cfg,
        data: &mut store,
        patch_hr: PATCH,
        augment: true,
        eval_set: &[],
        out_dir: out.map(Path::to_path_buf),
        progress: None,
    };
    warm_start(job)
}

#[test]
fn warm_start_loads_stage1_weights_and_restarts_schedule() {
    let dir = tempfile::tempdir().unwrap();
    run(TrainConfig { checkpoint_every: 4, ..quick(12) }, Start::Fresh, Some(dir.path())).unwrap();
    let want: Checkpoint<f32> = load_checkpoint(dir.path().join(checkpoint_name(8))).unwrap();
    let got = load_warm_start::<f32>(dir.path(), 9, &ModelConfig::desk()).unwrap();
    assert_eq!(got.iteration, 8);
    assert!(got.params.bit_eq(&want.params));

    let out = tempfile::tempdir().unwrap();
    let r = run_warm(stage2(dir.path(), 9, 1.0, 6), Some(out.path())).unwrap();
    assert!(r.header.starts_with("# stage=2 loss=stage2(alpha=1,beta=1) start=warm("), "{}", r.header);
    assert!(r.header.ends_with("@8) optimizer=reset"), "{}", r.header);
    assert_eq!(r.log[0].iter, 1);
    assert_eq!(r.log[0].lr, 1e-3);
    assert_eq!(r.checkpoint.iteration, 6);
    assert_eq!(r.checkpoint.optimizer.as_ref().unwrap().step, 6);
    let first_line = fs::read_to_string(out.path().join(LOG_FILE)).unwrap().lines().next().unwrap().to_string();
    assert_eq!(first_line, r.header);
}

#[test]
fn stage2_without_kl_is_a_pure_l1_continuation() {
    let dir = tempfile::tempdir().unwrap();
    let s1 = run(quick(6), Start::Fresh, Some(dir.path())).unwrap();
    let file = dir.path().join(FINAL_CHECKPOINT);
    let a = run_warm(stage2(&file, 6, 0.0, 8), None).unwrap();
    let l1 = quick(8);
    let b = run(l1, Start::Warm { params: s1.checkpoint.params, source: "mem".into() }, None).unwrap();
    assert!(a.checkpoint.params.bit_eq(&b.checkpoint.params));
    let losses = |r: &TrainRun<f32>| r.log.iter().map(|l| l.loss).collect::<Vec<_>>();
    assert_eq!(losses(&a), losses(&b));
}

#[test]
fn warm_start_rejects_bad_sources() {
    let dir = tempfile::tempdir().unwrap();
    let missing = run_warm(stage2(&dir.path().join("nope.hsnc"), 5, 1.0, 2), None).unwrap_err();
    assert!(matches!(missing, Error::Io { .. }), "{missing}");

    run(TrainConfig { checkpoint_every: 4, ..quick(8) }, Start::Fresh, Some(dir.path())).unwrap();
    assert!(matches!(run_warm(stage2(dir.path(), 3, 1.0, 2), None), Err(Error::Config(_))));

    let other = ModelConfig { dim: 8, ..ModelConfig::desk() };
    assert!(load_warm_start::<f32>(dir.path(), 8, &other).is_err());
    let file = dir.path().join(checkpoint_name(8));
    assert!(load_warm_start::<f32>(&file, 4, &ModelConfig::desk()).is_err());

    let wrong_loss = TrainConfig { loss: LossKind::L1, ..stage2(dir.path(), 8, 1.0, 2) };
    assert!(run_warm(wrong_loss, None).is_err());
    let no_source = TrainConfig { warm_start_from: None, ..stage2(dir.path(), 8, 1.0, 2) };
    assert!(run_warm(no_source, None).is_err());
}

#[test]
fn divergence_halts_and_keeps_the_last_good_state() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = TrainConfig { lr0: 1e30, milestones: vec![], ..quick(20) };
    let err = run(cfg, Start::Fresh, Some(dir.path())).unwrap_err();
    let Error::Diverged { iter, .. } = err else { panic!("expected divergence, got {err}") };
    assert!(iter < 20);
    let ck: Checkpoint<f32> = load_checkpoint(dir.path().join(checkpoint_name(iter))).unwrap();
    assert_eq!(ck.iteration, iter);
    assert!(ck.params.iter().all(|(_, t)| t.all_finite()));
    let text = fs::read_to_string(dir.path().join(LOG_FILE)).unwrap();
    let rows = text.lines().skip(2).collect::<Vec<_>>();
    assert_eq!(rows.len() as u64, iter);
    assert!(rows.iter().all(|r| r.split(',').nth(2).unwrap().parse::<f64>().unwrap().is_finite()));
    assert!(!dir.path().join(FINAL_CHECKPOINT).exists());
}

#[test]
fn mismatched_inputs_are_rejected_before_training() {
    assert!(run(TrainConfig { batch: 0, ..quick(2) }, Start::Fresh, None).is_err());
    let mut store = PairStore::from_pairs(synthetic_pairs(2, 48, 2, 1).unwrap());
    let job = TrainJob {
        model: ModelConfig::desk(),
        train: quick(2),
        data: &mut store,
        patch_hr: PATCH,
        augment: false,
        eval_set: &[],
        out_dir: None,
        progress: None,
    };
    assert!(matches!(train::<f32>(job, Start::Fresh), Err(Error::Config(_))));
}
