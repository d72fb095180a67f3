use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{Tape, Var};
use crate::error::Result;
use crate::params::ParamStore;

#[derive(Clone, Debug)]
pub struct GradCheckConfig {
    /// Central-difference step.
    pub step: f64,
    pub tol: f64,
    /// Entries where both analytic and numeric magnitudes are at or below
    /// this are not scored.
    pub abs_floor: f64,
    /// Tensors with more entries than this are sampled.
    pub sample_above: usize,
    pub samples: usize,
    pub seed: u64,
}

impl GradCheckConfig {
    pub fn with_tol(tol: f64) -> Self {
        GradCheckConfig { step: 1e-4, tol, abs_floor: 1e-6, sample_above: 10_000, samples: 256, seed: 0x5eed }
    }
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        Self::with_tol(1e-4)
    }
}

#[derive(Clone, Debug)]
pub struct ParamCheck {
    pub name: String,
    pub checked: usize,
    pub max_rel_err: f64,
    /// Flat index of the worst entry.
    pub worst: usize,
    pub analytic: f64,
    pub numeric: f64,
}

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub params: Vec<ParamCheck>,
    pub tol: f64,
    pub passed: bool,
    /// Set when a forward evaluation produced a non-finite value.
    pub failure: Option<String>,
}

impl GradCheckReport {
    pub fn max_rel_err(&self) -> f64 {
        self.params.iter().map(|p| p.max_rel_err).fold(0.0, f64::max)
    }
}

fn eval<F>(f: &F, params: &ParamStore<f64>) -> Result<f64>
where
    F: Fn(&mut Tape<f64>) -> Result<Var>,
{
    let mut tape = Tape::new(params);
    let out = f(&mut tape)?;
    tape.value_of(out)?.item()
}

/// Compares tape gradients of the scalar built by `f` against central finite
/// differences, entry by entry, for every parameter in `params`.
pub fn grad_check<F>(f: F, params: &ParamStore<f64>, cfg: &GradCheckConfig) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape<f64>) -> Result<Var>,
{
    let analytic = {
        let mut tape = Tape::new(params);
        let out = f(&mut tape)?;
        let v = tape.value_of(out)?.item()?;
        if !v.is_finite() {
            return Ok(GradCheckReport {
                params: Vec::new(),
                tol: cfg.tol,
                passed: false,
                failure: Some(format!("forward value is {v} at the unperturbed point")),
            });
        }
        tape.backward(out)?;
        tape.into_grads()
    };

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut work = params.clone();
    let mut report = GradCheckReport { params: Vec::new(), tol: cfg.tol, passed: true, failure: None };
    let names: Vec<String> = params.names().map(str::to_string).collect();

    for name in names {
        let len = params.require(&name)?.len();
        let mut idx: Vec<usize> = if len > cfg.sample_above {
            sample(&mut rng, len, cfg.samples.min(len)).into_vec()
        } else {
            (0..len).collect()
        };
        idx.sort_unstable();
        let ga = analytic.require(&name)?;
        let mut pc =
            ParamCheck { name: name.clone(), checked: 0, max_rel_err: 0.0, worst: 0, analytic: 0.0, numeric: 0.0 };
        for i in idx {
            let orig = params.require(&name)?.data()[i];
            work.get_mut(&name).expect("cloned store").data_mut()[i] = orig + cfg.step;
            let fp = eval(&f, &work)?;
            work.get_mut(&name).expect("cloned store").data_mut()[i] = orig - cfg.step;
            let fm = eval(&f, &work)?;
            work.get_mut(&name).expect("cloned store").data_mut()[i] = orig;
            if !fp.is_finite() || !fm.is_finite() {
                report.passed = false;
                report.failure = Some(format!("non-finite forward value perturbing {name}[{i}]"));
                return Ok(report);
            }
            let num = (fp - fm) / (2.0 * cfg.step);
            let ana = ga.data()[i];
            let scale = ana.abs().max(num.abs());
            if scale <= cfg.abs_floor {
                continue;
            }
            pc.checked += 1;
            let rel = (ana - num).abs() / scale;
            if rel > pc.max_rel_err {
                pc.max_rel_err = rel;
                pc.worst = i;
                pc.analytic = ana;
                pc.numeric = num;
            }
        }
        if pc.max_rel_err > cfg.tol {
            report.passed = false;
        }
        report.params.push(pc);
    }
    Ok(report)
}
