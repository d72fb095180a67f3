//! `key = value` run configuration with `model.`, `train.` and `data.`
//! sections, plus `--section.key=value` command-line overrides.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use hasn::data::DatasetSpec;
use hasn::model::ModelConfig;
use hasn::train::TrainConfig;

pub const SECTIONS: [&str; 3] = ["model", "train", "data"];
pub const RESOLVED_CONFIG: &str = "resolved.cfg";

/// A parse or validation problem; `line` is set for config-file errors.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfigError {
    pub source: String,
    pub line: Option<usize>,
    pub message: String,
}

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self.line {
            Some(l) => write!(f, "{}:{l}: {}", self.source, self.message),
            None => write!(f, "{}: {}", self.source, self.message),
        }
    }
}

/// Data settings: the dataset description plus evaluation and synthetic
/// data options.
#[derive(Clone, Debug, PartialEq)]
pub struct DataConfig {
    pub spec: DatasetSpec,
    /// Held-out HR images scored during training.
    pub eval_dir: Option<PathBuf>,
    /// Decoded-image memory budget for training pairs.
    pub memory_mb: usize,
    /// When no `hr_dir` is given, generate this many synthetic training
    /// images inside the output directory.
    pub synthetic_count: usize,
    pub synthetic_eval: usize,
    pub synthetic_side: usize,
    hr_from_cli: bool,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            spec: DatasetSpec::default(),
            eval_dir: None,
            memory_mb: 4096,
            synthetic_count: 0,
            synthetic_eval: 0,
            synthetic_side: 96,
            hr_from_cli: false,
        }
    }
}

fn parse<V: std::str::FromStr>(key: &str, v: &str) -> Result<V, String> {
    v.trim().parse().map_err(|_| format!("data.{key}: cannot parse '{v}'"))
}

fn opt_path(v: &str) -> Option<PathBuf> {
    let v = v.trim();
    (!v.is_empty()).then(|| PathBuf::from(v))
}

impl DataConfig {
    fn set(&mut self, key: &str, value: &str, from_cli: bool) -> Result<(), String> {
        let s = &mut self.spec;
        match key {
            "hr_dir" => {
                if from_cli && !self.hr_from_cli {
                    s.hr_dirs.clear();
                    self.hr_from_cli = true;
                }
                s.hr_dirs.extend(opt_path(value));
            }
            "lr_dir" => s.lr_dir = opt_path(value),
            "scale" => s.scale = parse(key, value)?,
            "patch" => s.patch = parse(key, value)?,
            "patch_is_lr" => s.patch_is_lr = parse(key, value)?,
            "augment" => s.augment = parse(key, value)?,
            "cache_lr" => s.cache_lr = parse(key, value)?,
            "eval_dir" => self.eval_dir = opt_path(value),
            "memory_mb" => self.memory_mb = parse(key, value)?,
            "synthetic_count" => self.synthetic_count = parse(key, value)?,
            "synthetic_eval" => self.synthetic_eval = parse(key, value)?,
            "synthetic_side" => self.synthetic_side = parse(key, value)?,
            _ => return Err(format!("unknown key data.{key}")),
        }
        Ok(())
    }

    fn to_pairs(&self) -> Vec<(&'static str, String)> {
        let s = &self.spec;
        let path = |p: &Option<PathBuf>| p.as_ref().map(|p| p.display().to_string()).unwrap_or_default();
        let mut v: Vec<(&'static str, String)> = s.hr_dirs.iter().map(|d| ("hr_dir", d.display().to_string())).collect();
        if v.is_empty() {
            v.push(("hr_dir", String::new()));
        }
        v.extend([
            ("lr_dir", path(&s.lr_dir)),
            ("scale", s.scale.to_string()),
            ("patch", s.patch.to_string()),
            ("patch_is_lr", s.patch_is_lr.to_string()),
            ("augment", s.augment.to_string()),
            ("cache_lr", s.cache_lr.to_string()),
            ("eval_dir", path(&self.eval_dir)),
            ("memory_mb", self.memory_mb.to_string()),
            ("synthetic_count", self.synthetic_count.to_string()),
            ("synthetic_eval", self.synthetic_eval.to_string()),
            ("synthetic_side", self.synthetic_side.to_string()),
        ]);
        v
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub data: DataConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig { model: ModelConfig::paper(), train: TrainConfig::stage1(), data: DataConfig::default() }
    }
}

impl RunConfig {
    /// Named starting points. `desk-smoke` trains the small model on
    /// generated images for a couple of hundred steps.
    pub fn profile(name: &str) -> Option<Self> {
        match name {
            "paper" => Some(RunConfig::default()),
            "desk-smoke" => {
                let mut data = DataConfig::default();
                data.spec.patch = 64;
                data.synthetic_count = 32;
                data.synthetic_eval = 8;
                Some(RunConfig { model: ModelConfig::desk(), train: TrainConfig::desk(), data })
            }
            _ => None,
        }
    }

    pub fn set(&mut self, dotted: &str, value: &str, from_cli: bool) -> Result<(), String> {
        let (section, key) = dotted.split_once('.').ok_or_else(|| format!("key '{dotted}' has no section prefix"))?;
        match section {
            "model" => self.model.set(key, value.trim()).map_err(|e| e.to_string()),
            "train" => self.train.set(key, value).map_err(|e| e.to_string()),
            "data" => self.data.set(key, value, from_cli),
            _ => Err(format!("unknown section '{section}' (expected one of {})", SECTIONS.join(", "))),
        }
    }

    /// Applies a config file: `key = value` lines, `#` comments, and either
    /// dotted keys or `[section]` headers.
    pub fn apply_text(&mut self, text: &str, source: &str) -> Result<(), ConfigError> {
        let err = |line: usize, message: String| ConfigError { source: source.to_string(), line: Some(line), message };
        let mut section: Option<String> = None;
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            if let Some(name) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
                let name = name.trim();
                if !SECTIONS.contains(&name) {
                    return Err(err(i + 1, format!("unknown section [{name}]")));
                }
                section = Some(name.to_string());
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| err(i + 1, format!("expected 'key = value', got '{line}'")))?;
            let k = k.trim();
            let dotted = match &section {
                Some(s) if !k.contains('.') => format!("{s}.{k}"),
                _ => k.to_string(),
            };
            self.set(&dotted, v.trim(), false).map_err(|m| err(i + 1, m))?;
        }
        Ok(())
    }

    /// Profile, then file, then overrides, then validation.
    pub fn resolve(profile: Option<&str>, file: Option<&Path>, overrides: &[(String, String)]) -> Result<Self, ConfigError> {
        let plain = |source: &str, message: String| ConfigError { source: source.to_string(), line: None, message };
        let mut cfg = match profile {
            Some(p) => RunConfig::profile(p).ok_or_else(|| plain("--profile", format!("unknown profile '{p}' (expected paper or desk-smoke)")))?,
            None => RunConfig::default(),
        };
        if let Some(path) = file {
            let src = path.display().to_string();
            let text = fs::read_to_string(path).map_err(|e| plain(&src, format!("cannot read config: {e}")))?;
            cfg.apply_text(&text, &src)?;
        }
        for (k, v) in overrides {
            cfg.set(k, v, true).map_err(|m| plain(&format!("--{k}"), m))?;
        }
        cfg.model.validate().map_err(|e| plain("model", e.to_string()))?;
        if cfg.data.spec.scale != cfg.model.scale {
            if cfg.data.spec.scale != DatasetSpec::default().scale {
                return Err(plain("data.scale", format!("{} differs from model.scale {}", cfg.data.spec.scale, cfg.model.scale)));
            }
            cfg.data.spec.scale = cfg.model.scale;
        }
        Ok(cfg)
    }

    /// Dotted `key = value` text that resolves back to this config.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let mut emit = |section: &str, pairs: Vec<(&'static str, String)>| {
            for (k, v) in pairs {
                let _ = writeln!(out, "{section}.{k} = {v}");
            }
        };
        emit("model", self.model.to_pairs());
        emit("train", self.train.to_pairs());
        emit("data", self.data.to_pairs());
        out
    }
}

/// Splits `--model.x=1` / `--train.y 2` style overrides out of `args`.
pub fn extract_overrides(args: Vec<String>) -> Result<(Vec<String>, Vec<(String, String)>), ConfigError> {
    let mut rest = Vec::with_capacity(args.len());
    let mut overrides = Vec::new();
    let mut it = args.into_iter();
    while let Some(a) = it.next() {
        let is_override = a
            .strip_prefix("--")
            .and_then(|b| b.split_once('.'))
            .is_some_and(|(s, _)| SECTIONS.contains(&s));
        if !is_override {
            rest.push(a);
            continue;
        }
        let body = &a[2..];
        let (k, v) = match body.split_once('=') {
            Some((k, v)) => (k.to_string(), v.to_string()),
            None => {
                let v = it.next().ok_or_else(|| ConfigError {
                    source: a.clone(),
                    line: None,
                    message: "override is missing its value".into(),
                })?;
                (body.to_string(), v)
            }
        };
        overrides.push((k, v));
    }
    Ok((rest, overrides))
}
