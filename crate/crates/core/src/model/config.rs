use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::tensor::Activation;

/// How the gated branch is combined with the second FC branch.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum FuseMode {
    Multiply,
    Add,
}

impl fmt::Display for FuseMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            FuseMode::Multiply => "multiply",
            FuseMode::Add => "add",
        })
    }
}

impl FromStr for FuseMode {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "multiply" | "mul" => Ok(FuseMode::Multiply),
            "add" | "sum" => Ok(FuseMode::Add),
            other => Err(format!("unknown fuse mode '{other}' (expected multiply|add)")),
        }
    }
}

/// Where the block input re-enters: after the final depthwise conv
/// (`DW(FC(F_d)) + F_in`) or before it (`DW(FC(F_d) + F_in)`).
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum ResidualPosition {
    AfterDwConv,
    BeforeDwConv,
}

impl fmt::Display for ResidualPosition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ResidualPosition::AfterDwConv => "after_dwconv",
            ResidualPosition::BeforeDwConv => "before_dwconv",
        })
    }
}

impl FromStr for ResidualPosition {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "after_dwconv" => Ok(ResidualPosition::AfterDwConv),
            "before_dwconv" => Ok(ResidualPosition::BeforeDwConv),
            other => Err(format!("unknown residual position '{other}' (expected after_dwconv|before_dwconv)")),
        }
    }
}

/// Full architectural description of a network. Every ablation variant is a
/// particular setting of these fields.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    pub dim: usize,
    pub num_blocks: usize,
    pub dw_kernel: usize,
    pub scale: usize,
    /// Width multiplier of the parallel FC branches; `dim * expansion` must be integral.
    pub expansion: f64,
    pub fuse_mode: FuseMode,
    /// Gate nonlinearity; also used inside the channel attention block.
    pub gate_activation: Activation,
    pub use_esa: bool,
    pub use_cab: bool,
    /// Whether the third parallel FC branch exists at all. Without it the
    /// block is the plain two-branch convolutional block.
    pub third_branch: bool,
    pub per_block_residual: bool,
    pub block_residual_position: ResidualPosition,
    /// A 1x1 conv after each depthwise conv.
    pub dw_pointwise: bool,
    /// ESA works on `hidden / esa_reduction` channels.
    pub esa_reduction: usize,
    /// CAB's 3x3 branch narrows `dim` to `dim / cab_reduction`.
    pub cab_reduction: usize,
    /// Squeeze ratio of the channel-attention gate inside CAB.
    pub ca_reduction: usize,
}

pub const LN_EPS: f64 = 1e-6;

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            dim: 52,
            num_blocks: 6,
            dw_kernel: 7,
            scale: 4,
            expansion: 3.0,
            fuse_mode: FuseMode::Multiply,
            gate_activation: Activation::Relu6,
            use_esa: true,
            use_cab: true,
            third_branch: true,
            per_block_residual: false,
            block_residual_position: ResidualPosition::AfterDwConv,
            dw_pointwise: false,
            esa_reduction: 26,
            cab_reduction: 2,
            ca_reduction: 13,
        }
    }
}

impl ModelConfig {
    /// The published configuration: 6 blocks, 52 channels, 7x7 depthwise kernels, x4.
    pub fn paper() -> Self {
        Self::default()
    }

    /// Attention-free two-branch convolutional block network.
    pub fn conv_block_only() -> Self {
        ModelConfig { use_esa: false, use_cab: false, third_branch: false, ..Self::default() }
    }

    /// Small network for laptop-scale runs and tests.
    pub fn desk() -> Self {
        ModelConfig {
            dim: 16,
            num_blocks: 2,
            esa_reduction: 8,
            cab_reduction: 2,
            ca_reduction: 4,
            ..Self::default()
        }
    }

    /// Channel width of the parallel FC branches.
    pub fn hidden(&self) -> usize {
        (self.dim as f64 * self.expansion).round() as usize
    }

    pub fn esa_channels(&self) -> usize {
        self.hidden() / self.esa_reduction.max(1)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.dim == 0 {
            return bad("dim must be positive".into());
        }
        if self.dw_kernel.is_multiple_of(2) {
            return bad(format!("dw_kernel must be odd, got {}", self.dw_kernel));
        }
        if !matches!(self.scale, 2..=4) {
            return bad(format!("scale must be 2, 3 or 4, got {}", self.scale));
        }
        let h = self.dim as f64 * self.expansion;
        if !(h >= 1.0) || (h - h.round()).abs() > 1e-9 {
            return bad(format!("dim*expansion = {h} is not a positive integer"));
        }
        if self.use_esa && !self.third_branch {
            return bad("use_esa requires third_branch".into());
        }
        if self.use_esa && (self.esa_reduction == 0 || !self.hidden().is_multiple_of(self.esa_reduction)) {
            return bad(format!("esa_reduction {} must divide hidden width {}", self.esa_reduction, self.hidden()));
        }
        if self.use_cab {
            for (name, r) in [("cab_reduction", self.cab_reduction), ("ca_reduction", self.ca_reduction)] {
                if r == 0 || !self.dim.is_multiple_of(r) {
                    return bad(format!("{name} {r} must divide dim {}", self.dim));
                }
            }
        }
        Ok(())
    }

    /// `key = value` pairs in a fixed order; inverse of [`ModelConfig::set`].
    pub fn to_pairs(&self) -> Vec<(&'static str, String)> {
        vec![
            ("dim", self.dim.to_string()),
            ("num_blocks", self.num_blocks.to_string()),
            ("dw_kernel", self.dw_kernel.to_string()),
            ("scale", self.scale.to_string()),
            ("expansion", self.expansion.to_string()),
            ("fuse_mode", self.fuse_mode.to_string()),
            ("gate_activation", self.gate_activation.to_string()),
            ("use_esa", self.use_esa.to_string()),
            ("use_cab", self.use_cab.to_string()),
            ("third_branch", self.third_branch.to_string()),
            ("per_block_residual", self.per_block_residual.to_string()),
            ("block_residual_position", self.block_residual_position.to_string()),
            ("dw_pointwise", self.dw_pointwise.to_string()),
            ("esa_reduction", self.esa_reduction.to_string()),
            ("cab_reduction", self.cab_reduction.to_string()),
            ("ca_reduction", self.ca_reduction.to_string()),
        ]
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        fn parse<V: FromStr>(key: &str, v: &str) -> Result<V>
        where
            V::Err: fmt::Display,
        {
            v.parse::<V>().map_err(|e| Error::Config(format!("model.{key} = '{v}': {e}")))
        }
        let v = value.trim();
        match key {
            "dim" => self.dim = parse(key, v)?,
            "num_blocks" => self.num_blocks = parse(key, v)?,
            "dw_kernel" => self.dw_kernel = parse(key, v)?,
            "scale" => self.scale = parse(key, v)?,
            "expansion" => self.expansion = parse(key, v)?,
            "fuse_mode" => self.fuse_mode = parse(key, v)?,
            "gate_activation" => self.gate_activation = parse(key, v)?,
            "use_esa" => self.use_esa = parse(key, v)?,
            "use_cab" => self.use_cab = parse(key, v)?,
            "third_branch" => self.third_branch = parse(key, v)?,
            "per_block_residual" => self.per_block_residual = parse(key, v)?,
            "block_residual_position" => self.block_residual_position = parse(key, v)?,
            "dw_pointwise" => self.dw_pointwise = parse(key, v)?,
            "esa_reduction" => self.esa_reduction = parse(key, v)?,
            "cab_reduction" => self.cab_reduction = parse(key, v)?,
            "ca_reduction" => self.ca_reduction = parse(key, v)?,
            other => return Err(Error::Config(format!("unknown model key '{other}'"))),
        }
        Ok(())
    }

    pub fn to_text(&self) -> String {
        self.to_pairs().into_iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut cfg = ModelConfig::default();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected 'key = value'", lineno + 1)))?;
            cfg.set(k.trim(), v)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}
