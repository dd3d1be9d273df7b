//! Flat `key = value` run configuration.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Architecture hyper-parameters. Everything here feeds the checkpoint digest.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    pub backbone_widths: Vec<usize>,
    pub selector_widths: Vec<usize>,
    pub encoder_depth_eighth: usize,
    pub encoder_depth_sixteenth: usize,
    pub heads: usize,
    pub mlp_ratio: usize,
    pub leaky_slope: f64,
    pub bn_eps: f64,
    pub bn_momentum: f64,
    pub ln_eps: f64,
    pub cubic_a: f64,
    pub positional_encoding: bool,
    /// Adds BN and activation after the last conv of down/up blocks.
    pub symmetric_resample: bool,
    pub residual_init: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            backbone_widths: vec![16, 32, 64, 64],
            selector_widths: vec![16, 32, 64, 96, 128],
            encoder_depth_eighth: 6,
            encoder_depth_sixteenth: 6,
            heads: 8,
            mlp_ratio: 4,
            leaky_slope: 0.01,
            bn_eps: 1e-5,
            bn_momentum: 0.1,
            ln_eps: 1e-5,
            cubic_a: -0.75,
            positional_encoding: false,
            symmetric_resample: false,
            residual_init: 0.0,
        }
    }
}

impl ModelConfig {
    /// Reduced widths and one encoder block per scale, for desk-scale runs
    /// and model-level gradient checks.
    pub fn compact() -> Self {
        ModelConfig {
            backbone_widths: vec![8, 16, 16, 16],
            selector_widths: vec![8, 16, 16, 32, 32],
            encoder_depth_eighth: 1,
            encoder_depth_sixteenth: 1,
            heads: 4,
            ..ModelConfig::default()
        }
    }

    /// Number of side outputs.
    pub fn sides(&self) -> usize {
        self.backbone_widths.len()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.backbone_widths.len() < 2 {
            return bad("backbone_widths needs at least two stages".into());
        }
        if self.selector_widths.len() != 5 {
            return bad(format!("selector_widths needs 5 entries (scales 1 to 1/16), got {}", self.selector_widths.len()));
        }
        if self.backbone_widths.iter().chain(&self.selector_widths).any(|&w| w == 0) {
            return bad("channel widths must be positive".into());
        }
        if self.heads == 0 {
            return bad("heads must be positive".into());
        }
        for (depth, width) in [(self.encoder_depth_eighth, self.selector_widths[3]), (self.encoder_depth_sixteenth, self.selector_widths[4])] {
            if depth > 0 && width % self.heads != 0 {
                return bad(format!("encoder width {width} is not divisible by {} heads", self.heads));
            }
        }
        if self.mlp_ratio == 0 {
            return bad("mlp_ratio must be positive".into());
        }
        if !(self.bn_eps > 0.0 && self.ln_eps > 0.0) {
            return bad("normalization epsilons must be positive".into());
        }
        if !(0.0..=1.0).contains(&self.bn_momentum) {
            return bad("bn_momentum must lie in [0, 1]".into());
        }
        Ok(())
    }

    /// Spatial extents must be multiples of this to survive the selector ladder.
    pub fn alignment(&self) -> usize {
        16usize.max(1 << (self.backbone_widths.len() - 1))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub model: ModelConfig,

    pub seed: u64,
    pub lr: f64,
    pub weight_decay: f64,
    pub batch: usize,
    pub epochs: [usize; 3],
    pub wbce_lambda: f64,
    pub wbce_eps: f64,
    pub crop: usize,
    pub refresh_every: usize,

    pub data_root: Option<PathBuf>,
    pub split_seed: u64,
    pub train_ratio: f64,
    pub downscale_limit: usize,
    pub downscale_inclusive: bool,
    /// When nonzero, train and evaluate on a generated dataset instead of `data_root`.
    pub synth_count: usize,
    pub synth_size: usize,
    pub synth_texture: bool,
    pub eval_split: EvalSplit,

    pub tile: usize,
    pub tolerance: f64,
    pub thresholds: usize,
    pub output_dir: PathBuf,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EvalSplit {
    Train,
    Eval,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            model: ModelConfig::default(),
            seed: 0,
            lr: 1e-4,
            weight_decay: 1e-8,
            batch: 2,
            epochs: [50, 50, 50],
            wbce_lambda: 1.1,
            wbce_eps: 1e-6,
            crop: 320,
            refresh_every: 5,
            data_root: None,
            split_seed: 0,
            train_ratio: 0.8,
            downscale_limit: 640,
            downscale_inclusive: false,
            synth_count: 0,
            synth_size: 256,
            synth_texture: false,
            eval_split: EvalSplit::Eval,
            tile: 320,
            tolerance: 1.0,
            thresholds: 99,
            output_dir: PathBuf::from("runs"),
        }
    }
}

const MODEL_KEYS: &[&str] = &[
    "backbone_widths",
    "selector_widths",
    "encoder_depth_eighth",
    "encoder_depth_sixteenth",
    "heads",
    "mlp_ratio",
    "leaky_slope",
    "bn_eps",
    "bn_momentum",
    "ln_eps",
    "cubic_a",
    "positional_encoding",
    "symmetric_resample",
    "residual_init",
];

const RUN_KEYS: &[&str] = &[
    "seed",
    "lr",
    "weight_decay",
    "batch",
    "epochs_stage1",
    "epochs_stage2",
    "epochs_stage3",
    "wbce_lambda",
    "wbce_eps",
    "crop",
    "refresh_every",
    "data_root",
    "split_seed",
    "train_ratio",
    "downscale_limit",
    "downscale_inclusive",
    "synth_count",
    "synth_size",
    "synth_texture",
    "eval_split",
    "tile",
    "tolerance",
    "thresholds",
    "output_dir",
];

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("{key}: cannot parse {value:?}")))
}

fn parse_list(key: &str, value: &str) -> Result<Vec<usize>> {
    value.split(',').map(|v| parse(key, v.trim())).collect()
}

fn join(v: &[usize]) -> String {
    v.iter().map(|w| w.to_string()).collect::<Vec<_>>().join(",")
}

impl RunConfig {
    pub fn keys() -> impl Iterator<Item = &'static str> {
        MODEL_KEYS.iter().chain(RUN_KEYS).copied()
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = RunConfig::default();
        let mut seen = std::collections::HashSet::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key = value", lineno + 1)))?;
            let key = key.trim();
            if !seen.insert(key.to_string()) {
                return Err(Error::Config(format!("line {}: duplicate key {key}", lineno + 1)));
            }
            cfg.set(key, value.trim())
                .map_err(|e| Error::Config(format!("line {}: {}", lineno + 1, e.to_string().trim_start_matches("config: "))))?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        RunConfig::parse(&text)
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let m = &mut self.model;
        match key {
            "backbone_widths" => m.backbone_widths = parse_list(key, value)?,
            "selector_widths" => m.selector_widths = parse_list(key, value)?,
            "encoder_depth_eighth" => m.encoder_depth_eighth = parse(key, value)?,
            "encoder_depth_sixteenth" => m.encoder_depth_sixteenth = parse(key, value)?,
            "heads" => m.heads = parse(key, value)?,
            "mlp_ratio" => m.mlp_ratio = parse(key, value)?,
            "leaky_slope" => m.leaky_slope = parse(key, value)?,
            "bn_eps" => m.bn_eps = parse(key, value)?,
            "bn_momentum" => m.bn_momentum = parse(key, value)?,
            "ln_eps" => m.ln_eps = parse(key, value)?,
            "cubic_a" => m.cubic_a = parse(key, value)?,
            "positional_encoding" => m.positional_encoding = parse(key, value)?,
            "symmetric_resample" => m.symmetric_resample = parse(key, value)?,
            "residual_init" => m.residual_init = parse(key, value)?,
            "seed" => self.seed = parse(key, value)?,
            "lr" => self.lr = parse(key, value)?,
            "weight_decay" => self.weight_decay = parse(key, value)?,
            "batch" => self.batch = parse(key, value)?,
            "epochs_stage1" => self.epochs[0] = parse(key, value)?,
            "epochs_stage2" => self.epochs[1] = parse(key, value)?,
            "epochs_stage3" => self.epochs[2] = parse(key, value)?,
            "wbce_lambda" => self.wbce_lambda = parse(key, value)?,
            "wbce_eps" => self.wbce_eps = parse(key, value)?,
            "crop" => self.crop = parse(key, value)?,
            "refresh_every" => self.refresh_every = parse(key, value)?,
            "data_root" => self.data_root = (!value.is_empty()).then(|| PathBuf::from(value)),
            "split_seed" => self.split_seed = parse(key, value)?,
            "train_ratio" => self.train_ratio = parse(key, value)?,
            "downscale_limit" => self.downscale_limit = parse(key, value)?,
            "downscale_inclusive" => self.downscale_inclusive = parse(key, value)?,
            "synth_count" => self.synth_count = parse(key, value)?,
            "synth_size" => self.synth_size = parse(key, value)?,
            "synth_texture" => self.synth_texture = parse(key, value)?,
            "eval_split" => {
                self.eval_split = match value {
                    "train" => EvalSplit::Train,
                    "eval" => EvalSplit::Eval,
                    _ => return Err(Error::Config(format!("eval_split: expected train or eval, got {value:?}"))),
                }
            }
            "tile" => self.tile = parse(key, value)?,
            "tolerance" => self.tolerance = parse(key, value)?,
            "thresholds" => self.thresholds = parse(key, value)?,
            "output_dir" => self.output_dir = PathBuf::from(value),
            _ => return Err(Error::Config(format!("unknown key {key:?}"))),
        }
        Ok(())
    }

    pub fn get(&self, key: &str) -> Option<String> {
        let m = &self.model;
        Some(match key {
            "backbone_widths" => join(&m.backbone_widths),
            "selector_widths" => join(&m.selector_widths),
            "encoder_depth_eighth" => m.encoder_depth_eighth.to_string(),
            "encoder_depth_sixteenth" => m.encoder_depth_sixteenth.to_string(),
            "heads" => m.heads.to_string(),
            "mlp_ratio" => m.mlp_ratio.to_string(),
            "leaky_slope" => m.leaky_slope.to_string(),
            "bn_eps" => m.bn_eps.to_string(),
            "bn_momentum" => m.bn_momentum.to_string(),
            "ln_eps" => m.ln_eps.to_string(),
            "cubic_a" => m.cubic_a.to_string(),
            "positional_encoding" => m.positional_encoding.to_string(),
            "symmetric_resample" => m.symmetric_resample.to_string(),
            "residual_init" => m.residual_init.to_string(),
            "seed" => self.seed.to_string(),
            "lr" => self.lr.to_string(),
            "weight_decay" => self.weight_decay.to_string(),
            "batch" => self.batch.to_string(),
            "epochs_stage1" => self.epochs[0].to_string(),
            "epochs_stage2" => self.epochs[1].to_string(),
            "epochs_stage3" => self.epochs[2].to_string(),
            "wbce_lambda" => self.wbce_lambda.to_string(),
            "wbce_eps" => self.wbce_eps.to_string(),
            "crop" => self.crop.to_string(),
            "refresh_every" => self.refresh_every.to_string(),
            "data_root" => self.data_root.as_ref().map(|p| p.display().to_string()).unwrap_or_default(),
            "split_seed" => self.split_seed.to_string(),
            "train_ratio" => self.train_ratio.to_string(),
            "downscale_limit" => self.downscale_limit.to_string(),
            "downscale_inclusive" => self.downscale_inclusive.to_string(),
            "synth_count" => self.synth_count.to_string(),
            "synth_size" => self.synth_size.to_string(),
            "synth_texture" => self.synth_texture.to_string(),
            "eval_split" => match self.eval_split {
                EvalSplit::Train => "train".into(),
                EvalSplit::Eval => "eval".into(),
            },
            "tile" => self.tile.to_string(),
            "tolerance" => self.tolerance.to_string(),
            "thresholds" => self.thresholds.to_string(),
            "output_dir" => self.output_dir.display().to_string(),
            _ => return None,
        })
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if !(self.lr > 0.0) || self.weight_decay < 0.0 {
            return bad("lr must be positive and weight_decay nonnegative");
        }
        if self.batch == 0 || self.refresh_every == 0 {
            return bad("batch and refresh_every must be positive");
        }
        if !(self.wbce_lambda > 0.0) || !(self.wbce_eps > 0.0 && self.wbce_eps < 0.5) {
            return bad("wbce_lambda must be positive and wbce_eps in (0, 0.5)");
        }
        let align = self.model.alignment();
        if self.crop == 0 || self.crop % align != 0 || self.tile == 0 || self.tile % align != 0 {
            return Err(Error::Config(format!("crop and tile must be positive multiples of {align}")));
        }
        if !(0.0..=1.0).contains(&self.train_ratio) {
            return bad("train_ratio must lie in [0, 1]");
        }
        if self.tolerance < 0.0 || self.thresholds == 0 {
            return bad("tolerance must be nonnegative and thresholds positive");
        }
        if self.downscale_limit < 2 {
            return bad("downscale_limit must be at least 2");
        }
        if self.synth_count > 0 && self.synth_size < 32 {
            return bad("synth_size must be at least 32");
        }
        Ok(())
    }

    /// Every key with its resolved value, one `key = value` per line.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for key in RunConfig::keys() {
            let _ = writeln!(out, "{key} = {}", self.get(key).unwrap_or_default());
        }
        out
    }

    /// Hex SHA-256 of the architecture keys; stored in checkpoints.
    pub fn model_digest(&self) -> String {
        model_digest(&self.model)
    }

    /// Evenly spaced thresholds `i / (n + 1)` for `i = 1..=n`.
    pub fn threshold_levels(&self) -> Vec<f32> {
        threshold_levels(self.thresholds)
    }
}

pub fn model_digest(model: &ModelConfig) -> String {
    let cfg = RunConfig {
        model: model.clone(),
        ..RunConfig::default()
    };
    let mut h = Sha256::new();
    for key in MODEL_KEYS {
        h.update(format!("{key}={}\n", cfg.get(key).unwrap_or_default()));
    }
    hex::encode(h.finalize())
}

pub fn threshold_levels(n: usize) -> Vec<f32> {
    (1..=n).map(|i| (i as f64 / (n + 1) as f64) as f32).collect()
}
