//! Flat `key = value` run configuration with strict key checking.
//!
//! Precedence, lowest to highest: built-in defaults, config file,
//! `--set key=value` flags, dedicated command-line flags.

use std::fmt::Write as _;
use std::path::Path;

use anyhow::{bail, Context, Result};
use stcad::features::FeatureConfig;
use stcad::model::ModelConfig;
use stcad::training::TrainConfig;

/// Everything a command needs to reproduce a run.
#[derive(Debug, Clone, serde::Serialize)]
pub struct RunConfig {
    pub snapshot_size: Option<usize>,
    // model
    pub d: usize,
    pub heads: usize,
    pub layers: usize,
    pub context: usize,
    pub window: usize,
    pub d_ff: usize,
    // optimization and splits
    pub epochs: usize,
    pub lr: f64,
    pub lambda: f64,
    pub batch_size: usize,
    pub seed: u64,
    pub inject_rate: f64,
    pub split_fraction: f64,
    pub train_ratio: f64,
    pub eval_every: usize,
    // features
    pub damping: f64,
    pub tol: f64,
    pub max_iter: usize,
    pub dist_cap: usize,
    pub delta_t: usize,
    // ablation switches
    pub use_level1: bool,
    pub use_level2: bool,
    pub use_pe_tmp: bool,
    pub use_pe_rel: bool,
    pub use_contextual_loss: bool,
    pub residual_uses_input: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        let m = ModelConfig::default();
        let t = TrainConfig::default();
        let f = FeatureConfig::default();
        RunConfig {
            snapshot_size: None,
            d: m.d,
            heads: m.heads,
            layers: m.layers,
            context: m.context,
            window: m.window,
            d_ff: m.d_ff,
            epochs: t.epochs,
            lr: t.lr,
            lambda: t.lambda,
            batch_size: t.batch_size,
            seed: t.seed,
            inject_rate: t.inject_rate,
            split_fraction: t.split_fraction,
            train_ratio: t.train_ratio,
            eval_every: t.eval_every,
            damping: f.damping,
            tol: f.tol,
            max_iter: f.max_iter,
            dist_cap: f.dist_cap,
            delta_t: f.delta_t,
            use_level1: m.use_level1,
            use_level2: m.use_level2,
            use_pe_tmp: m.use_pe_tmp,
            use_pe_rel: m.use_pe_rel,
            use_contextual_loss: m.use_contextual_loss,
            residual_uses_input: m.residual_uses_input,
        }
    }
}

fn parse_as<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| anyhow::anyhow!("bad value {value:?} for key {key}"))
}

impl RunConfig {
    /// Apply one key/value pair; unknown keys are rejected.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "snapshot_size" => self.snapshot_size = Some(parse_as(key, value)?),
            "d" => self.d = parse_as(key, value)?,
            "heads" => self.heads = parse_as(key, value)?,
            "layers" => self.layers = parse_as(key, value)?,
            "context" => self.context = parse_as(key, value)?,
            "window" => self.window = parse_as(key, value)?,
            "d_ff" => self.d_ff = parse_as(key, value)?,
            "epochs" => self.epochs = parse_as(key, value)?,
            "lr" => self.lr = parse_as(key, value)?,
            "lambda" => self.lambda = parse_as(key, value)?,
            "batch_size" => self.batch_size = parse_as(key, value)?,
            "seed" => self.seed = parse_as(key, value)?,
            "inject_rate" => self.inject_rate = parse_as(key, value)?,
            "split_fraction" => self.split_fraction = parse_as(key, value)?,
            "train_ratio" => self.train_ratio = parse_as(key, value)?,
            "eval_every" => self.eval_every = parse_as(key, value)?,
            "damping" => self.damping = parse_as(key, value)?,
            "tol" => self.tol = parse_as(key, value)?,
            "max_iter" => self.max_iter = parse_as(key, value)?,
            "dist_cap" => self.dist_cap = parse_as(key, value)?,
            "delta_t" => self.delta_t = parse_as(key, value)?,
            "use_level1" => self.use_level1 = parse_as(key, value)?,
            "use_level2" => self.use_level2 = parse_as(key, value)?,
            "use_pe_tmp" => self.use_pe_tmp = parse_as(key, value)?,
            "use_pe_rel" => self.use_pe_rel = parse_as(key, value)?,
            "use_contextual_loss" => self.use_contextual_loss = parse_as(key, value)?,
            "residual_uses_input" => self.residual_uses_input = parse_as(key, value)?,
            _ => bail!("unknown config key {key:?}"),
        }
        Ok(())
    }

    /// Parse a flat config file: `key = value` lines, `#` comments, blanks.
    pub fn apply_file(&mut self, path: &Path) -> Result<()> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .with_context(|| format!("{}:{}: expected key = value", path.display(), lineno + 1))?;
            self.set(key.trim(), value.trim())
                .with_context(|| format!("{}:{}", path.display(), lineno + 1))?;
        }
        Ok(())
    }

    /// Apply repeatable `--set key=value` overrides.
    pub fn apply_sets(&mut self, sets: &[String]) -> Result<()> {
        for s in sets {
            let (key, value) = s
                .split_once('=')
                .with_context(|| format!("--set {s:?}: expected key=value"))?;
            self.set(key.trim(), value.trim())?;
        }
        Ok(())
    }

    /// Apply a named ablation.
    pub fn apply_ablation(&mut self, name: &str) -> Result<()> {
        match name {
            "no-coupling-features" => self.use_level2 = false,
            "no-positional-encoding" => {
                self.use_pe_tmp = false;
                self.use_pe_rel = false;
            }
            "no-temporal-pe" => self.use_pe_tmp = false,
            "no-structural-pe" => self.use_pe_rel = false,
            "no-contextual-loss" => self.use_contextual_loss = false,
            _ => bail!(
                "unknown ablation {name:?} (expected no-coupling-features, \
                 no-positional-encoding, no-temporal-pe, no-structural-pe, \
                 no-contextual-loss)"
            ),
        }
        Ok(())
    }

    pub fn model_config(&self) -> ModelConfig {
        ModelConfig {
            d: self.d,
            heads: self.heads,
            layers: self.layers,
            context: self.context,
            window: self.window,
            d_ff: self.d_ff,
            use_level1: self.use_level1,
            use_level2: self.use_level2,
            use_pe_tmp: self.use_pe_tmp,
            use_pe_rel: self.use_pe_rel,
            use_contextual_loss: self.use_contextual_loss,
            residual_uses_input: self.residual_uses_input,
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            model: self.model_config(),
            epochs: self.epochs,
            lr: self.lr,
            lambda: self.lambda,
            batch_size: self.batch_size,
            seed: self.seed,
            inject_rate: self.inject_rate,
            split_fraction: self.split_fraction,
            train_ratio: self.train_ratio,
            eval_every: self.eval_every,
        }
    }

    pub fn feature_config(&self) -> FeatureConfig {
        FeatureConfig {
            damping: self.damping,
            tol: self.tol,
            max_iter: self.max_iter,
            dist_cap: self.dist_cap,
            delta_t: self.delta_t,
        }
    }

    pub fn snapshot_size(&self) -> Result<usize> {
        self.snapshot_size
            .ok_or_else(|| anyhow::anyhow!("snapshot_size is required (config key or --snapshot-size)"))
    }

    /// The flat `key = value` echo written next to artifacts.
    pub fn echo(&self) -> String {
        let mut out = String::new();
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(out, "{k} = {v}");
        };
        if let Some(s) = self.snapshot_size {
            kv("snapshot_size", s.to_string());
        }
        kv("d", self.d.to_string());
        kv("heads", self.heads.to_string());
        kv("layers", self.layers.to_string());
        kv("context", self.context.to_string());
        kv("window", self.window.to_string());
        kv("d_ff", self.d_ff.to_string());
        kv("epochs", self.epochs.to_string());
        kv("lr", self.lr.to_string());
        kv("lambda", self.lambda.to_string());
        kv("batch_size", self.batch_size.to_string());
        kv("seed", self.seed.to_string());
        kv("inject_rate", self.inject_rate.to_string());
        kv("split_fraction", self.split_fraction.to_string());
        kv("train_ratio", self.train_ratio.to_string());
        kv("eval_every", self.eval_every.to_string());
        kv("damping", self.damping.to_string());
        kv("tol", self.tol.to_string());
        kv("max_iter", self.max_iter.to_string());
        kv("dist_cap", self.dist_cap.to_string());
        kv("delta_t", self.delta_t.to_string());
        kv("use_level1", self.use_level1.to_string());
        kv("use_level2", self.use_level2.to_string());
        kv("use_pe_tmp", self.use_pe_tmp.to_string());
        kv("use_pe_rel", self.use_pe_rel.to_string());
        kv("use_contextual_loss", self.use_contextual_loss.to_string());
        kv("residual_uses_input", self.residual_uses_input.to_string());
        out
    }
}
