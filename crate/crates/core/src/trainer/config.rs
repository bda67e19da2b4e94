use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::encoder::{Architecture, OptimizerKind};
use crate::error::{Error, Result};
use crate::losses::LossKind;
use crate::lpa::gamma_warning;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    /// Loss combined with cross-entropy through a jointly trained head.
    Integrated,
    /// Encoder trained on the loss alone; a head is fitted afterwards.
    Standalone,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EncoderKind {
    Linear,
    Mlp2,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SigmaMode {
    /// Recomputed per batch from that batch's embeddings.
    Sqrt,
    Fixed(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub mode: Mode,
    pub loss: LossKind,
    pub lambda: f64,
    /// Weight for SCL/triplet/cosine when combined with CE; `lambda` if unset.
    pub lambda_baseline: Option<f64>,
    pub gamma: f64,
    /// Kernel width for `gloss_o`; ignored by `gloss_sqrt`.
    pub sigma: f64,
    /// Multiplier applied to whichever σ is in use (sweeps).
    pub sigma_scale: f64,
    pub eta: f64,
    pub optimizer: OptimizerKind,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    /// Smallest monitor gain that counts as an improvement.
    pub min_delta: f64,
    pub seed: u64,
    pub tau: f64,
    pub margin: f64,
    pub normalize_embeddings: bool,
    pub encoder: EncoderKind,
    pub hidden: usize,
    pub embed_dim: usize,
    pub stratify: bool,
    pub head_epochs: usize,
    pub head_eta: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            mode: Mode::Integrated,
            loss: LossKind::GlossO,
            lambda: 0.8,
            lambda_baseline: None,
            gamma: 0.6,
            sigma: 0.5,
            sigma_scale: 1.0,
            eta: 1e-3,
            optimizer: OptimizerKind::Adam,
            batch_size: 32,
            max_epochs: 50,
            patience: 10,
            min_delta: 0.0,
            seed: 0,
            tau: 0.1,
            margin: 0.5,
            normalize_embeddings: true,
            encoder: EncoderKind::Mlp2,
            hidden: 64,
            embed_dim: 32,
            stratify: true,
            head_epochs: 200,
            head_eta: 1e-2,
        }
    }
}

/// Every key accepted in config files and `--set` overrides.
pub const CONFIG_KEYS: &[&str] = &[
    "mode",
    "loss",
    "lambda",
    "lambda_baseline",
    "gamma",
    "sigma",
    "sigma_scale",
    "eta",
    "optimizer",
    "batch_size",
    "max_epochs",
    "patience",
    "min_delta",
    "seed",
    "tau",
    "margin",
    "normalize_embeddings",
    "encoder",
    "hidden",
    "embed_dim",
    "stratify",
    "head_epochs",
    "head_eta",
];

fn to_table(cfg: &TrainConfig) -> Result<toml::Table> {
    match toml::Value::try_from(cfg) {
        Ok(toml::Value::Table(t)) => Ok(t),
        Ok(_) => Err(Error::Config("config did not serialize to a table".into())),
        Err(e) => Err(Error::Config(e.to_string())),
    }
}

fn in_range(v: f64, lo: f64, hi: f64) -> bool {
    (lo..=hi).contains(&v)
}

impl TrainConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let table: toml::Table = text.parse().map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        if let Some(k) = table.keys().find(|k| !CONFIG_KEYS.contains(&k.as_str())) {
            return Err(Error::ConfigKey(k.clone()));
        }
        let cfg: TrainConfig = table.try_into().map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_toml_str(&fs::read_to_string(path)?)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    /// Apply a `key=value` override. The value is read as a TOML literal,
    /// falling back to a bare string.
    pub fn apply_override(&mut self, assignment: &str) -> Result<()> {
        let (key, raw) = assignment
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("override `{assignment}` is not key=value")))?;
        let key = key.trim();
        let raw = raw.trim();
        if !CONFIG_KEYS.contains(&key) {
            return Err(Error::ConfigKey(key.to_string()));
        }
        let value: toml::Value = match format!("v = {raw}").parse::<toml::Table>() {
            Ok(mut t) => t.remove("v").unwrap(),
            Err(_) => toml::Value::String(raw.to_string()),
        };
        let mut table = to_table(self)?;
        table.insert(key.to_string(), value);
        *self = table
            .try_into()
            .map_err(|e: toml::de::Error| Error::Config(format!("{key}: {e}")))?;
        Ok(())
    }

    pub fn architecture(&self) -> Architecture {
        match self.encoder {
            EncoderKind::Linear => Architecture::Linear,
            EncoderKind::Mlp2 => Architecture::Mlp2 { hidden: self.hidden },
        }
    }

    pub fn sigma_mode(&self) -> SigmaMode {
        match self.loss {
            LossKind::GlossSqrt => SigmaMode::Sqrt,
            _ => SigmaMode::Fixed(self.sigma),
        }
    }

    pub fn baseline_weight(&self) -> f64 {
        self.lambda_baseline.unwrap_or(self.lambda)
    }

    /// Whether steps build a graph and propagate labels. At λ = 0 in
    /// integrated mode the graph path is skipped entirely.
    pub fn uses_graph(&self) -> bool {
        self.loss.is_graph() && (self.mode == Mode::Standalone || self.lambda > 0.0)
    }

    /// Hard errors for unusable settings; soft warnings outside the ranges
    /// the method was tuned over.
    pub fn validate(&self) -> Result<Vec<String>> {
        let bad = |m: String| Err(Error::Validation(m));
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return bad(format!("gamma must be in (0, 1), got {}", self.gamma));
        }
        if !in_range(self.lambda, 0.0, 1.0) {
            return bad(format!("lambda must be in [0, 1], got {}", self.lambda));
        }
        if let Some(lb) = self.lambda_baseline {
            if !in_range(lb, 0.0, 1.0) {
                return bad(format!("lambda_baseline must be in [0, 1], got {lb}"));
            }
        }
        for (name, v) in [
            ("sigma", self.sigma),
            ("sigma_scale", self.sigma_scale),
            ("eta", self.eta),
            ("tau", self.tau),
            ("head_eta", self.head_eta),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return bad(format!("{name} must be positive, got {v}"));
            }
        }
        if !(self.min_delta >= 0.0 && self.min_delta.is_finite()) {
            return bad(format!("min_delta must be nonnegative, got {}", self.min_delta));
        }
        if !(self.margin >= 0.0) {
            return bad(format!("margin must be nonnegative, got {}", self.margin));
        }
        if self.max_epochs == 0 {
            return bad("max_epochs must be at least 1".into());
        }
        if self.embed_dim == 0 || (self.encoder == EncoderKind::Mlp2 && self.hidden == 0) {
            return bad("encoder widths must be positive".into());
        }
        let min_batch = if self.uses_graph() { 4 } else { 2 };
        if self.batch_size < min_batch {
            return bad(format!("batch_size must be at least {min_batch}, got {}", self.batch_size));
        }
        if self.mode == Mode::Standalone && self.loss == LossKind::Ce {
            return bad("standalone mode needs a representation loss, not ce".into());
        }

        let mut warnings = Vec::new();
        if self.uses_graph() {
            warnings.extend(gamma_warning(self.gamma));
            if let SigmaMode::Fixed(s) = self.sigma_mode() {
                let s = s * self.sigma_scale;
                if !in_range(s, 0.01, 10.0) {
                    warnings.push(format!("sigma {s} outside the tuned range [0.01, 10]"));
                }
            }
        }
        if self.mode == Mode::Integrated && self.loss != LossKind::Ce && !in_range(self.lambda, 0.1, 0.9) {
            warnings.push(format!("lambda {} outside the tuned range [0.1, 0.9]", self.lambda));
        }
        Ok(warnings)
    }
}
