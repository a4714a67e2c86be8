//! Flat `key = value` experiment configuration.
//!
//! Blank lines and lines starting with `#` are ignored. Every key can also be
//! overridden from the command line.

use serde::{Deserialize, Serialize};

use crate::autodiff::UpdateRule;
use crate::error::{Error, Result};
use crate::model::{ModelConfig, Variant};

/// Documented configuration keys with their defaults.
pub const CONFIG_KEYS: &[(&str, &str, &str)] = &[
    ("variant", "cbr-rnn", "model variant: cbr-rnn | cbr-rnn-ablated | lstm-1 | lstm-2"),
    ("hidden_dim", "64", "hidden width d"),
    ("embed_dim", "0", "embedding width (0 = hidden_dim)"),
    ("ff_dim", "0", "first post-retrieval layer width (0 = 4 * hidden_dim)"),
    ("scale_attention", "false", "divide attention scores by sqrt(d)"),
    ("ff_includes_hidden", "true", "feed h[i-1] to the post-retrieval layers"),
    ("alpha", "0", "supertagging loss weight for single runs"),
    ("alphas", "0,1,5", "supertagging loss weights for matrix runs"),
    ("seeds", "1", "comma separated seeds"),
    ("learning_rate", "0.001", "base learning rate"),
    ("warmup_steps", "0", "linear warmup length in updates (0 = constant)"),
    ("optimizer", "adam", "adam | sgd"),
    ("clip_norm", "1.0", "global gradient norm bound (0 = off)"),
    ("max_seq_len", "128", "truncation length in input tokens"),
    ("epochs", "10", "passes over the corpus"),
    ("batch_size", "1", "sequences per update"),
    ("shuffle", "true", "shuffle sequence order every epoch"),
    ("checkpoint_every", "1", "epochs between checkpoints (0 = final only)"),
];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub alpha: f64,
    pub learning_rate: f64,
    pub warmup_steps: usize,
    pub optimizer: UpdateRule,
    /// `None` disables clipping.
    pub clip_norm: Option<f64>,
    pub max_seq_len: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub shuffle: bool,
    pub checkpoint_every: usize,
    pub seeds: Vec<u64>,
    pub alphas: Vec<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            alpha: 0.0,
            learning_rate: 1e-3,
            warmup_steps: 0,
            optimizer: UpdateRule::adam(),
            clip_norm: Some(1.0),
            max_seq_len: 128,
            epochs: 10,
            batch_size: 1,
            shuffle: true,
            checkpoint_every: 1,
            seeds: vec![1],
            alphas: vec![0.0, 1.0, 5.0],
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if !(self.alpha.is_finite() && self.alpha >= 0.0) || self.alphas.iter().any(|a| !(a.is_finite() && *a >= 0.0)) {
            return bad("alpha must be a non-negative number");
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return bad("learning_rate must be positive");
        }
        if self.max_seq_len == 0 || self.batch_size == 0 {
            return bad("max_seq_len and batch_size must be positive");
        }
        if self.clip_norm.is_some_and(|c| !(c > 0.0)) {
            return bad("clip_norm must be positive");
        }
        Ok(())
    }

    /// Learning rate for update number `step` (0-based).
    pub fn lr_at(&self, step: usize) -> f64 {
        if self.warmup_steps == 0 {
            self.learning_rate
        } else {
            self.learning_rate * ((step + 1) as f64 / self.warmup_steps as f64).min(1.0)
        }
    }
}

/// Model hyperparameters that do not depend on the data.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub variant: Variant,
    pub hidden_dim: usize,
    pub embed_dim: usize,
    pub ff_dim: usize,
    pub scale_attention: bool,
    pub ff_includes_hidden: bool,
}

impl Default for ModelSpec {
    fn default() -> Self {
        ModelSpec {
            variant: Variant::CbrRnn,
            hidden_dim: 64,
            embed_dim: 0,
            ff_dim: 0,
            scale_attention: false,
            ff_includes_hidden: true,
        }
    }
}

impl ModelSpec {
    pub fn model_config(&self, vocab_size: usize, tag_count: usize, seed: u64) -> ModelConfig {
        let mut cfg = ModelConfig::new(self.variant, vocab_size, tag_count, self.hidden_dim).with_seed(seed);
        if self.embed_dim > 0 {
            cfg.embed_dim = self.embed_dim;
        }
        if self.ff_dim > 0 {
            cfg.ff_dim = self.ff_dim;
        }
        cfg.scale_attention = self.scale_attention;
        cfg.ff_includes_hidden = self.ff_includes_hidden;
        cfg
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub model: ModelSpec,
    pub train: TrainConfig,
}

fn parse_bool(v: &str) -> std::result::Result<bool, String> {
    match v {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => Err(format!("`{v}` is not a boolean")),
    }
}

fn parse_num<T: std::str::FromStr>(v: &str) -> std::result::Result<T, String> {
    v.parse().map_err(|_| format!("`{v}` is not a valid number"))
}

fn parse_list<T: std::str::FromStr>(v: &str) -> std::result::Result<Vec<T>, String> {
    v.split(',').map(|x| parse_num(x.trim())).collect()
}

impl ExperimentConfig {
    /// Applies one key. Unknown keys are rejected.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let value = value.trim();
        let (m, t) = (&mut self.model, &mut self.train);
        let r: std::result::Result<(), String> = (|| {
            match key {
                "variant" => m.variant = value.parse().map_err(|e: Error| e.to_string())?,
                "hidden_dim" => m.hidden_dim = parse_num(value)?,
                "embed_dim" => m.embed_dim = parse_num(value)?,
                "ff_dim" => m.ff_dim = parse_num(value)?,
                "scale_attention" => m.scale_attention = parse_bool(value)?,
                "ff_includes_hidden" => m.ff_includes_hidden = parse_bool(value)?,
                "alpha" => t.alpha = parse_num(value)?,
                "alphas" => t.alphas = parse_list(value)?,
                "seeds" => t.seeds = parse_list(value)?,
                "learning_rate" => t.learning_rate = parse_num(value)?,
                "warmup_steps" => t.warmup_steps = parse_num(value)?,
                "optimizer" => {
                    t.optimizer = match value {
                        "adam" => UpdateRule::adam(),
                        "sgd" => UpdateRule::Sgd,
                        _ => return Err(format!("unknown optimizer `{value}`")),
                    }
                }
                "clip_norm" => {
                    let c: f64 = parse_num(value)?;
                    t.clip_norm = if c == 0.0 { None } else { Some(c) };
                }
                "max_seq_len" => t.max_seq_len = parse_num(value)?,
                "epochs" => t.epochs = parse_num(value)?,
                "batch_size" => t.batch_size = parse_num(value)?,
                "shuffle" => t.shuffle = parse_bool(value)?,
                "checkpoint_every" => t.checkpoint_every = parse_num(value)?,
                _ => return Err(format!("unknown key `{key}`")),
            }
            Ok(())
        })();
        r.map_err(|m| Error::Config(format!("{key}: {m}")))
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = ExperimentConfig::default();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected `key = value`", i + 1)))?;
            cfg.set(k.trim(), v).map_err(|e| Error::Config(format!("line {}: {e}", i + 1)))?;
        }
        Ok(cfg)
    }

    /// Serializes every key in [`CONFIG_KEYS`] order.
    pub fn to_text(&self) -> String {
        let (m, t) = (&self.model, &self.train);
        let join = |xs: Vec<String>| xs.join(",");
        let values = [
            m.variant.to_string(),
            m.hidden_dim.to_string(),
            m.embed_dim.to_string(),
            m.ff_dim.to_string(),
            m.scale_attention.to_string(),
            m.ff_includes_hidden.to_string(),
            t.alpha.to_string(),
            join(t.alphas.iter().map(f64::to_string).collect()),
            join(t.seeds.iter().map(u64::to_string).collect()),
            t.learning_rate.to_string(),
            t.warmup_steps.to_string(),
            match t.optimizer {
                UpdateRule::Sgd => "sgd".into(),
                UpdateRule::Adam { .. } => "adam".into(),
            },
            t.clip_norm.unwrap_or(0.0).to_string(),
            t.max_seq_len.to_string(),
            t.epochs.to_string(),
            t.batch_size.to_string(),
            t.shuffle.to_string(),
            t.checkpoint_every.to_string(),
        ];
        CONFIG_KEYS.iter().zip(values).map(|((k, _, _), v)| format!("{k} = {v}\n")).collect()
    }
}
