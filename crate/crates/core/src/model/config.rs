//! Architecture and training hyperparameters, and the flat `key = value`
//! config file that carries both.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::tokenizer::VOCAB_SIZE;
use super::ModelError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransformerConfig {
    pub d_model: usize,
    pub d_ff: usize,
    pub num_layers: usize,
    pub num_heads: usize,
    /// Width of each attention head.
    pub d_kv: usize,
    pub vocab_size: usize,
    pub dropout: f64,
    pub relative_buckets: usize,
    pub relative_max_distance: usize,
}

impl TransformerConfig {
    /// 6 layers, width 512, feed-forward 1024, 6 heads of width 64.
    pub fn small() -> Self {
        TransformerConfig {
            d_model: 512,
            d_ff: 1024,
            num_layers: 6,
            num_heads: 6,
            d_kv: 64,
            vocab_size: VOCAB_SIZE,
            dropout: 0.1,
            relative_buckets: 32,
            relative_max_distance: 128,
        }
    }

    /// 4 layers, width 256, feed-forward 512, 4 heads of width 64.
    pub fn very_small() -> Self {
        TransformerConfig {
            d_model: 256,
            d_ff: 512,
            num_layers: 4,
            num_heads: 4,
            d_kv: 64,
            ..Self::small()
        }
    }

    /// The scaled-down model used for the overfit fixture.
    pub fn toy() -> Self {
        TransformerConfig {
            d_model: 64,
            d_ff: 128,
            num_layers: 2,
            num_heads: 2,
            d_kv: 32,
            dropout: 0.0,
            ..Self::small()
        }
    }

    /// Smallest useful model; gradient checks run on it.
    pub fn tiny() -> Self {
        TransformerConfig {
            d_model: 8,
            d_ff: 16,
            num_layers: 1,
            num_heads: 2,
            d_kv: 4,
            dropout: 0.0,
            relative_buckets: 8,
            relative_max_distance: 16,
            ..Self::small()
        }
    }

    pub fn preset(name: &str) -> Option<Self> {
        match name {
            "small" => Some(Self::small()),
            "very_small" | "very-small" => Some(Self::very_small()),
            "toy" => Some(Self::toy()),
            "tiny" => Some(Self::tiny()),
            _ => None,
        }
    }

    pub fn inner_dim(&self) -> usize {
        self.num_heads * self.d_kv
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |m: &str| Err(ModelError::Config(m.into()));
        if [self.d_model, self.d_ff, self.num_layers, self.num_heads, self.d_kv].contains(&0) {
            return bad("widths, layer and head counts must be positive");
        }
        if self.vocab_size != VOCAB_SIZE {
            return bad("vocab_size must match the byte tokenizer (259)");
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad("dropout must lie in [0, 1)");
        }
        if self.relative_buckets < 4 || self.relative_max_distance < self.relative_buckets {
            return bad("need relative_buckets >= 4 and relative_max_distance >= relative_buckets");
        }
        Ok(())
    }

    /// Number of trainable scalars.
    pub fn parameter_count(&self) -> usize {
        let (d, f, hk, v) = (self.d_model, self.d_ff, self.inner_dim(), self.vocab_size);
        let attn = 3 * d * hk + hk * d;
        let ffn = 2 * d * f + f * d;
        let enc_layer = attn + ffn + 2 * d;
        let dec_layer = 2 * attn + ffn + 3 * d;
        let bias = self.relative_buckets * self.num_heads;
        v * d + self.num_layers * (enc_layer + dec_layer) + 2 * (bias + d) + d * v
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub warmup_steps: usize,
    pub grad_accum_steps: usize,
    pub max_grad_norm: f64,
    pub batch_size: usize,
    pub eval_steps: usize,
    pub save_steps: usize,
    pub seed: u64,
    /// Stop after this many optimizer steps; 0 means run every epoch.
    pub max_steps: usize,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    /// Greedy-decoding length cap for validation CER.
    pub eval_max_length: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 20,
            learning_rate: 0.001,
            weight_decay: 0.01,
            warmup_steps: 5000,
            grad_accum_steps: 4,
            max_grad_norm: 1.0,
            batch_size: 32,
            eval_steps: 5000,
            save_steps: 5000,
            seed: 42,
            max_steps: 0,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            eval_max_length: 64,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |m: &str| Err(ModelError::Config(m.into()));
        if [self.epochs, self.grad_accum_steps, self.batch_size, self.eval_steps, self.save_steps].contains(&0) {
            return bad("epochs, grad_accum_steps, batch_size, eval_steps and save_steps must be positive");
        }
        if !(self.learning_rate > 0.0) || !(self.max_grad_norm > 0.0) || !(self.weight_decay >= 0.0) {
            return bad("learning_rate and max_grad_norm must be positive, weight_decay non-negative");
        }
        if !(0.0..1.0).contains(&self.adam_beta1) || !(0.0..1.0).contains(&self.adam_beta2) || !(self.adam_eps > 0.0) {
            return bad("Adam betas must lie in [0, 1) and eps must be positive");
        }
        if self.eval_max_length < 2 {
            return bad("eval_max_length must be at least 2");
        }
        Ok(())
    }
}

/// Model plus training settings, as read from a config file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub model: TransformerConfig,
    pub train: TrainConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            model: TransformerConfig::very_small(),
            train: TrainConfig::default(),
        }
    }
}

fn parse_value<T: std::str::FromStr>(line: usize, key: &str, value: &str) -> Result<T, ModelError> {
    value
        .parse()
        .map_err(|_| ModelError::Config(format!("line {line}: bad value {value:?} for `{key}`")))
}

impl RunConfig {
    /// Parses `key = value` lines. `preset` (small, very_small, toy, tiny)
    /// must come before any architecture key it should be overridden by.
    /// `#` starts a comment.
    pub fn parse(text: &str) -> Result<Self, ModelError> {
        let mut c = RunConfig::default();
        for (i, raw) in text.lines().enumerate() {
            let n = i + 1;
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| ModelError::Config(format!("line {n}: expected key = value")))?;
            let (key, value) = (key.trim(), value.trim());
            let m = &mut c.model;
            let t = &mut c.train;
            match key {
                "preset" => {
                    c.model = TransformerConfig::preset(value)
                        .ok_or_else(|| ModelError::Config(format!("line {n}: unknown preset {value:?}")))?
                }
                "d_model" => m.d_model = parse_value(n, key, value)?,
                "d_ff" => m.d_ff = parse_value(n, key, value)?,
                "num_layers" => m.num_layers = parse_value(n, key, value)?,
                "num_heads" => m.num_heads = parse_value(n, key, value)?,
                "d_kv" => m.d_kv = parse_value(n, key, value)?,
                "vocab_size" => m.vocab_size = parse_value(n, key, value)?,
                "dropout" => m.dropout = parse_value(n, key, value)?,
                "relative_buckets" => m.relative_buckets = parse_value(n, key, value)?,
                "relative_max_distance" => m.relative_max_distance = parse_value(n, key, value)?,
                "epochs" => t.epochs = parse_value(n, key, value)?,
                "learning_rate" => t.learning_rate = parse_value(n, key, value)?,
                "weight_decay" => t.weight_decay = parse_value(n, key, value)?,
                "warmup_steps" => t.warmup_steps = parse_value(n, key, value)?,
                "grad_accum_steps" => t.grad_accum_steps = parse_value(n, key, value)?,
                "max_grad_norm" => t.max_grad_norm = parse_value(n, key, value)?,
                "batch_size" => t.batch_size = parse_value(n, key, value)?,
                "eval_steps" => t.eval_steps = parse_value(n, key, value)?,
                "save_steps" => t.save_steps = parse_value(n, key, value)?,
                "seed" => t.seed = parse_value(n, key, value)?,
                "max_steps" => t.max_steps = parse_value(n, key, value)?,
                "adam_beta1" => t.adam_beta1 = parse_value(n, key, value)?,
                "adam_beta2" => t.adam_beta2 = parse_value(n, key, value)?,
                "adam_eps" => t.adam_eps = parse_value(n, key, value)?,
                "eval_max_length" => t.eval_max_length = parse_value(n, key, value)?,
                _ => return Err(ModelError::Config(format!("line {n}: unknown key `{key}`"))),
            }
        }
        c.model.validate()?;
        c.train.validate()?;
        Ok(c)
    }

    /// Every field, one per line, in a fixed order. Parsing the output
    /// gives back the same config.
    pub fn to_text(&self) -> String {
        let (m, t) = (&self.model, &self.train);
        let mut s = String::new();
        let mut kv = |k: &str, v: String| writeln!(s, "{k} = {v}").expect("writing to a String");
        kv("d_model", m.d_model.to_string());
        kv("d_ff", m.d_ff.to_string());
        kv("num_layers", m.num_layers.to_string());
        kv("num_heads", m.num_heads.to_string());
        kv("d_kv", m.d_kv.to_string());
        kv("vocab_size", m.vocab_size.to_string());
        kv("dropout", format!("{:?}", m.dropout));
        kv("relative_buckets", m.relative_buckets.to_string());
        kv("relative_max_distance", m.relative_max_distance.to_string());
        kv("epochs", t.epochs.to_string());
        kv("learning_rate", format!("{:?}", t.learning_rate));
        kv("weight_decay", format!("{:?}", t.weight_decay));
        kv("warmup_steps", t.warmup_steps.to_string());
        kv("grad_accum_steps", t.grad_accum_steps.to_string());
        kv("max_grad_norm", format!("{:?}", t.max_grad_norm));
        kv("batch_size", t.batch_size.to_string());
        kv("eval_steps", t.eval_steps.to_string());
        kv("save_steps", t.save_steps.to_string());
        kv("seed", t.seed.to_string());
        kv("max_steps", t.max_steps.to_string());
        kv("adam_beta1", format!("{:?}", t.adam_beta1));
        kv("adam_beta2", format!("{:?}", t.adam_beta2));
        kv("adam_eps", format!("{:?}", t.adam_eps));
        kv("eval_max_length", t.eval_max_length.to_string());
        s
    }
}
