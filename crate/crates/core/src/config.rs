//! Flat `key = value` run configuration.
//!
//! One key per line, `#` starts a comment, unknown keys are rejected. Every
//! key has a default, so an empty file is the reference configuration.

use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use crate::error::{LremError, Result};
use crate::experiment::ExperimentConfig;

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| LremError::Config(format!("bad value `{value}` for `{key}`")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "1" => Ok(true),
        "false" | "0" => Ok(false),
        _ => Err(LremError::Config(format!("bad value `{value}` for `{key}`"))),
    }
}

// (key, getter, setter) triples for every field of ExperimentConfig.
macro_rules! keys {
    ($cfg:ident, $key:ident, $value:ident; $($name:literal => $($field:ident).+ : $kind:tt),* $(,)?) => {
        fn set_key($cfg: &mut ExperimentConfig, $key: &str, $value: &str) -> Result<()> {
            match $key {
                $($name => { $cfg.$($field).+ = keys!(@parse $kind, $key, $value); })*
                _ => return Err(LremError::Config(format!("unknown key `{}`", $key))),
            }
            Ok(())
        }

        fn render_keys($cfg: &ExperimentConfig) -> Vec<(&'static str, String)> {
            vec![$(($name, keys!(@show $kind, $cfg.$($field).+))),*]
        }
    };
    (@parse bool, $key:ident, $value:ident) => { parse_bool($key, $value)? };
    (@parse num, $key:ident, $value:ident) => { parse($key, $value)? };
    (@show bool, $v:expr) => { $v.to_string() };
    (@show num, $v:expr) => { format!("{:?}", $v).to_lowercase() };
}

keys! { cfg, key, value;
    "seed" => data.seed: num,
    "items" => data.items: num,
    "queries_per_category" => data.queries_per_category: num,
    "eval_per_category" => data.eval_per_category: num,
    "brands" => data.sizes.brands: num,
    "peer_group" => data.sizes.peer_group: num,
    "categories" => data.sizes.categories: num,
    "attributes_per_category" => data.sizes.attributes_per_category: num,
    "max_item_attributes" => data.sizes.max_item_attributes: num,
    "months" => data.sizes.months: num,
    "activities" => data.sizes.activities: num,
    "accessories_per_activity" => data.sizes.accessories_per_activity: num,
    "pipeline_k" => data.pipeline.k: num,
    "noise" => data.pipeline.noise: num,
    "rl_fraction" => data.pipeline.rl_fraction: num,
    "pipeline_seed" => data.pipeline.seed: num,
    "n_layers" => model.n_layers: num,
    "d_model" => model.d_model: num,
    "n_heads" => model.n_heads: num,
    "d_ff" => model.d_ff: num,
    "max_seq_len" => model.max_seq_len: num,
    "tie_embeddings" => model.tie_embeddings: bool,
    "lambda_sft" => train.lambda_sft: num,
    "lambda_nce" => train.lambda_nce: num,
    "gamma_grpo" => train.gamma_grpo: num,
    "gamma_nce" => train.gamma_nce: num,
    "tau" => train.tau: num,
    "cot_max" => train.cot_max: num,
    "group_size" => train.group_size: num,
    "clip_eps" => train.clip_eps: num,
    "std_floor" => train.std_floor: num,
    "inner_epochs" => train.inner_epochs: num,
    "temperature" => train.temperature: num,
    "beta_format" => train.beta_format: num,
    "beta_length" => train.beta_length: num,
    "beta_accuracy" => train.beta_accuracy: num,
    "batch_cold" => train.batch_cold: num,
    "batch_rl" => train.batch_rl: num,
    "lr_cold" => train.lr_cold: num,
    "lr_rl" => train.lr_rl: num,
    "warmup_ratio" => train.warmup_ratio: num,
    "epochs_cold" => train.epochs_cold: num,
    "epochs_rl" => train.epochs_rl: num,
    "optimizer_cold" => train.optimizer_cold: num,
    "optimizer_rl" => train.optimizer_rl: num,
    "seed_model" => train.seed_model: num,
    "seed_cold" => train.seed_cold: num,
    "seed_rl" => train.seed_rl: num,
    "float_width" => train.float_width: num,
    "k" => k: num,
    "kp" => kp: num,
    "probe_queries" => probe_queries: num,
    "eval_seed" => eval_seed: num,
}

impl ExperimentConfig {
    /// Applies `key = value` lines on top of the defaults and validates.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = ExperimentConfig::default();
        cfg.apply(text)?;
        Ok(cfg)
    }

    pub fn apply(&mut self, text: &str) -> Result<()> {
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| LremError::Config(format!("line {}: expected `key = value`", n + 1)))?;
            self.set(key.trim(), value.trim())?;
        }
        self.sync();
        self.validate()
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        set_key(self, key, value)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| LremError::io(path, e))?;
        Self::parse(&text)
    }

    /// Fields that must agree across stages.
    fn sync(&mut self) {
        self.data.pipeline.cot_max = self.train.cot_max;
        self.model.float_width = self.train.float_width;
    }

    pub fn validate(&self) -> Result<()> {
        self.data.validate()?;
        self.train.validate()?;
        let mut model = self.model;
        model.vocab_size = model.vocab_size.max(6);
        model.validate()?;
        if self.k == 0 || self.kp == 0 {
            return Err(LremError::Config("k and kp must be >= 1".into()));
        }
        if self.probe_queries < 2 {
            return Err(LremError::Config("probe_queries must be >= 2".into()));
        }
        Ok(())
    }

    /// Every key with its current value, in a form `parse` accepts.
    pub fn render(&self) -> String {
        let mut s = String::new();
        for (k, v) in render_keys(self) {
            let _ = writeln!(s, "{k} = {v}");
        }
        s
    }
}
