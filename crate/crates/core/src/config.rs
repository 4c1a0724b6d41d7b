//! Flat `key = value` configuration shared by every command.

use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use hunkfix_nn::CycleConfig;
use thiserror::Error;

use crate::embed::GloveConfig;
use crate::expansion::ClassifierConfig;
use crate::hunkdetect::ScorerConfig;
use crate::postprocess::FilterConfig;
use crate::repair::{RepairConfig, Scheme};

#[derive(Debug, Error, PartialEq)]
pub enum ConfigError {
    #[error("line {0}: expected `key = value`")]
    Syntax(usize),
    #[error("line {line}: unknown key `{key}`")]
    UnknownKey { line: usize, key: String },
    #[error("line {line}: bad value `{value}` for `{key}`")]
    BadValue { line: usize, key: String, value: String },
    #[error("{0}")]
    Io(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Config {
    pub seed: u64,
    pub glove: GloveConfig,
    /// Statements taken from the top of the suspiciousness ranking.
    pub sbfl_top_k: usize,
    pub hunk_threshold: f64,
    pub scorer: ScorerConfig,
    /// Statements examined on each side of a seed during expansion.
    pub expansion_window: usize,
    pub classifier: ClassifierConfig,
    pub repair: RepairConfig,
    pub filters: FilterConfig,
    /// Patches validated per hunk group.
    pub validate_top: usize,
    pub budget_ms: u64,
    pub hunk_detection: bool,
    pub expansion: bool,
}

impl Default for Config {
    fn default() -> Self {
        Self {
            seed: 1,
            glove: GloveConfig::default(),
            sbfl_top_k: 20,
            hunk_threshold: 0.5,
            scorer: ScorerConfig::default(),
            expansion_window: 5,
            classifier: ClassifierConfig::default(),
            repair: RepairConfig::default(),
            filters: FilterConfig::default(),
            validate_top: 5,
            budget_ms: 60_000,
            hunk_detection: true,
            expansion: true,
        }
    }
}

fn parse_value<T: FromStr>(line: usize, key: &str, value: &str) -> Result<T, ConfigError> {
    value.parse().map_err(|_| ConfigError::BadValue { line, key: key.into(), value: value.into() })
}

macro_rules! keys {
    ($($key:literal => $($field:ident).+),* $(,)?) => {
        impl Config {
            /// Sets one key; `line` is only used in error messages.
            pub fn set(&mut self, line: usize, key: &str, value: &str) -> Result<(), ConfigError> {
                match key {
                    $($key => self.$($field).+ = parse_value(line, key, value)?,)*
                    "repair.scheme" => {
                        self.repair.scheme = match value {
                            "hadamard" => Scheme::Hadamard,
                            "cross3" => Scheme::Cross3,
                            _ => return Err(ConfigError::BadValue { line, key: key.into(), value: value.into() }),
                        }
                    }
                    _ => return Err(ConfigError::UnknownKey { line, key: key.into() }),
                }
                Ok(())
            }

            /// Every key with its current value, one per line.
            pub fn to_text(&self) -> String {
                let mut out = String::new();
                $(let _ = writeln!(out, "{} = {}", $key, self.$($field).+);)*
                let scheme = match self.repair.scheme { Scheme::Hadamard => "hadamard", Scheme::Cross3 => "cross3" };
                let _ = writeln!(out, "repair.scheme = {scheme}");
                out
            }
        }
    };
}

keys! {
    "seed" => seed,
    "embed.dims" => glove.dims,
    "embed.window" => glove.window,
    "embed.epochs" => glove.epochs,
    "embed.x_max" => glove.x_max,
    "embed.alpha" => glove.alpha,
    "embed.learning_rate" => glove.learning_rate,
    "sbfl.top_k" => sbfl_top_k,
    "hunk.threshold" => hunk_threshold,
    "scorer.hidden" => scorer.hidden,
    "scorer.epochs" => scorer.epochs,
    "scorer.batch" => scorer.batch,
    "scorer.learning_rate" => scorer.learning_rate,
    "expansion.window" => expansion_window,
    "classifier.hidden" => classifier.hidden,
    "classifier.epochs" => classifier.epochs,
    "classifier.learning_rate" => classifier.learning_rate,
    "repair.hidden" => repair.hidden,
    "repair.epochs" => repair.epochs,
    "repair.ctl_epochs" => repair.ctl_epochs,
    "repair.batch" => repair.batch,
    "repair.learning_rate" => repair.learning_rate,
    "repair.attention" => repair.attention,
    "repair.alpha" => repair.cycle.alpha,
    "repair.l2_weight" => repair.cycle.l2_weight,
    "repair.adversarial" => repair.cycle.adversarial,
    "repair.cycle" => repair.cycle.cycle,
    "repair.disc_hidden" => repair.cycle.disc_hidden,
    "repair.ctl_focus_weight" => repair.ctl_focus_weight,
    "repair.beam_width" => repair.beam_width,
    "repair.tokens_per_node" => repair.tokens_per_node,
    "filters.drop_unchanged" => filters.drop_unchanged,
    "filters.typecheck" => filters.typecheck,
    "validate.top" => validate_top,
    "validate.budget_ms" => budget_ms,
    "ablation.hunk_detection" => hunk_detection,
    "ablation.expansion" => expansion,
}

impl Config {
    /// Parses `key = value` lines over the defaults; `#` starts a comment.
    pub fn parse(text: &str) -> Result<Config, ConfigError> {
        let mut cfg = Config::default();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or(ConfigError::Syntax(i + 1))?;
            cfg.set(i + 1, k.trim(), v.trim())?;
        }
        cfg.derive_seeds();
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Config, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError::Io(format!("{}: {e}", path.display())))?;
        Config::parse(&text)
    }

    /// Spreads the global seed over the per-model seeds.
    pub fn derive_seeds(&mut self) {
        self.glove.seed = self.seed;
        self.scorer.seed = self.seed.wrapping_add(1);
        self.classifier.seed = self.seed.wrapping_add(2);
        self.repair.seed = self.seed.wrapping_add(3);
        self.repair.summarizer_seed = self.seed.wrapping_add(4);
    }

    pub fn cycle(&self) -> CycleConfig {
        self.repair.cycle
    }
}
