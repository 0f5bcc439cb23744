//! Flat `key = value` run configuration. Keys are identical to flag names.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use scalegrad_core::decoding::{DecodeConfig, Strategy};
use scalegrad_core::model::{NovelScope, TrainConfig};
use scalegrad_core::{Objective, TokenizerMode};

use crate::UsageError;

/// Every accepted key, in the order written to `config.txt`.
pub const KEYS: &[&str] = &[
    "corpus",
    "tokenizer",
    "vocab_size",
    "d_embed",
    "d_hidden",
    "objective",
    "gamma",
    "alpha",
    "learning_rate",
    "epochs",
    "batch_size",
    "max_len",
    "seed",
    "clip_norm",
    "max_updates",
    "carry_over",
    "exempt_specials",
    "out_dir",
    "strategy",
    "beam_size",
    "top_k",
    "top_p",
    "ngram_block_n",
    "max_new_tokens",
    "prefix_len",
    "length_norm_beta",
];

/// Keys that only affect decoding.
pub const DECODE_KEYS: &[&str] = &[
    "strategy",
    "beam_size",
    "top_k",
    "top_p",
    "ngram_block_n",
    "max_new_tokens",
    "prefix_len",
    "length_norm_beta",
    "seed",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ObjectiveKind {
    Mle,
    Sg,
    Ul,
}

impl FromStr for ObjectiveKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "mle" => Ok(Self::Mle),
            "sg" => Ok(Self::Sg),
            "ul" => Ok(Self::Ul),
            _ => Err("expected mle, sg or ul".into()),
        }
    }
}

impl fmt::Display for ObjectiveKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Mle => "mle",
            Self::Sg => "sg",
            Self::Ul => "ul",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StrategyKind {
    Greedy,
    Beam,
    TopK,
    TopP,
}

impl FromStr for StrategyKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "greedy" => Ok(Self::Greedy),
            "beam" => Ok(Self::Beam),
            "top_k" => Ok(Self::TopK),
            "top_p" => Ok(Self::TopP),
            _ => Err("expected greedy, beam, top_k or top_p".into()),
        }
    }
}

impl fmt::Display for StrategyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Greedy => "greedy",
            Self::Beam => "beam",
            Self::TopK => "top_k",
            Self::TopP => "top_p",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub corpus: Option<PathBuf>,
    pub tokenizer: TokenizerMode,
    /// 0 keeps every token type.
    pub vocab_size: usize,
    pub d_embed: usize,
    pub d_hidden: usize,
    pub objective: ObjectiveKind,
    pub gamma: f64,
    pub alpha: f64,
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub max_len: usize,
    pub seed: u64,
    pub clip_norm: f64,
    pub max_updates: usize,
    pub carry_over: bool,
    pub exempt_specials: bool,
    pub out_dir: Option<PathBuf>,
    pub strategy: StrategyKind,
    pub beam_size: usize,
    pub top_k: usize,
    pub top_p: f64,
    /// 0 disables blocking.
    pub ngram_block_n: usize,
    pub max_new_tokens: usize,
    pub prefix_len: usize,
    pub length_norm_beta: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        let t = TrainConfig::default();
        let d = DecodeConfig::default();
        Self {
            corpus: None,
            tokenizer: TokenizerMode::Char,
            vocab_size: 0,
            d_embed: 64,
            d_hidden: 128,
            objective: ObjectiveKind::Mle,
            gamma: 0.2,
            alpha: 1.0,
            learning_rate: t.learning_rate,
            epochs: t.epochs,
            batch_size: t.batch_size,
            max_len: t.max_len,
            seed: t.seed,
            clip_norm: t.clip_norm,
            max_updates: t.max_updates,
            carry_over: false,
            exempt_specials: false,
            out_dir: None,
            strategy: StrategyKind::Greedy,
            beam_size: 4,
            top_k: 40,
            top_p: 0.9,
            ngram_block_n: 0,
            max_new_tokens: d.max_new_tokens,
            prefix_len: 50,
            length_norm_beta: d.length_norm_beta,
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T, UsageError>
where
    T::Err: fmt::Display,
{
    value
        .parse()
        .map_err(|e| UsageError(format!("invalid value {value:?} for `{key}`: {e}")))
}

fn path_or_none(value: &str) -> Option<PathBuf> {
    (!value.is_empty()).then(|| PathBuf::from(value))
}

impl RunConfig {
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), UsageError> {
        match key {
            "corpus" => self.corpus = path_or_none(value),
            "tokenizer" => self.tokenizer = parse(key, value)?,
            "vocab_size" => self.vocab_size = parse(key, value)?,
            "d_embed" => self.d_embed = parse(key, value)?,
            "d_hidden" => self.d_hidden = parse(key, value)?,
            "objective" => self.objective = parse(key, value)?,
            "gamma" => self.gamma = parse(key, value)?,
            "alpha" => self.alpha = parse(key, value)?,
            "learning_rate" => self.learning_rate = parse(key, value)?,
            "epochs" => self.epochs = parse(key, value)?,
            "batch_size" => self.batch_size = parse(key, value)?,
            "max_len" => self.max_len = parse(key, value)?,
            "seed" => self.seed = parse(key, value)?,
            "clip_norm" => self.clip_norm = parse(key, value)?,
            "max_updates" => self.max_updates = parse(key, value)?,
            "carry_over" => self.carry_over = parse(key, value)?,
            "exempt_specials" => self.exempt_specials = parse(key, value)?,
            "out_dir" => self.out_dir = path_or_none(value),
            "strategy" => self.strategy = parse(key, value)?,
            "beam_size" => self.beam_size = parse(key, value)?,
            "top_k" => self.top_k = parse(key, value)?,
            "top_p" => self.top_p = parse(key, value)?,
            "ngram_block_n" => self.ngram_block_n = parse(key, value)?,
            "max_new_tokens" => self.max_new_tokens = parse(key, value)?,
            "prefix_len" => self.prefix_len = parse(key, value)?,
            "length_norm_beta" => self.length_norm_beta = parse(key, value)?,
            other => return Err(UsageError(format!("unknown config key `{other}`"))),
        }
        Ok(())
    }

    pub fn get(&self, key: &str) -> Option<String> {
        let path = |p: &Option<PathBuf>| p.as_ref().map(|p| p.display().to_string()).unwrap_or_default();
        Some(match key {
            "corpus" => path(&self.corpus),
            "tokenizer" => self.tokenizer.to_string(),
            "vocab_size" => self.vocab_size.to_string(),
            "d_embed" => self.d_embed.to_string(),
            "d_hidden" => self.d_hidden.to_string(),
            "objective" => self.objective.to_string(),
            "gamma" => self.gamma.to_string(),
            "alpha" => self.alpha.to_string(),
            "learning_rate" => self.learning_rate.to_string(),
            "epochs" => self.epochs.to_string(),
            "batch_size" => self.batch_size.to_string(),
            "max_len" => self.max_len.to_string(),
            "seed" => self.seed.to_string(),
            "clip_norm" => self.clip_norm.to_string(),
            "max_updates" => self.max_updates.to_string(),
            "carry_over" => self.carry_over.to_string(),
            "exempt_specials" => self.exempt_specials.to_string(),
            "out_dir" => path(&self.out_dir),
            "strategy" => self.strategy.to_string(),
            "beam_size" => self.beam_size.to_string(),
            "top_k" => self.top_k.to_string(),
            "top_p" => self.top_p.to_string(),
            "ngram_block_n" => self.ngram_block_n.to_string(),
            "max_new_tokens" => self.max_new_tokens.to_string(),
            "prefix_len" => self.prefix_len.to_string(),
            "length_norm_beta" => self.length_norm_beta.to_string(),
            _ => return None,
        })
    }

    /// Applies `key = value` lines; `#` starts a comment line.
    pub fn apply_text(&mut self, text: &str, origin: &str) -> Result<(), UsageError> {
        for (n, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| UsageError(format!("{origin}:{}: expected `key = value`", n + 1)))?;
            self.set(k.trim(), v.trim())
                .map_err(|e| UsageError(format!("{origin}:{}: {}", n + 1, e.0)))?;
        }
        Ok(())
    }

    pub fn apply_file(&mut self, path: &Path) -> Result<(), UsageError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| UsageError(format!("cannot read config {}: {e}", path.display())))?;
        self.apply_text(&text, &path.display().to_string())
    }

    /// Every key with its resolved value.
    pub fn to_text(&self) -> String {
        KEYS.iter()
            .map(|k| format!("{k} = {}\n", self.get(k).expect("known key")))
            .collect()
    }

    pub fn objective(&self) -> Objective {
        match self.objective {
            ObjectiveKind::Mle => Objective::Mle,
            ObjectiveKind::Sg => Objective::ScaleGrad { gamma: self.gamma },
            ObjectiveKind::Ul => Objective::Unlikelihood { alpha: self.alpha },
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            objective: self.objective(),
            learning_rate: self.learning_rate,
            epochs: self.epochs,
            batch_size: self.batch_size,
            max_len: self.max_len,
            seed: self.seed,
            clip_norm: self.clip_norm,
            novel_scope: NovelScope {
                carry_over: self.carry_over,
                exempt_specials: self.exempt_specials,
            },
            max_updates: self.max_updates,
        }
    }

    pub fn decode_config(&self) -> DecodeConfig {
        DecodeConfig {
            strategy: match self.strategy {
                StrategyKind::Greedy => Strategy::Greedy,
                StrategyKind::Beam => Strategy::Beam(self.beam_size),
                StrategyKind::TopK => Strategy::TopK(self.top_k),
                StrategyKind::TopP => Strategy::TopP(self.top_p),
            },
            max_new_tokens: self.max_new_tokens,
            ngram_block: (self.ngram_block_n > 0).then_some(self.ngram_block_n),
            length_norm_beta: self.length_norm_beta,
            seed: self.seed,
        }
    }
}
