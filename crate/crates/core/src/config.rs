//! Run configuration: defaults, a `key = value` file format and validation.
//!
//! Lines are `key = value`; blank lines and lines starting with `#` are
//! ignored. Unknown keys are an error. Later assignments win, so a file can
//! be layered over the defaults and command-line overrides over the file.

use std::fmt::Write as _;
use std::str::FromStr;

use thiserror::Error;

use crate::corpus::{VocabConfig, DEFAULT_API_MIN_FREQ, DEFAULT_CONST_MIN_FREQ, DEFAULT_SUBSAMPLE_THRESHOLD};
use crate::embed::{SkipGramConfig, DEFAULT_EMBED_LR};
use crate::hylstm::{LossMode, Pooling, TrainConfig, DEFAULT_ALPHA, DEFAULT_HIDDEN, DEFAULT_LAYERS, DEFAULT_LR};
use crate::nn::{OptimizerKind, DEFAULT_CLIP_NORM};
use crate::slicer::DEFAULT_MAX_CALL_DEPTH;

#[derive(Debug, Error, PartialEq)]
pub enum ConfigError {
    #[error("line {line}: {message}")]
    Syntax { line: usize, message: String },
    #[error("unknown config key `{0}`")]
    UnknownKey(String),
    #[error("bad value for `{key}`: {message}")]
    Value { key: String, message: String },
    #[error("invalid config: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub dim: usize,
    pub window: usize,
    pub negatives: usize,
    pub batch: usize,
    pub epochs: usize,
    pub lr: f64,
    pub alpha: f64,
    pub budget: usize,
    pub max_len: usize,
    pub max_call_depth: usize,
    pub embed_lr: f64,
    pub subsample: f64,
    pub hidden: usize,
    pub layers: usize,
    /// `hybrid`, `token_level` or `sequence_level`.
    pub loss_mode: String,
    pub pooling: Pooling,
    pub optimizer: OptimizerKind,
    pub clip_norm: f64,
    pub api_min_freq: u64,
    pub const_min_freq: u64,
    pub train_frac: f64,
    /// Cap on exhaustively enumerated paths per graph.
    pub max_paths: usize,
    /// Comma-separated API prefixes that mark slicing criteria.
    pub targets: String,
    pub seed: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            dim: crate::embed::DEFAULT_DIM,
            window: crate::embed::DEFAULT_WINDOW,
            negatives: crate::embed::DEFAULT_NEGATIVES,
            batch: crate::embed::DEFAULT_BATCH,
            epochs: crate::embed::DEFAULT_EPOCHS,
            lr: DEFAULT_LR,
            alpha: DEFAULT_ALPHA,
            budget: crate::adg::DEFAULT_PATH_BUDGET,
            max_len: crate::adg::DEFAULT_MAX_LEN,
            max_call_depth: DEFAULT_MAX_CALL_DEPTH,
            embed_lr: DEFAULT_EMBED_LR,
            subsample: DEFAULT_SUBSAMPLE_THRESHOLD,
            hidden: DEFAULT_HIDDEN,
            layers: DEFAULT_LAYERS,
            loss_mode: "hybrid".to_string(),
            pooling: Pooling::Hidden,
            optimizer: OptimizerKind::Adam,
            clip_norm: DEFAULT_CLIP_NORM,
            api_min_freq: DEFAULT_API_MIN_FREQ,
            const_min_freq: DEFAULT_CONST_MIN_FREQ,
            train_frac: 0.8,
            max_paths: 1000,
            targets: "Cipher.".to_string(),
            seed: 0,
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T, ConfigError>
where
    T::Err: std::fmt::Display,
{
    value.parse().map_err(|e: T::Err| ConfigError::Value { key: key.to_string(), message: e.to_string() })
}

impl RunConfig {
    pub const KEYS: &'static [&'static str] = &[
        "dim", "window", "negatives", "batch", "epochs", "lr", "alpha", "budget", "max_len", "max_call_depth",
        "embed_lr", "subsample", "hidden", "layers", "loss_mode", "pooling", "optimizer", "clip_norm",
        "api_min_freq", "const_min_freq", "train_frac", "max_paths", "targets", "seed",
    ];

    pub fn set(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        let v = value.trim();
        match key {
            "dim" => self.dim = parse(key, v)?,
            "window" => self.window = parse(key, v)?,
            "negatives" => self.negatives = parse(key, v)?,
            "batch" => self.batch = parse(key, v)?,
            "epochs" => self.epochs = parse(key, v)?,
            "lr" => self.lr = parse(key, v)?,
            "alpha" => self.alpha = parse(key, v)?,
            "budget" => self.budget = parse(key, v)?,
            "max_len" => self.max_len = parse(key, v)?,
            "max_call_depth" => self.max_call_depth = parse(key, v)?,
            "embed_lr" => self.embed_lr = parse(key, v)?,
            "subsample" => self.subsample = parse(key, v)?,
            "hidden" => self.hidden = parse(key, v)?,
            "layers" => self.layers = parse(key, v)?,
            "loss_mode" => self.loss_mode = v.to_string(),
            "pooling" => {
                self.pooling = Pooling::parse(v).map_err(|e| ConfigError::Value { key: key.into(), message: e.to_string() })?
            }
            "optimizer" => self.optimizer = parse(key, v)?,
            "clip_norm" => self.clip_norm = parse(key, v)?,
            "api_min_freq" => self.api_min_freq = parse(key, v)?,
            "const_min_freq" => self.const_min_freq = parse(key, v)?,
            "train_frac" => self.train_frac = parse(key, v)?,
            "max_paths" => self.max_paths = parse(key, v)?,
            "targets" => self.targets = v.to_string(),
            "seed" => self.seed = parse(key, v)?,
            other => return Err(ConfigError::UnknownKey(other.to_string())),
        }
        Ok(())
    }

    pub fn get(&self, key: &str) -> Option<String> {
        Some(match key {
            "dim" => self.dim.to_string(),
            "window" => self.window.to_string(),
            "negatives" => self.negatives.to_string(),
            "batch" => self.batch.to_string(),
            "epochs" => self.epochs.to_string(),
            "lr" => self.lr.to_string(),
            "alpha" => self.alpha.to_string(),
            "budget" => self.budget.to_string(),
            "max_len" => self.max_len.to_string(),
            "max_call_depth" => self.max_call_depth.to_string(),
            "embed_lr" => self.embed_lr.to_string(),
            "subsample" => self.subsample.to_string(),
            "hidden" => self.hidden.to_string(),
            "layers" => self.layers.to_string(),
            "loss_mode" => self.loss_mode.clone(),
            "pooling" => self.pooling.tag().to_string(),
            "optimizer" => self.optimizer.to_string(),
            "clip_norm" => self.clip_norm.to_string(),
            "api_min_freq" => self.api_min_freq.to_string(),
            "const_min_freq" => self.const_min_freq.to_string(),
            "train_frac" => self.train_frac.to_string(),
            "max_paths" => self.max_paths.to_string(),
            "targets" => self.targets.clone(),
            "seed" => self.seed.to_string(),
            _ => return None,
        })
    }

    /// Applies every assignment in `text` on top of `self`.
    pub fn apply_text(&mut self, text: &str) -> Result<(), ConfigError> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| ConfigError::Syntax {
                line: i + 1,
                message: "expected `key = value`".into(),
            })?;
            self.set(k.trim(), v)?;
        }
        Ok(())
    }

    pub fn from_text(text: &str) -> Result<Self, ConfigError> {
        let mut cfg = RunConfig::default();
        cfg.apply_text(text)?;
        Ok(cfg)
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for key in Self::KEYS {
            let _ = writeln!(s, "{key} = {}", self.get(key).expect("known key"));
        }
        s
    }

    pub fn loss_mode(&self) -> Result<LossMode, ConfigError> {
        LossMode::parse(&self.loss_mode, self.alpha)
            .map_err(|e| ConfigError::Value { key: "loss_mode".into(), message: e.to_string() })
    }

    pub fn target_prefixes(&self) -> Vec<&str> {
        self.targets.split(',').map(str::trim).filter(|s| !s.is_empty()).collect()
    }

    pub fn vocab_config(&self) -> VocabConfig {
        VocabConfig { api_min_freq: self.api_min_freq, const_min_freq: self.const_min_freq, ..VocabConfig::default() }
    }

    pub fn skipgram(&self, threads: usize) -> SkipGramConfig {
        SkipGramConfig {
            dim: self.dim,
            window: self.window,
            negatives: self.negatives,
            batch: self.batch,
            epochs: self.epochs,
            lr: self.embed_lr,
            subsample: self.subsample,
            seed: self.seed,
            threads,
        }
    }

    pub fn train(&self, threads: usize) -> TrainConfig {
        TrainConfig {
            epochs: self.epochs,
            batch: self.batch,
            lr: self.lr,
            optimizer: self.optimizer,
            clip_norm: self.clip_norm,
            seed: self.seed,
            threads,
            checkpoint_dir: None,
        }
    }

    /// Checks every module precondition before any work starts.
    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |m: &str| Err(ConfigError::Invalid(m.to_string()));
        if self.budget == 0 || self.max_len == 0 || self.max_paths == 0 {
            return bad("budget, max_len and max_paths must be >= 1");
        }
        if self.hidden == 0 || self.layers == 0 {
            return bad("hidden and layers must be >= 1");
        }
        if !(0.0..=1.0).contains(&self.alpha) {
            return bad("alpha must be in [0, 1]");
        }
        if !(self.train_frac > 0.0 && self.train_frac < 1.0) {
            return bad("train_frac must be in (0, 1)");
        }
        if self.target_prefixes().is_empty() {
            return bad("targets must name at least one prefix");
        }
        self.loss_mode()?;
        self.skipgram(1).validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        self.train(1).validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        Ok(())
    }
}
