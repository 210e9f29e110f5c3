//! Flat `key=value` run configuration.

use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::fwt::FilterInit;
use crate::recurrent::CompressSet;
use crate::training::optim::{OptimizerConfig, OptimizerKind};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TaskKind {
    Adding,
    Copy,
    /// Feed-forward classifier on downscaled images.
    Mnist,
    /// GRU over the pixel sequence of downscaled images.
    SeqMnist,
}

impl FromStr for TaskKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "adding" => Ok(TaskKind::Adding),
            "copy" => Ok(TaskKind::Copy),
            "mnist" => Ok(TaskKind::Mnist),
            "seq-mnist" => Ok(TaskKind::SeqMnist),
            other => Err(Error::invalid(format!("unknown task `{other}` (expected adding, copy, mnist or seq-mnist)"))),
        }
    }
}

impl fmt::Display for TaskKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TaskKind::Adding => "adding",
            TaskKind::Copy => "copy",
            TaskKind::Mnist => "mnist",
            TaskKind::SeqMnist => "seq-mnist",
        })
    }
}

/// Learning-rate multiplier over the run.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LrSchedule {
    Constant,
    /// Half-cosine from the full rate at step 1 down to zero after the last step.
    Cosine,
}

impl LrSchedule {
    /// Multiplier for 1-based `step` of `steps`.
    pub fn factor(self, step: usize, steps: usize) -> f64 {
        match self {
            LrSchedule::Constant => 1.0,
            LrSchedule::Cosine => {
                let t = (step.saturating_sub(1)) as f64 / steps.max(1) as f64;
                0.5 * (1.0 + (std::f64::consts::PI * t).cos())
            }
        }
    }
}

impl FromStr for LrSchedule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "constant" => Ok(LrSchedule::Constant),
            "cosine" => Ok(LrSchedule::Cosine),
            other => Err(Error::invalid(format!("unknown lr_schedule `{other}` (expected constant or cosine)"))),
        }
    }
}

impl fmt::Display for LrSchedule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            LrSchedule::Constant => "constant",
            LrSchedule::Cosine => "cosine",
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub task: TaskKind,
    pub seed: u64,
    pub hidden: usize,
    pub compress: CompressSet,
    pub filter_init: FilterInit,
    pub filter_len: usize,
    pub max_levels: usize,
    pub dropout: f64,
    /// Sequence length `T` for the synthetic tasks.
    pub seq_len: usize,
    /// Alphabet size `n` of the copy task.
    pub symbols: usize,
    pub steps: usize,
    pub batch: usize,
    pub optimizer: OptimizerKind,
    /// `None` uses the optimizer's standard rate.
    pub lr: Option<f64>,
    pub lr_schedule: LrSchedule,
    /// Global-norm threshold; `0` disables clipping.
    pub clip: f64,
    pub wavelet_loss: bool,
    pub wavelet_weight: f64,
    pub log_every: usize,
    pub eval_samples: usize,
    pub mnist_dir: PathBuf,
    pub downscale: usize,
    /// Images taken from the training files; the rest is ignored.
    pub train_limit: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            task: TaskKind::Adding,
            seed: 0,
            hidden: 64,
            compress: CompressSet::none(),
            filter_init: FilterInit::HaarPadded,
            filter_len: 6,
            max_levels: 6,
            dropout: 0.0,
            seq_len: 30,
            symbols: 8,
            steps: 1000,
            batch: 32,
            optimizer: OptimizerKind::RmsProp,
            lr: None,
            lr_schedule: LrSchedule::Constant,
            clip: 1.0,
            wavelet_loss: true,
            wavelet_weight: 1.0,
            log_every: 100,
            eval_samples: 1000,
            mnist_dir: PathBuf::from("data/mnist"),
            downscale: 2,
            train_limit: usize::MAX,
        }
    }
}

pub const KEYS: &[&str] = &[
    "task",
    "seed",
    "hidden",
    "compress",
    "filter_init",
    "filter_len",
    "max_levels",
    "dropout",
    "seq_len",
    "symbols",
    "steps",
    "batch",
    "optimizer",
    "lr",
    "lr_schedule",
    "clip",
    "wavelet_loss",
    "wavelet_weight",
    "log_every",
    "eval_samples",
    "mnist_dir",
    "downscale",
    "train_limit",
];

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value.trim().parse().map_err(|_| Error::invalid(format!("invalid value `{value}` for `{key}`")))
}

impl TrainConfig {
    pub fn optimizer_config(&self) -> OptimizerConfig {
        let base = OptimizerConfig::new(self.optimizer);
        match self.lr {
            Some(lr) => base.with_lr(lr),
            None => base,
        }
    }

    /// Applies one `key=value` setting.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let key = key.trim();
        match key {
            "task" => self.task = value.parse()?,
            "seed" => self.seed = parse(key, value)?,
            "hidden" => self.hidden = parse(key, value)?,
            "compress" => self.compress = value.parse()?,
            "filter_init" => self.filter_init = value.parse()?,
            "filter_len" => self.filter_len = parse(key, value)?,
            "max_levels" => self.max_levels = parse(key, value)?,
            "dropout" => self.dropout = parse(key, value)?,
            "seq_len" => self.seq_len = parse(key, value)?,
            "symbols" => self.symbols = parse(key, value)?,
            "steps" => self.steps = parse(key, value)?,
            "batch" => self.batch = parse(key, value)?,
            "optimizer" => self.optimizer = value.parse()?,
            "lr" => {
                self.lr = match value.trim() {
                    "" | "default" => None,
                    v => Some(parse(key, v)?),
                }
            }
            "lr_schedule" => self.lr_schedule = value.parse()?,
            "clip" => self.clip = parse(key, value)?,
            "wavelet_loss" => self.wavelet_loss = parse(key, value)?,
            "wavelet_weight" => self.wavelet_weight = parse(key, value)?,
            "log_every" => self.log_every = parse(key, value)?,
            "eval_samples" => self.eval_samples = parse(key, value)?,
            "mnist_dir" => self.mnist_dir = PathBuf::from(value.trim()),
            "downscale" => self.downscale = parse(key, value)?,
            "train_limit" => {
                self.train_limit = match value.trim() {
                    "all" => usize::MAX,
                    v => parse(key, v)?,
                }
            }
            other => return Err(Error::invalid(format!("unknown config key `{other}`"))),
        }
        Ok(())
    }

    /// Parses `key=value` lines; blank lines and `#` comments are skipped.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (i, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::invalid(format!("line {}: expected key=value, got `{line}`", i + 1)))?;
            self.set(k, v)?;
        }
        Ok(())
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut c = TrainConfig::default();
        c.apply_text(text)?;
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("hidden", self.hidden),
            ("filter_len", self.filter_len),
            ("max_levels", self.max_levels),
            ("steps", self.steps),
            ("batch", self.batch),
            ("log_every", self.log_every),
            ("eval_samples", self.eval_samples),
            ("downscale", self.downscale),
        ];
        for (k, v) in positive {
            if v == 0 {
                return Err(Error::invalid(format!("`{k}` must be at least 1")));
            }
        }
        if !self.filter_len.is_multiple_of(2) || self.filter_len < 2 {
            return Err(Error::invalid("filter_len must be even and >= 2"));
        }
        if self.task == TaskKind::Adding && self.seq_len < 2 {
            return Err(Error::invalid("seq_len must be >= 2 for the adding task"));
        }
        if self.task == TaskKind::Copy && self.symbols < 2 {
            return Err(Error::invalid("symbols must be >= 2 for the copy task"));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::invalid("dropout must lie in [0, 1)"));
        }
        if self.clip < 0.0 || !self.wavelet_weight.is_finite() || self.wavelet_weight < 0.0 {
            return Err(Error::invalid("clip and wavelet_weight must be non-negative"));
        }
        self.optimizer_config().validate()
    }

    /// Serialises every key; [`TrainConfig::from_text`] reads it back.
    pub fn to_text(&self) -> String {
        let lr = self.lr.map_or("default".to_string(), |v| v.to_string());
        let limit = if self.train_limit == usize::MAX { "all".to_string() } else { self.train_limit.to_string() };
        let values = [
            self.task.to_string(),
            self.seed.to_string(),
            self.hidden.to_string(),
            self.compress.to_string(),
            self.filter_init.to_string(),
            self.filter_len.to_string(),
            self.max_levels.to_string(),
            self.dropout.to_string(),
            self.seq_len.to_string(),
            self.symbols.to_string(),
            self.steps.to_string(),
            self.batch.to_string(),
            self.optimizer.to_string(),
            lr,
            self.lr_schedule.to_string(),
            self.clip.to_string(),
            self.wavelet_loss.to_string(),
            self.wavelet_weight.to_string(),
            self.log_every.to_string(),
            self.eval_samples.to_string(),
            self.mnist_dir.display().to_string(),
            self.downscale.to_string(),
            limit,
        ];
        KEYS.iter().zip(values).map(|(k, v)| format!("{k}={v}\n")).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn echo_round_trip() {
        let mut c = TrainConfig::default();
        c.apply_text("task=copy\ncompress=reset # comment\nlr=0.002\nlr_schedule=cosine\n\ntrain_limit=500").unwrap();
        let back = TrainConfig::from_text(&c.to_text()).unwrap();
        assert_eq!(back, c);
        assert_eq!(TrainConfig::from_text(&TrainConfig::default().to_text()).unwrap(), TrainConfig::default());
    }

    #[test]
    fn rejects_unknown_and_malformed() {
        let mut c = TrainConfig::default();
        assert!(c.set("hiden", "3").is_err());
        assert!(c.set("hidden", "x").is_err());
        assert!(c.apply_text("hidden 3").is_err());
        assert!(TrainConfig::from_text("steps=0").is_err());
        assert!(TrainConfig::from_text("filter_len=5").is_err());
        assert!(c.set("lr_schedule", "linear").is_err());
    }

    #[test]
    fn cosine_runs_from_full_rate_towards_zero() {
        assert_eq!(LrSchedule::Cosine.factor(1, 100), 1.0);
        assert!((LrSchedule::Cosine.factor(51, 100) - 0.5).abs() < 1e-12);
        assert!(LrSchedule::Cosine.factor(100, 100) > 0.0);
        assert!(LrSchedule::Cosine.factor(100, 100) < 1e-3);
        assert_eq!(LrSchedule::Constant.factor(100, 100), 1.0);
    }
}
