use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::cells::{BiasInit, NoveltyMode};
use crate::error::{Error, Result};
use crate::layer::ReadoutSource;
use crate::memory::BackendKind;
use crate::model::ModelKind;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TaskKind {
    Addition,
    Copy,
    Ucr,
}

impl fmt::Display for TaskKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TaskKind::Addition => "addition",
            TaskKind::Copy => "copy",
            TaskKind::Ucr => "ucr",
        })
    }
}

impl FromStr for TaskKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "addition" => Ok(TaskKind::Addition),
            "copy" => Ok(TaskKind::Copy),
            "ucr" => Ok(TaskKind::Ucr),
            other => Err(Error::Config(format!(
                "task `{other}` must be addition, copy or ucr"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum OptimizerKind {
    RmsProp { decay: f64 },
    Adam { beta1: f64, beta2: f64 },
}

/// Everything a training run depends on. Keys in the config file use the
/// same names as the CLI flags.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub task: TaskKind,
    pub model: ModelKind,
    pub backend: BackendKind,
    pub mode: NoveltyMode,
    pub reset_cell: bool,
    pub readout: ReadoutSource,
    pub bias_init: BiasInit,
    pub seq_len: usize,
    pub copy_n: usize,
    pub copy_m: usize,
    pub hidden: usize,
    pub batch: usize,
    pub batches_per_epoch: usize,
    pub eval_batches: usize,
    pub epochs: usize,
    pub optimizer: String,
    pub lr: f64,
    pub decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    /// Global gradient-norm bound; `None` disables clipping.
    pub clip: Option<f64>,
    pub seed: u64,
    pub memory_seed: u64,
    pub ucr_train: Option<PathBuf>,
    pub ucr_test: Option<PathBuf>,
    pub znormalize: bool,
    pub metrics: PathBuf,
    pub checkpoint: Option<PathBuf>,
    pub resume: Option<PathBuf>,
    pub wallclock: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            task: TaskKind::Addition,
            model: ModelKind::Lz,
            backend: BackendKind::Hrr,
            mode: NoveltyMode::Soft,
            reset_cell: true,
            readout: ReadoutSource::FinalHidden,
            bias_init: BiasInit::Zero,
            seq_len: 100,
            copy_n: 10,
            copy_m: 8,
            hidden: 64,
            batch: 64,
            batches_per_epoch: 20,
            eval_batches: 4,
            epochs: 100,
            optimizer: "rmsprop".into(),
            lr: 1e-3,
            decay: 0.9,
            beta1: 0.9,
            beta2: 0.999,
            clip: Some(5.0),
            seed: 0,
            memory_seed: 0,
            ucr_train: None,
            ucr_test: None,
            znormalize: true,
            metrics: PathBuf::from("metrics.csv"),
            checkpoint: None,
            resume: None,
            wallclock: false,
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("invalid value `{value}` for `{key}`")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => Err(Error::Config(format!("`{key}` expects true or false, got `{value}`"))),
    }
}

fn opt_path(value: &str) -> Option<PathBuf> {
    (!value.is_empty()).then(|| PathBuf::from(value))
}

fn show_path(p: &Option<PathBuf>) -> String {
    p.as_ref().map(|p| p.display().to_string()).unwrap_or_default()
}

impl TrainConfig {
    pub const KEYS: &'static [&'static str] = &[
        "task",
        "model",
        "backend",
        "mode",
        "reset-cell",
        "readout",
        "bias-init",
        "seq-len",
        "copy-n",
        "copy-m",
        "hidden",
        "batch",
        "batches-per-epoch",
        "eval-batches",
        "epochs",
        "optimizer",
        "lr",
        "decay",
        "beta1",
        "beta2",
        "clip",
        "seed",
        "memory-seed",
        "ucr-train",
        "ucr-test",
        "znormalize",
        "metrics",
        "checkpoint",
        "resume",
        "wallclock",
    ];

    /// Sets one key. Unknown keys are rejected.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let value = value.trim();
        match key {
            "task" => self.task = value.parse()?,
            "model" => self.model = value.parse().map_err(|e: Error| Error::Config(e.to_string()))?,
            "backend" => self.backend = value.parse().map_err(|e: Error| Error::Config(e.to_string()))?,
            "mode" => self.mode = value.parse().map_err(|e: Error| Error::Config(e.to_string()))?,
            "reset-cell" => self.reset_cell = parse_bool(key, value)?,
            "readout" => self.readout = value.parse().map_err(|e: Error| Error::Config(e.to_string()))?,
            "bias-init" => self.bias_init = value.parse().map_err(|e: Error| Error::Config(e.to_string()))?,
            "seq-len" => self.seq_len = parse(key, value)?,
            "copy-n" => self.copy_n = parse(key, value)?,
            "copy-m" => self.copy_m = parse(key, value)?,
            "hidden" => self.hidden = parse(key, value)?,
            "batch" => self.batch = parse(key, value)?,
            "batches-per-epoch" => self.batches_per_epoch = parse(key, value)?,
            "eval-batches" => self.eval_batches = parse(key, value)?,
            "epochs" => self.epochs = parse(key, value)?,
            "optimizer" => self.optimizer = value.to_string(),
            "lr" => self.lr = parse(key, value)?,
            "decay" => self.decay = parse(key, value)?,
            "beta1" => self.beta1 = parse(key, value)?,
            "beta2" => self.beta2 = parse(key, value)?,
            "clip" => {
                self.clip = match value {
                    "none" | "off" | "0" => None,
                    v => Some(parse(key, v)?),
                }
            }
            "seed" => self.seed = parse(key, value)?,
            "memory-seed" => self.memory_seed = parse(key, value)?,
            "ucr-train" => self.ucr_train = opt_path(value),
            "ucr-test" => self.ucr_test = opt_path(value),
            "znormalize" => self.znormalize = parse_bool(key, value)?,
            "metrics" => self.metrics = PathBuf::from(value),
            "checkpoint" => self.checkpoint = opt_path(value),
            "resume" => self.resume = opt_path(value),
            "wallclock" => self.wallclock = parse_bool(key, value)?,
            other => return Err(Error::Config(format!("unknown key `{other}`"))),
        }
        Ok(())
    }

    pub fn get(&self, key: &str) -> Option<String> {
        Some(match key {
            "task" => self.task.to_string(),
            "model" => self.model.to_string(),
            "backend" => self.backend.to_string(),
            "mode" => self.mode.to_string(),
            "reset-cell" => self.reset_cell.to_string(),
            "readout" => self.readout.to_string(),
            "bias-init" => self.bias_init.to_string(),
            "seq-len" => self.seq_len.to_string(),
            "copy-n" => self.copy_n.to_string(),
            "copy-m" => self.copy_m.to_string(),
            "hidden" => self.hidden.to_string(),
            "batch" => self.batch.to_string(),
            "batches-per-epoch" => self.batches_per_epoch.to_string(),
            "eval-batches" => self.eval_batches.to_string(),
            "epochs" => self.epochs.to_string(),
            "optimizer" => self.optimizer.clone(),
            "lr" => self.lr.to_string(),
            "decay" => self.decay.to_string(),
            "beta1" => self.beta1.to_string(),
            "beta2" => self.beta2.to_string(),
            "clip" => self.clip.map_or("none".into(), |c| c.to_string()),
            "seed" => self.seed.to_string(),
            "memory-seed" => self.memory_seed.to_string(),
            "ucr-train" => show_path(&self.ucr_train),
            "ucr-test" => show_path(&self.ucr_test),
            "znormalize" => self.znormalize.to_string(),
            "metrics" => self.metrics.display().to_string(),
            "checkpoint" => show_path(&self.checkpoint),
            "resume" => show_path(&self.resume),
            "wallclock" => self.wallclock.to_string(),
            _ => return None,
        })
    }

    /// Parses `key = value` lines; `#` starts a comment.
    pub fn parse_text(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        cfg.apply_text(text)?;
        Ok(cfg)
    }

    /// Applies `key = value` lines on top of the current values.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key = value", i + 1)))?;
            self.set(key.trim(), value)
                .map_err(|e| Error::Config(format!("line {}: {e}", i + 1)))?;
        }
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::parse_text(&std::fs::read_to_string(path)?)
    }

    /// Every key in canonical order, one `key=value` per line.
    pub fn to_text(&self) -> String {
        Self::KEYS
            .iter()
            .map(|k| format!("{k}={}\n", self.get(k).expect("listed key")))
            .collect()
    }

    pub fn optimizer_kind(&self) -> Result<OptimizerKind> {
        match self.optimizer.as_str() {
            "rmsprop" => Ok(OptimizerKind::RmsProp { decay: self.decay }),
            "adam" => Ok(OptimizerKind::Adam {
                beta1: self.beta1,
                beta2: self.beta2,
            }),
            other => Err(Error::Config(format!(
                "optimizer `{other}` must be rmsprop or adam"
            ))),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let sizes = [
            ("seq-len", self.seq_len),
            ("copy-n", self.copy_n),
            ("hidden", self.hidden),
            ("batch", self.batch),
            ("batches-per-epoch", self.batches_per_epoch),
            ("eval-batches", self.eval_batches),
        ];
        if let Some((k, _)) = sizes.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Config(format!("`{k}` must be positive")));
        }
        if self.copy_m < 2 {
            return Err(Error::Config("`copy-m` must be at least 2".into()));
        }
        if self.task == TaskKind::Addition && self.seq_len < 2 {
            return Err(Error::Config("addition needs seq-len >= 2".into()));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Config("`lr` must be positive".into()));
        }
        for (k, v) in [("decay", self.decay), ("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&v) {
                return Err(Error::Config(format!("`{k}` must lie in [0, 1)")));
            }
        }
        if let Some(c) = self.clip {
            if !(c > 0.0 && c.is_finite()) {
                return Err(Error::Config("`clip` must be positive or none".into()));
            }
        }
        if self.model == ModelKind::Lz {
            self.backend
                .validate_dim(self.hidden)
                .map_err(|e| Error::Config(e.to_string()))?;
        }
        if self.task == TaskKind::Ucr && self.ucr_train.is_none() {
            return Err(Error::Config("task ucr needs `ucr-train`".into()));
        }
        self.optimizer_kind()?;
        Ok(())
    }

    /// The keys that fix model shape and data; resuming requires them to agree.
    pub const STRUCTURAL_KEYS: &'static [&'static str] = &[
        "task",
        "model",
        "backend",
        "mode",
        "reset-cell",
        "readout",
        "seq-len",
        "copy-n",
        "copy-m",
        "hidden",
        "batch",
        "batches-per-epoch",
        "optimizer",
        "seed",
        "memory-seed",
    ];
}
