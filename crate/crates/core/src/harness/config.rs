//! Experiment configuration, read from and written to TOML.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::model::ModelSpec;
use crate::optim::AmaConfig;
use crate::schedule::{ScheduleConfig, ScheduleKind};
use crate::stream::StreamSpec;
use crate::theory::TheoryConfig;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BaseKind {
    Sgd,
    Adam,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "kebab-case")]
pub enum Averaging {
    None,
    Ema {
        gamma: f64,
        #[serde(default = "default_k_m")]
        k_m: u64,
    },
    Ama {
        #[serde(default = "default_gamma0")]
        gamma0: f64,
        #[serde(default = "default_delta")]
        delta: f64,
        #[serde(default = "default_k_m")]
        k_m: u64,
        /// `None` disables weight adaptation.
        k_w: Option<u64>,
    },
}

fn default_k_m() -> u64 {
    10
}

fn default_gamma0() -> f64 {
    0.99
}

fn default_delta() -> f64 {
    5.0
}

fn default_momentum() -> f64 {
    0.9
}

fn default_beta1() -> f64 {
    0.9
}

fn default_beta2() -> f64 {
    0.999
}

fn default_eps() -> f64 {
    1e-8
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizerConfig {
    pub base: BaseKind,
    /// Heavy-ball momentum for SGD.
    #[serde(default = "default_momentum")]
    pub momentum: f64,
    #[serde(default = "default_beta1")]
    pub beta1: f64,
    #[serde(default = "default_beta2")]
    pub beta2: f64,
    #[serde(default = "default_eps")]
    pub eps: f64,
    pub averaging: Averaging,
}

impl OptimizerConfig {
    /// Short label such as `sgd+ama`.
    pub fn label(&self) -> String {
        let base = match self.base {
            BaseKind::Sgd => "sgd",
            BaseKind::Adam => "adam",
        };
        match self.averaging {
            Averaging::None => base.to_string(),
            Averaging::Ema { .. } => format!("{base}+ema"),
            Averaging::Ama { .. } => format!("{base}+ama"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ReplayMode {
    /// Uniform over the whole pool.
    Pure,
    /// Half current step, half the history window.
    Mixed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplayConfig {
    pub mode: ReplayMode,
    /// History window `B_t` in steps for mixed replay; `None` means all past
    /// steps.
    #[serde(default)]
    pub window: Option<u64>,
}

fn default_holdout() -> f64 {
    0.05
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationConfig {
    /// `K_V`: iterations between online-validation events.
    pub interval: u64,
    /// Minibatch size drawn from the holdout at each event.
    pub batch_size: usize,
    /// Iterations between resets of the running validation means when no
    /// adaptive average sets the cadence.
    pub reset_interval: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalConfig {
    /// Steps between metric rows.
    pub interval: u64,
    /// Forward-transfer window; defaults to 10% and 25% of the horizon.
    #[serde(default)]
    pub k1: Option<u64>,
    #[serde(default)]
    pub k2: Option<u64>,
    /// Skip forward transfer (it regenerates future batches).
    #[serde(default)]
    pub skip_forward_transfer: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub name: String,
    pub seeds: Vec<u64>,
    pub output_dir: PathBuf,
    /// `p`: optimizer iterations per step.
    pub iterations_per_step: u64,
    /// `m`: replay minibatch size.
    pub minibatch: usize,
    /// Training pool capacity; `None` keeps everything.
    #[serde(default)]
    pub capacity: Option<usize>,
    #[serde(default = "default_holdout")]
    pub holdout_fraction: f64,
    pub stream: StreamSpec,
    pub model: ModelSpec,
    pub optimizer: OptimizerConfig,
    pub schedule: ScheduleConfig,
    pub replay: ReplayConfig,
    pub validation: ValidationConfig,
    pub eval: EvalConfig,
    /// Bound-verification runs for `verify-bounds`.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub theory: Vec<TheoryConfig>,
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        self.stream.validate()?;
        self.model.validate()?;
        self.schedule.validate()?;
        if self.seeds.is_empty() {
            return Err(Error::config("at least one seed is required"));
        }
        if self.minibatch == 0 {
            return Err(Error::config("minibatch size m must be >= 1"));
        }
        if self.replay.mode == ReplayMode::Mixed && !self.minibatch.is_multiple_of(2) {
            return Err(Error::OddBatch(self.minibatch));
        }
        if !(0.0..1.0).contains(&self.holdout_fraction) {
            return Err(Error::config("holdout fraction must lie in [0, 1)"));
        }
        if self.capacity == Some(0) {
            return Err(Error::config("pool capacity must be >= 1"));
        }
        if self.validation.interval == 0 || self.validation.batch_size == 0 || self.validation.reset_interval == 0 {
            return Err(Error::config("validation interval, batch size and reset interval must be >= 1"));
        }
        if self.eval.interval == 0 {
            return Err(Error::config("eval interval must be >= 1"));
        }
        if self.model.input_dim() != self.stream.input_dim() {
            return Err(Error::DimensionMismatch {
                expected: self.stream.input_dim(),
                found: self.model.input_dim(),
            });
        }
        if self.model.n_classes() != self.stream.n_classes() {
            return Err(Error::config("model and stream disagree on the number of classes"));
        }
        if let Some(ama) = self.ama_config() {
            ama.validate()?;
        }
        if let Averaging::Ema { gamma, k_m } = self.optimizer.averaging {
            if !(0.0..=1.0).contains(&gamma) {
                return Err(Error::InvalidWeight(gamma));
            }
            if k_m == 0 {
                return Err(Error::config("EMA interval must be >= 1"));
            }
        }
        if self.schedule.kind.needs_sigma() && self.optimizer.averaging == Averaging::None {
            return Err(Error::config("MALR needs a moving-average model"));
        }
        if let ScheduleKind::Cyclic { task_length: None } = self.schedule.kind {
            if self.stream.task_length().is_none() {
                return Err(Error::config("cyclic schedule needs a stream with task boundaries"));
            }
        }
        let (k1, k2) = self.forward_window();
        if !(k2 > k1 && k1 >= 1) {
            return Err(Error::config(format!("forward-transfer window needs k2 > k1 >= 1, got ({k1}, {k2})")));
        }
        for t in &self.theory {
            t.validate()?;
        }
        Ok(())
    }

    pub fn forward_window(&self) -> (u64, u64) {
        let (d1, d2) = crate::metrics::default_window(self.stream.horizon);
        (self.eval.k1.unwrap_or(d1), self.eval.k2.unwrap_or(d2))
    }

    /// The adaptive-average parameters, with `K_V` from the validation
    /// section.
    pub fn ama_config(&self) -> Option<AmaConfig> {
        match self.optimizer.averaging {
            Averaging::Ama { gamma0, delta, k_m, k_w } => Some(AmaConfig {
                gamma0,
                delta,
                k_m,
                k_v: self.validation.interval,
                k_w,
            }),
            _ => None,
        }
    }

    /// Schedule with a cyclic task length filled in from the stream
    /// (task length in steps times iterations per step).
    pub fn resolved_schedule(&self) -> ScheduleConfig {
        let mut s = self.schedule.clone();
        if let ScheduleKind::Cyclic { task_length: None } = s.kind {
            s.kind = ScheduleKind::Cyclic {
                task_length: self
                    .stream
                    .task_length()
                    .map(|l| l * self.iterations_per_step.max(1)),
            };
        }
        s
    }

    /// Label such as `sgd+ama+malr`.
    pub fn label(&self) -> String {
        let sched = match self.schedule.kind {
            ScheduleKind::Constant => "const",
            ScheduleKind::Rwp => "rwp",
            ScheduleKind::Malr { .. } => "malr",
            ScheduleKind::Cyclic { .. } => "cyclic",
            ScheduleKind::Trace { .. } => "trace",
        };
        format!("{}+{sched}", self.optimizer.label())
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Format(e.to_string()))
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_toml(&text)
    }

    /// Sets a dotted key such as `schedule.lr` or `stream.horizon`. The value
    /// is parsed as a TOML value, falling back to a plain string.
    pub fn with_override(&self, key: &str, value: &str) -> Result<Self> {
        let mut root = toml::Value::try_from(self).map_err(|e| Error::Format(e.to_string()))?;
        let parsed = parse_value(value);
        let mut node = &mut root;
        let parts: Vec<&str> = key.split('.').collect();
        for (i, part) in parts.iter().enumerate() {
            let last = i + 1 == parts.len();
            node = match node {
                toml::Value::Table(table) => {
                    if last {
                        table.insert(part.to_string(), parsed);
                        break;
                    }
                    table
                        .get_mut(*part)
                        .ok_or_else(|| Error::config(format!("unknown config key `{key}`")))?
                }
                toml::Value::Array(items) => {
                    let idx: usize = part
                        .parse()
                        .map_err(|_| Error::config(format!("`{part}` in `{key}` is not an index")))?;
                    let len = items.len();
                    let slot = items
                        .get_mut(idx)
                        .ok_or_else(|| Error::config(format!("index {idx} out of range (len {len})")))?;
                    if last {
                        *slot = parsed;
                        break;
                    }
                    slot
                }
                _ => return Err(Error::config(format!("`{key}` does not name a table entry"))),
            };
        }
        let text = toml::to_string(&root).map_err(|e| Error::Format(e.to_string()))?;
        let cfg = Self::from_toml(&text)?;
        cfg.validate()?;
        Ok(cfg)
    }
}

fn parse_value(value: &str) -> toml::Value {
    let doc = format!("v = {value}");
    match doc.parse::<toml::Table>() {
        Ok(mut t) => t.remove("v").unwrap_or_else(|| toml::Value::String(value.into())),
        Err(_) => toml::Value::String(value.to_string()),
    }
}
