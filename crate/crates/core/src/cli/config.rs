//! Run configuration: strict JSON, unknown keys rejected, errors carry field paths.

use std::fs::File;
use std::io::BufReader;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::accountant::AccountingMethod;
use crate::data::{
    read_criteo, split_chronological, synth_generate, CriteoReadOptions, DataError, Dataset,
    SynthConfig, TaskKind, NUM_CATEGORICAL,
};
use crate::dpsgd::{ClipMethod, Horizon, NoiseLevel, OptimizerSpec, Privacy, TrainConfig};
use crate::model::{ModelArch, DEFAULT_HIDDEN};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{path}: {message}")]
    Parse { path: String, message: String },
    #[error("{field}: {message}")]
    Invalid { field: String, message: String },
    #[error("conflicting settings: {0}")]
    Conflict(String),
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
}

fn invalid(field: &str, message: impl Into<String>) -> ConfigError {
    ConfigError::Invalid {
        field: field.into(),
        message: message.into(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case", deny_unknown_fields)]
pub enum DataSource {
    Criteo {
        path: PathBuf,
        #[serde(default = "binary_task")]
        task: TaskKind,
        /// Hash buckets per categorical feature.
        #[serde(default = "default_buckets")]
        buckets: u32,
        /// Keep every `stride`-th line; 100 gives the 1% subsample.
        #[serde(default = "one")]
        stride: usize,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        max_rows: Option<usize>,
    },
    Synth(SynthConfig),
}

fn binary_task() -> TaskKind {
    TaskKind::Binary
}

fn default_buckets() -> u32 {
    1 << 20
}

fn one() -> usize {
    1
}

impl DataSource {
    /// Loads and splits chronologically into train / validation / test.
    pub fn load(&self) -> Result<(Dataset, Dataset, Dataset), DataError> {
        let ds = match self {
            DataSource::Criteo {
                path,
                task,
                buckets,
                stride,
                max_rows,
            } => {
                let file = File::open(path)?;
                let opts = CriteoReadOptions {
                    task: *task,
                    buckets: vec![*buckets; NUM_CATEGORICAL],
                    stride: *stride,
                    max_rows: *max_rows,
                };
                read_criteo(BufReader::new(file), &opts)?
            }
            DataSource::Synth(cfg) => synth_generate(cfg)?,
        };
        split_chronological(&ds)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    #[serde(default = "default_hidden")]
    pub hidden: Vec<usize>,
}

impl Default for ModelSection {
    fn default() -> Self {
        Self {
            hidden: default_hidden(),
        }
    }
}

fn default_hidden() -> Vec<usize> {
    DEFAULT_HIDDEN.to_vec()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DpSection {
    pub clip_norm: f64,
    /// Exactly one of `noise_multiplier` and `target_epsilon`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub noise_multiplier: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target_epsilon: Option<f64>,
    #[serde(default = "one")]
    pub microbatch: usize,
    /// Defaults to 1/N.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub delta: Option<f64>,
    #[serde(default = "default_accounting")]
    pub accounting: AccountingMethod,
    #[serde(default = "default_clip_method")]
    pub clip_method: ClipMethod,
}

fn default_accounting() -> AccountingMethod {
    AccountingMethod::Pld
}

fn default_clip_method() -> ClipMethod {
    ClipMethod::Ghost
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LabelDpSection {
    pub epsilon: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub data: DataSource,
    #[serde(default)]
    pub model: ModelSection,
    pub private: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dp: Option<DpSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label_dp: Option<LabelDpSection>,
    pub optimizer: OptimizerSpec,
    pub batch_size: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub epochs: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub steps: Option<u64>,
    #[serde(default)]
    pub cosine_decay: bool,
    #[serde(default = "default_eval_every")]
    pub eval_every: u64,
    pub seeds: Vec<u64>,
    pub output_dir: PathBuf,
}

fn default_eval_every() -> u64 {
    100
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self, ConfigError> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let cfg: Self = serde_path_to_error::deserialize(de).map_err(|e| ConfigError::Parse {
            path: e.path().to_string(),
            message: e.inner().to_string(),
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_path(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.seeds.is_empty() {
            return Err(invalid("seeds", "at least one seed is required"));
        }
        if self.batch_size == 0 {
            return Err(invalid("batch_size", "must be at least 1"));
        }
        if self.eval_every == 0 {
            return Err(invalid("eval_every", "must be at least 1"));
        }
        match (self.epochs, self.steps) {
            (Some(_), Some(_)) => return Err(ConfigError::Conflict("give either epochs or steps, not both".into())),
            (None, None) => return Err(invalid("epochs", "one of epochs or steps is required")),
            (Some(e), None) if !(e > 0.0 && e.is_finite()) => {
                return Err(invalid("epochs", format!("{e} must be positive")))
            }
            _ => {}
        }
        if !(self.optimizer.lr > 0.0 && self.optimizer.lr.is_finite()) {
            return Err(invalid("optimizer.lr", "must be positive"));
        }
        if self.model.hidden.contains(&0) {
            return Err(invalid("model.hidden", "layer widths must be positive"));
        }
        if !self.private {
            if self.dp.is_some() || self.label_dp.is_some() {
                return Err(ConfigError::Conflict(
                    "private is false but DP fields are set".into(),
                ));
            }
            return Ok(());
        }
        match (&self.dp, &self.label_dp) {
            (None, None) => Err(invalid("dp", "private is true: set dp or label_dp")),
            (Some(_), Some(_)) => Err(ConfigError::Conflict("both dp and label_dp are set".into())),
            (Some(dp), None) => {
                if !(dp.clip_norm > 0.0) {
                    return Err(invalid("dp.clip_norm", "must be positive"));
                }
                if dp.microbatch == 0 || dp.microbatch > self.batch_size {
                    return Err(invalid("dp.microbatch", "must be in [1, batch_size]"));
                }
                match (dp.noise_multiplier, dp.target_epsilon) {
                    (Some(_), Some(_)) => Err(ConfigError::Conflict(
                        "give either dp.noise_multiplier or dp.target_epsilon".into(),
                    )),
                    (None, None) => Err(invalid("dp.noise_multiplier", "or dp.target_epsilon is required")),
                    (Some(s), None) if !(s >= 0.0 && s.is_finite()) => {
                        Err(invalid("dp.noise_multiplier", "must be finite and >= 0"))
                    }
                    (None, Some(e)) if !(e > 0.0 && e.is_finite()) => {
                        Err(invalid("dp.target_epsilon", "must be positive"))
                    }
                    _ => Ok(()),
                }
            }
            (None, Some(l)) if !(l.epsilon > 0.0) => Err(invalid("label_dp.epsilon", "must be positive")),
            (None, Some(_)) => {
                if self.data_task() != Some(TaskKind::Binary) {
                    return Err(invalid("label_dp", "randomized response needs a binary task"));
                }
                Ok(())
            }
        }
    }

    fn data_task(&self) -> Option<TaskKind> {
        match &self.data {
            DataSource::Criteo { task, .. } => Some(*task),
            DataSource::Synth(s) => Some(s.task()),
        }
    }

    pub fn horizon(&self) -> Horizon {
        match (self.epochs, self.steps) {
            (_, Some(t)) => Horizon::Steps(t),
            (Some(e), None) => Horizon::Epochs(e),
            (None, None) => unreachable!("validated"),
        }
    }

    pub fn privacy(&self) -> Privacy {
        if let Some(dp) = &self.dp {
            Privacy::DpSgd {
                clip_norm: dp.clip_norm,
                noise: match (dp.noise_multiplier, dp.target_epsilon) {
                    (Some(s), _) => NoiseLevel::Multiplier(s),
                    (None, Some(e)) => NoiseLevel::TargetEpsilon(e),
                    (None, None) => unreachable!("validated"),
                },
                microbatch: dp.microbatch,
                delta: dp.delta,
                accounting: dp.accounting,
                method: dp.clip_method,
            }
        } else if let Some(l) = &self.label_dp {
            Privacy::LabelDp { epsilon: l.epsilon }
        } else {
            Privacy::NonPrivate
        }
    }

    pub fn train_config(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            privacy: self.privacy(),
            optimizer: self.optimizer,
            batch_size: self.batch_size,
            horizon: self.horizon(),
            cosine_decay: self.cosine_decay,
            eval_every: self.eval_every,
            seed,
        }
    }

    pub fn arch(&self, ds: &Dataset) -> ModelArch {
        ModelArch::for_schema(ds.schema(), self.model.hidden.clone())
    }
}
