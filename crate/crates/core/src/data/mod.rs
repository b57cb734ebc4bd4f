//! Datasets, Criteo ingestion, the synthetic stand-in generator and batch samplers.

mod criteo;
mod hashing;
mod sampling;
mod synth;

pub use criteo::{
    log_transform, parse_criteo_line, read_criteo, write_tsv, CriteoReadOptions, RawRecord,
    CRITEO_FIELDS, OOV_TOKEN,
};
pub use hashing::{fnv1a64, hash_feature};
pub use sampling::{poisson_sample, ShuffleBatcher};
pub use synth::{synth_generate, SynthConfig, SynthLabel};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const NUM_DENSE: usize = 13;
pub const NUM_CATEGORICAL: usize = 26;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("malformed record at line {line}: {reason}")]
    Malformed { line: usize, reason: String },
    #[error("dataset of {0} examples is too small to split (need at least 10)")]
    SplitTooSmall(usize),
    #[error("dataset is empty")]
    Empty,
    #[error("example {index} violates the schema: {reason}")]
    Schema { index: usize, reason: String },
    #[error("generator calibration failed: {0}")]
    Calibration(String),
    #[error("invalid generator config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TaskKind {
    /// Click / conversion labels in {0, 1}.
    Binary,
    /// Non-negative event counts.
    Count,
}

/// One preprocessed record: log-transformed dense values, bucketed categorical ids, label.
#[derive(Debug, Clone, PartialEq)]
pub struct Example {
    pub dense: Vec<f64>,
    pub categorical: Vec<u32>,
    pub label: u32,
}

/// Feature layout shared by every example of a dataset.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Schema {
    pub num_dense: usize,
    pub bucket_counts: Vec<u32>,
}

impl Schema {
    pub fn criteo(buckets: u32) -> Self {
        Self {
            num_dense: NUM_DENSE,
            bucket_counts: vec![buckets; NUM_CATEGORICAL],
        }
    }

    fn check(&self, index: usize, ex: &Example, task: TaskKind) -> Result<(), DataError> {
        let fail = |reason: String| DataError::Schema { index, reason };
        if ex.dense.len() != self.num_dense {
            return Err(fail(format!(
                "{} dense values, expected {}",
                ex.dense.len(),
                self.num_dense
            )));
        }
        if ex.categorical.len() != self.bucket_counts.len() {
            return Err(fail(format!(
                "{} categorical ids, expected {}",
                ex.categorical.len(),
                self.bucket_counts.len()
            )));
        }
        for (f, (&id, &v)) in ex.categorical.iter().zip(&self.bucket_counts).enumerate() {
            if id >= v {
                return Err(fail(format!("feature {f}: id {id} >= bucket count {v}")));
            }
        }
        if let Some(d) = ex.dense.iter().find(|d| !d.is_finite()) {
            return Err(fail(format!("non-finite dense value {d}")));
        }
        if task == TaskKind::Binary && ex.label > 1 {
            return Err(fail(format!("binary task with label {}", ex.label)));
        }
        Ok(())
    }
}

/// An ordered, validated, immutable collection of examples.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    examples: Vec<Example>,
    schema: Schema,
    task: TaskKind,
}

impl Dataset {
    pub fn new(examples: Vec<Example>, schema: Schema, task: TaskKind) -> Result<Self, DataError> {
        if examples.is_empty() {
            return Err(DataError::Empty);
        }
        for (i, ex) in examples.iter().enumerate() {
            schema.check(i, ex, task)?;
        }
        Ok(Self {
            examples,
            schema,
            task,
        })
    }

    pub fn examples(&self) -> &[Example] {
        &self.examples
    }

    pub fn schema(&self) -> &Schema {
        &self.schema
    }

    pub fn task(&self) -> TaskKind {
        self.task
    }

    /// N, also the default δ denominator.
    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    pub fn labels(&self) -> impl Iterator<Item = u32> + '_ {
        self.examples.iter().map(|e| e.label)
    }

    /// Same features, replaced labels. Used by label randomization.
    pub fn with_labels(&self, labels: Vec<u32>) -> Result<Self, DataError> {
        if labels.len() != self.len() {
            return Err(DataError::Schema {
                index: labels.len().min(self.len()),
                reason: format!("{} labels for {} examples", labels.len(), self.len()),
            });
        }
        let examples = self
            .examples
            .iter()
            .zip(labels)
            .map(|(e, label)| Example {
                label,
                ..e.clone()
            })
            .collect();
        Self::new(examples, self.schema.clone(), self.task)
    }

    fn slice(&self, range: std::ops::Range<usize>) -> Result<Self, DataError> {
        Self::new(
            self.examples[range].to_vec(),
            self.schema.clone(),
            self.task,
        )
    }
}

/// First 80% (floor) to train, next 10% (floor) to validation, remainder to test.
pub fn split_chronological(ds: &Dataset) -> Result<(Dataset, Dataset, Dataset), DataError> {
    let n = ds.len();
    if n < 10 {
        return Err(DataError::SplitTooSmall(n));
    }
    let n_train = n * 8 / 10;
    let n_valid = n / 10;
    Ok((
        ds.slice(0..n_train)?,
        ds.slice(n_train..n_train + n_valid)?,
        ds.slice(n_train + n_valid..n)?,
    ))
}

/// `int[2 V^0.25]`, at least 1.
pub fn embedding_dim(vocab: u32) -> usize {
    // sqrt(sqrt(.)) is exact on perfect fourth powers where powf(0.25) may not be.
    let d = (2.0 * (vocab.max(1) as f64).sqrt().sqrt()).trunc() as usize;
    d.max(1)
}

/// JSON sidecar describing a dataset file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetManifest {
    pub path: String,
    pub task: TaskKind,
    pub bucket_counts: Vec<u32>,
    pub n: usize,
}

impl DatasetManifest {
    pub fn describe(path: impl Into<String>, ds: &Dataset) -> Self {
        Self {
            path: path.into(),
            task: ds.task(),
            bucket_counts: ds.schema().bucket_counts.clone(),
            n: ds.len(),
        }
    }
}
