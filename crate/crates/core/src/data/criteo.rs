use std::io::{BufRead, Write};

use super::{hash_feature, DataError, Dataset, Example, Schema, TaskKind, NUM_CATEGORICAL, NUM_DENSE};

/// label + 13 integer slots + 26 token slots.
pub const CRITEO_FIELDS: usize = 1 + NUM_DENSE + NUM_CATEGORICAL;

/// Hash key used for a missing categorical token.
pub const OOV_TOKEN: &str = "__oov__";

/// A Criteo line before preprocessing. `None` marks an empty field.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RawRecord {
    pub label: u32,
    pub integers: [Option<i64>; NUM_DENSE],
    pub tokens: [Option<String>; NUM_CATEGORICAL],
}

impl RawRecord {
    pub fn token(&self, feature: usize) -> &str {
        self.tokens[feature].as_deref().unwrap_or(OOV_TOKEN)
    }

    /// Serializes back to the 40-field TSV form (no trailing newline).
    pub fn to_line(&self) -> String {
        let mut fields = Vec::with_capacity(CRITEO_FIELDS);
        fields.push(self.label.to_string());
        fields.extend(
            self.integers
                .iter()
                .map(|v| v.map(|v| v.to_string()).unwrap_or_default()),
        );
        fields.extend(self.tokens.iter().map(|t| t.clone().unwrap_or_default()));
        fields.join("\t")
    }

    pub fn preprocess(&self, schema: &Schema) -> Example {
        Example {
            dense: self.integers.iter().map(|&v| log_transform(v)).collect(),
            categorical: schema
                .bucket_counts
                .iter()
                .enumerate()
                .map(|(f, &b)| hash_feature(f, self.token(f), b))
                .collect(),
            label: self.label,
        }
    }
}

/// `ln(1 + v)`; missing or negative values map to 0.
pub fn log_transform(v: Option<i64>) -> f64 {
    match v {
        Some(v) if v > 0 => (v as f64).ln_1p(),
        _ => 0.0,
    }
}

/// Parses one tab-separated Criteo line. `line_no` is only used in errors.
pub fn parse_criteo_line(line: &str, line_no: usize) -> Result<RawRecord, DataError> {
    let line = line.strip_suffix('\n').unwrap_or(line);
    let line = line.strip_suffix('\r').unwrap_or(line);
    let fields: Vec<&str> = line.split('\t').collect();
    let malformed = |reason: String| DataError::Malformed {
        line: line_no,
        reason,
    };
    if fields.len() != CRITEO_FIELDS {
        return Err(malformed(format!(
            "{} fields, expected {CRITEO_FIELDS}",
            fields.len()
        )));
    }
    let label = fields[0]
        .parse::<u32>()
        .map_err(|_| malformed(format!("label {:?} is not a non-negative integer", fields[0])))?;
    let mut integers = [None; NUM_DENSE];
    for (i, slot) in integers.iter_mut().enumerate() {
        let raw = fields[1 + i];
        if !raw.is_empty() {
            *slot = Some(
                raw.parse::<i64>()
                    .map_err(|_| malformed(format!("I{} {raw:?} is not an integer", i + 1)))?,
            );
        }
    }
    let tokens = std::array::from_fn(|i| {
        let raw = fields[1 + NUM_DENSE + i];
        (!raw.is_empty()).then(|| raw.to_string())
    });
    Ok(RawRecord {
        label,
        integers,
        tokens,
    })
}

#[derive(Debug, Clone)]
pub struct CriteoReadOptions {
    pub task: TaskKind,
    pub buckets: Vec<u32>,
    /// Keep every `stride`-th line (1 keeps all). Order is preserved.
    pub stride: usize,
    pub max_rows: Option<usize>,
}

impl CriteoReadOptions {
    pub fn binary(buckets: u32) -> Self {
        Self {
            task: TaskKind::Binary,
            buckets: vec![buckets; NUM_CATEGORICAL],
            stride: 1,
            max_rows: None,
        }
    }
}

pub fn read_criteo<R: BufRead>(reader: R, opts: &CriteoReadOptions) -> Result<Dataset, DataError> {
    let schema = Schema {
        num_dense: NUM_DENSE,
        bucket_counts: opts.buckets.clone(),
    };
    if schema.bucket_counts.len() != NUM_CATEGORICAL {
        return Err(DataError::InvalidConfig(format!(
            "{} bucket counts, expected {NUM_CATEGORICAL}",
            schema.bucket_counts.len()
        )));
    }
    let stride = opts.stride.max(1);
    let mut examples = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        if opts.max_rows.is_some_and(|m| examples.len() >= m) {
            break;
        }
        let line = line?;
        if i % stride != 0 || line.is_empty() {
            continue;
        }
        examples.push(parse_criteo_line(&line, i + 1)?.preprocess(&schema));
    }
    Dataset::new(examples, schema, opts.task)
}

/// Writes a dataset in Criteo TSV shape: dense values are mapped back to the
/// integers they were transformed from, categorical ids are written as 8-digit hex.
pub fn write_tsv<W: Write>(ds: &Dataset, mut out: W) -> Result<(), DataError> {
    let mut line = String::new();
    for ex in ds.examples() {
        line.clear();
        line.push_str(&ex.label.to_string());
        for d in &ex.dense {
            line.push('\t');
            line.push_str(&(d.exp_m1().round() as i64).to_string());
        }
        for id in &ex.categorical {
            line.push('\t');
            line.push_str(&format!("{id:08x}"));
        }
        line.push('\n');
        out.write_all(line.as_bytes())?;
    }
    Ok(())
}
