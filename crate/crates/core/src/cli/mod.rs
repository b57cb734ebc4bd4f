//! Command-line entry points. Exit codes: 0 success, 2 configuration error,
//! 3 runtime error.

pub mod bench;
pub mod config;

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::accountant::{
    self, calibrate_sigma, compare_methods, sweep_batch_noise, write_sweep_csv, AccountResult,
    AccountantError, AccountingMethod, MechanismSpec, SweepMode,
};
use crate::data::{synth_generate, write_tsv, DataError, DatasetManifest, SynthConfig};
use crate::dpsgd::{train, DpError, SplitData, TrainReport};
use bench::{run_bench, write_bench_csv, BenchImpl, BenchSpec};
use config::{ConfigError, RunConfig};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Runtime(_) => 3,
        }
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        CliError::Config(e.to_string())
    }
}

impl From<AccountantError> for CliError {
    fn from(e: AccountantError) -> Self {
        match e {
            AccountantError::InvalidInput(m) => CliError::Config(m),
            other => CliError::Runtime(other.to_string()),
        }
    }
}

impl From<DpError> for CliError {
    fn from(e: DpError) -> Self {
        match e {
            DpError::InvalidConfig(m) => CliError::Config(m),
            other => CliError::Runtime(other.to_string()),
        }
    }
}

impl From<DataError> for CliError {
    fn from(e: DataError) -> Self {
        match e {
            DataError::InvalidConfig(m) => CliError::Config(m),
            other => CliError::Runtime(other.to_string()),
        }
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |e| CliError::Runtime(format!("{}: {e}", path.display()))
}

#[derive(Debug, Parser)]
#[command(name = "dpads", version, about = "DP-SGD training and privacy accounting for ad-prediction models")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train one model per seed and write JSONL logs plus a summary CSV.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Overrides `output_dir` from the config.
        #[arg(long)]
        output_dir: Option<PathBuf>,
    },
    /// Epsilon of a subsampled Gaussian mechanism composed over `steps`.
    Account(AccountArgs),
    /// Smallest noise multiplier meeting a target epsilon.
    Calibrate(CalibrateArgs),
    /// Batch-size/noise tables and accountant comparisons.
    Sweep {
        #[command(subcommand)]
        kind: SweepKind,
    },
    /// Steps/sec and memory for baseline, naive and ghost implementations.
    Bench(BenchArgs),
    /// Generate a synthetic dataset as Criteo-shaped TSV.
    Synth {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Debug, Args)]
pub struct AccountArgs {
    #[arg(long)]
    pub q: f64,
    #[arg(long)]
    pub sigma: f64,
    #[arg(long)]
    pub steps: u64,
    #[arg(long)]
    pub delta: f64,
    #[arg(long, default_value = "pld")]
    pub method: AccountingMethod,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct CalibrateArgs {
    #[arg(long)]
    pub epsilon: f64,
    #[arg(long)]
    pub delta: f64,
    #[arg(long)]
    pub q: f64,
    #[arg(long)]
    pub steps: u64,
    #[arg(long, default_value = "pld")]
    pub method: AccountingMethod,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum SweepKind {
    /// Calibrated sigma and effective noise std sigma/B per batch size.
    BatchNoise {
        #[arg(long)]
        n: u64,
        #[arg(long)]
        epsilon: f64,
        #[arg(long)]
        delta: f64,
        #[arg(long, conflicts_with = "steps", required_unless_present = "steps")]
        epochs: Option<f64>,
        #[arg(long)]
        steps: Option<u64>,
        #[arg(long, value_delimiter = ',', required = true)]
        batch_sizes: Vec<u64>,
        #[arg(long, default_value = "pld")]
        method: AccountingMethod,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Calibrated sigma under PLD and RDP for a list of target epsilons.
    Methods {
        #[arg(long, value_delimiter = ',', required = true)]
        epsilons: Vec<f64>,
        #[arg(long)]
        delta: f64,
        #[arg(long)]
        q: f64,
        #[arg(long)]
        steps: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    #[arg(long, value_delimiter = ',', default_value = "baseline,naive,ghost")]
    pub impls: Vec<BenchImpl>,
    #[arg(long, value_delimiter = ',', default_value = "32,256,4096")]
    pub batch_sizes: Vec<usize>,
    #[arg(long, default_value_t = 26)]
    pub features: usize,
    #[arg(long, default_value_t = 2000)]
    pub buckets: u32,
    #[arg(long, value_delimiter = ',', default_value = "256,256")]
    pub hidden: Vec<usize>,
    #[arg(long, default_value_t = 2)]
    pub warmup: usize,
    #[arg(long, default_value_t = 3)]
    pub steps_per_window: usize,
    #[arg(long, default_value_t = 5)]
    pub windows: usize,
    #[arg(long, default_value_t = 1024)]
    pub memory_cap_mb: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Parses arguments, runs the command and maps failures to exit codes.
pub fn main_with_args<I, T>(args: I) -> ExitCode
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

pub fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Train { config, output_dir } => {
            let mut cfg = RunConfig::from_path(&config)?;
            if let Some(dir) = output_dir {
                cfg.output_dir = dir;
            }
            cmd_train(&cfg).map(|_| ())
        }
        Command::Account(a) => {
            let r = cmd_account(&a)?;
            emit(a.out.as_deref(), &to_json(&r))
        }
        Command::Calibrate(a) => {
            let r = cmd_calibrate(&a)?;
            emit(a.out.as_deref(), &to_json(&r))
        }
        Command::Sweep { kind } => cmd_sweep(&kind),
        Command::Bench(a) => cmd_bench(&a),
        Command::Synth { config, out } => cmd_synth(&config, &out),
    }
}

fn to_json<T: Serialize>(v: &T) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("serializable output");
    s.push('\n');
    s
}

fn emit(out: Option<&Path>, text: &str) -> Result<(), CliError> {
    match out {
        Some(p) => fs::write(p, text).map_err(io_err(p)),
        None => std::io::stdout()
            .write_all(text.as_bytes())
            .map_err(|e| CliError::Runtime(e.to_string())),
    }
}

/// Mean and sample standard deviation of one test metric across seeds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub split: String,
    pub metric: String,
    pub mean: f64,
    pub std: f64,
    pub num_seeds: usize,
    pub epsilon: Option<f64>,
}

pub fn summarize(reports: &[TrainReport]) -> Vec<SummaryRow> {
    let tests: Vec<_> = reports.iter().filter_map(|r| r.test()).collect();
    if tests.is_empty() {
        return Vec::new();
    }
    let metric_name = if tests[0].auc.is_some() { "auc" } else { "pll" };
    let epsilon = tests.iter().filter_map(|t| t.epsilon).reduce(f64::max);
    let row = |metric: &str, values: Vec<f64>| {
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let std = if values.len() > 1 {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        } else {
            0.0
        };
        SummaryRow {
            split: "test".into(),
            metric: metric.into(),
            mean,
            std,
            num_seeds: values.len(),
            epsilon,
        }
    };
    vec![
        row(metric_name, tests.iter().map(|t| t.metric()).collect()),
        row("loss", tests.iter().map(|t| t.loss).collect()),
    ]
}

pub fn write_summary_csv<W: Write>(rows: &[SummaryRow], out: W) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["split", "metric", "mean", "std", "num_seeds", "epsilon"])?;
    for r in rows {
        w.write_record([
            r.split.clone(),
            r.metric.clone(),
            format!("{:.9}", r.mean),
            format!("{:.9}", r.std),
            r.num_seeds.to_string(),
            r.epsilon.map(|e| format!("{e:.9}")).unwrap_or_default(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Trains once per seed. Writes `config.json`, `seed-<s>.jsonl` and `summary.csv`
/// into the output directory.
pub fn cmd_train(cfg: &RunConfig) -> Result<Vec<TrainReport>, CliError> {
    let (train_set, valid, test) = cfg.data.load()?;
    let arch = cfg.arch(&train_set);
    arch.validate().map_err(|e| CliError::Config(e.to_string()))?;
    let dir = &cfg.output_dir;
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let cfg_path = dir.join("config.json");
    fs::write(&cfg_path, cfg.to_json()).map_err(io_err(&cfg_path))?;

    let data = SplitData {
        train: &train_set,
        valid: &valid,
        test: &test,
    };
    let mut reports = Vec::with_capacity(cfg.seeds.len());
    for &seed in &cfg.seeds {
        let out = train(&data, &arch, &cfg.train_config(seed))?;
        let path = dir.join(format!("seed-{seed}.jsonl"));
        let text = out
            .report
            .to_jsonl()
            .map_err(|e| CliError::Runtime(e.to_string()))?;
        fs::write(&path, text).map_err(io_err(&path))?;
        reports.push(out.report);
    }
    let path = dir.join("summary.csv");
    let file = fs::File::create(&path).map_err(io_err(&path))?;
    write_summary_csv(&summarize(&reports), file).map_err(|e| CliError::Runtime(e.to_string()))?;
    Ok(reports)
}

pub fn cmd_account(a: &AccountArgs) -> Result<AccountResult, CliError> {
    let spec = MechanismSpec {
        q: a.q,
        sigma: a.sigma,
        steps: a.steps,
    };
    let (epsilon, direction) = match a.method {
        AccountingMethod::Pld => {
            let r = accountant::pld_epsilon(&spec, a.delta, accountant::DEFAULT_VALUE_STEP)?;
            let dir = if r.remove >= r.add { "remove" } else { "add" };
            (r.epsilon, dir)
        }
        AccountingMethod::Rdp => (accountant::rdp_epsilon_for(&spec, a.delta)?, "add_remove"),
    };
    Ok(AccountResult {
        epsilon: epsilon.is_finite().then_some(epsilon),
        delta: a.delta,
        sigma: a.sigma,
        q: a.q,
        steps: a.steps,
        method: a.method,
        direction: direction.into(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrateResult {
    pub sigma: f64,
    pub target_epsilon: f64,
    pub achieved_epsilon: f64,
    pub delta: f64,
    pub q: f64,
    pub steps: u64,
    pub method: AccountingMethod,
}

pub fn cmd_calibrate(a: &CalibrateArgs) -> Result<CalibrateResult, CliError> {
    let sigma = calibrate_sigma(a.epsilon, a.delta, a.q, a.steps, a.method)?;
    let spec = MechanismSpec {
        q: a.q,
        sigma,
        steps: a.steps,
    };
    Ok(CalibrateResult {
        sigma,
        target_epsilon: a.epsilon,
        achieved_epsilon: accountant::epsilon(&spec, a.delta, a.method)?,
        delta: a.delta,
        q: a.q,
        steps: a.steps,
        method: a.method,
    })
}

fn csv_text(write: impl FnOnce(&mut Vec<u8>) -> csv::Result<()>) -> Result<String, CliError> {
    let mut buf = Vec::new();
    write(&mut buf).map_err(|e| CliError::Runtime(e.to_string()))?;
    String::from_utf8(buf).map_err(|e| CliError::Runtime(e.to_string()))
}

pub fn cmd_sweep(kind: &SweepKind) -> Result<(), CliError> {
    match kind {
        SweepKind::BatchNoise {
            n,
            epsilon,
            delta,
            epochs,
            steps,
            batch_sizes,
            method,
            out,
        } => {
            let mode = match (epochs, steps) {
                (Some(e), None) => SweepMode::FixedEpochs(*e),
                (None, Some(t)) => SweepMode::FixedSteps(*t),
                _ => return Err(CliError::Config("give exactly one of --epochs and --steps".into())),
            };
            let rows = sweep_batch_noise(*n, *epsilon, *delta, mode, batch_sizes, *method)?;
            emit(out.as_deref(), &csv_text(|b| write_sweep_csv(&rows, b))?)
        }
        SweepKind::Methods {
            epsilons,
            delta,
            q,
            steps,
            out,
        } => {
            let rows = compare_methods(epsilons, *delta, *q, *steps)?;
            let text = csv_text(|b| {
                let mut w = csv::Writer::from_writer(b);
                w.write_record(["epsilon", "sigma_pld", "sigma_rdp"])?;
                for r in &rows {
                    w.write_record([
                        r.epsilon.to_string(),
                        format!("{:.9e}", r.sigma_pld),
                        format!("{:.9e}", r.sigma_rdp),
                    ])?;
                }
                w.flush()?;
                Ok(())
            })?;
            emit(out.as_deref(), &text)
        }
    }
}

pub fn cmd_bench(a: &BenchArgs) -> Result<(), CliError> {
    let spec = BenchSpec {
        implementations: a.impls.clone(),
        batch_sizes: a.batch_sizes.clone(),
        num_features: a.features,
        buckets: a.buckets,
        hidden: a.hidden.clone(),
        warmup_steps: a.warmup,
        steps_per_window: a.steps_per_window,
        windows: a.windows,
        memory_cap_bytes: a.memory_cap_mb << 20,
        seed: a.seed,
    };
    let results = run_bench(&spec)?;
    emit(a.out.as_deref(), &csv_text(|b| write_bench_csv(&results, b))?)
}

/// Writes the TSV and a `<out>.manifest.json` describing it.
pub fn cmd_synth(config: &Path, out: &Path) -> Result<(), CliError> {
    let text = fs::read_to_string(config).map_err(io_err(config))?;
    let de = &mut serde_json::Deserializer::from_str(&text);
    let cfg: SynthConfig = serde_path_to_error::deserialize(de)
        .map_err(|e| CliError::Config(format!("{}: {}", e.path(), e.inner())))?;
    cfg.validate()?;
    let ds = synth_generate(&cfg)?;
    let file = fs::File::create(out).map_err(io_err(out))?;
    write_tsv(&ds, std::io::BufWriter::new(file))?;
    let manifest = DatasetManifest::describe(out.display().to_string(), &ds);
    let mpath = PathBuf::from(format!("{}.manifest.json", out.display()));
    fs::write(&mpath, to_json(&manifest)).map_err(io_err(&mpath))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_subcommands() {
        let cli = Cli::try_parse_from([
            "dpads", "account", "--q", "0.01", "--sigma", "1", "--steps", "10", "--delta", "1e-5", "--method", "rdp",
        ])
        .unwrap();
        assert!(matches!(cli.command, Command::Account(AccountArgs { method: AccountingMethod::Rdp, .. })));
        let cli = Cli::try_parse_from(["dpads", "bench", "--impls", "ghost,naive", "--batch-sizes", "8,16"]).unwrap();
        match cli.command {
            Command::Bench(b) => {
                assert_eq!(b.impls, vec![BenchImpl::Ghost, BenchImpl::Naive]);
                assert_eq!(b.batch_sizes, vec![8, 16]);
            }
            other => panic!("{other:?}"),
        }
        assert!(Cli::try_parse_from(["dpads", "account", "--q", "x"]).is_err());
    }

    #[test]
    fn error_exit_codes() {
        assert_eq!(CliError::Config(String::new()).exit_code(), 2);
        assert_eq!(CliError::Runtime(String::new()).exit_code(), 3);
        let e: CliError = AccountantError::InvalidInput("q".into()).into();
        assert_eq!(e.exit_code(), 2);
    }

    #[test]
    fn account_gaussian() {
        let r = cmd_account(&AccountArgs {
            q: 1.0,
            sigma: 1.0,
            steps: 1,
            delta: 1e-5,
            method: AccountingMethod::Pld,
            out: None,
        })
        .unwrap();
        let eps = r.epsilon.unwrap();
        assert!((eps / 4.3771780956812246 - 1.0).abs() < 0.01, "{eps}");
    }

    #[test]
    fn summary_uses_sample_std() {
        let rec = |v: f64| crate::dpsgd::TrainRecord {
            step: 1,
            split: "test".into(),
            loss: 0.5,
            auc: Some(v),
            pll: None,
            epsilon: Some(1.0),
            clipped_fraction: None,
            wall_time_s: 0.0,
        };
        let reports: Vec<TrainReport> = [0.7, 0.8, 0.9]
            .iter()
            .enumerate()
            .map(|(i, &v)| TrainReport {
                seed: i as u64,
                steps: 1,
                dp: None,
                records: vec![rec(v)],
            })
            .collect();
        let rows = summarize(&reports);
        assert_eq!(rows[0].metric, "auc");
        assert!((rows[0].mean - 0.8).abs() < 1e-12);
        assert!((rows[0].std - 0.1).abs() < 1e-12);
        assert_eq!(rows[0].num_seeds, 3);
        assert_eq!(rows[1].std, 0.0);
    }
}
