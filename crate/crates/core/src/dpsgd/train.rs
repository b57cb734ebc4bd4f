use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::{dp_step, sgd_step, ClipMethod, DPConfig, DpError, OptimizerSpec, OptimizerState};
use crate::accountant::{self, calibrate_sigma, AccountingMethod, MechanismSpec};
use crate::data::{poisson_sample, Dataset, Example, ShuffleBatcher, TaskKind};
use crate::labeldp::{randomize_labels, RRConfig};
use crate::metrics::{auc, predict};
use crate::model::{LossKind, ModelArch, ModelError, ModelParams};
use crate::rng::{seeded, streams, Gaussian};

/// Training length: a step count, or epochs converted with `T = ceil(E N / B)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Horizon {
    Steps(u64),
    Epochs(f64),
}

impl Horizon {
    pub fn steps(self, n: usize, batch_size: usize) -> Result<u64, DpError> {
        if batch_size == 0 {
            return Err(DpError::InvalidConfig("batch size must be positive".into()));
        }
        match self {
            Horizon::Steps(t) => Ok(t),
            Horizon::Epochs(e) if e > 0.0 && e.is_finite() => {
                Ok((e * n as f64 / batch_size as f64).ceil() as u64)
            }
            Horizon::Epochs(e) => Err(DpError::InvalidConfig(format!("epochs {e} must be positive"))),
        }
    }
}

/// How σ is chosen for DP-SGD.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseLevel {
    Multiplier(f64),
    /// Calibrated so the run ends at this ε.
    TargetEpsilon(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum Privacy {
    NonPrivate,
    DpSgd {
        clip_norm: f64,
        noise: NoiseLevel,
        microbatch: usize,
        /// Defaults to 1/N.
        delta: Option<f64>,
        accounting: AccountingMethod,
        method: ClipMethod,
    },
    LabelDp {
        epsilon: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub privacy: Privacy,
    pub optimizer: OptimizerSpec,
    pub batch_size: usize,
    pub horizon: Horizon,
    pub cosine_decay: bool,
    /// Validation cadence in steps; the last step is always evaluated.
    pub eval_every: u64,
    pub seed: u64,
}

pub struct SplitData<'a> {
    pub train: &'a Dataset,
    pub valid: &'a Dataset,
    pub test: &'a Dataset,
}

/// One evaluation. Binary tasks report `auc`, count tasks `pll`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainRecord {
    pub step: u64,
    pub split: String,
    pub loss: f64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub auc: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub pll: Option<f64>,
    pub epsilon: Option<f64>,
    pub clipped_fraction: Option<f64>,
    pub wall_time_s: f64,
}

impl TrainRecord {
    /// AUC for binary tasks, PLL for count tasks.
    pub fn metric(&self) -> f64 {
        self.auc.or(self.pll).unwrap_or(f64::NAN)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub seed: u64,
    pub steps: u64,
    pub dp: Option<DPConfig>,
    pub records: Vec<TrainRecord>,
}

impl TrainReport {
    pub fn test(&self) -> Option<&TrainRecord> {
        self.records.iter().rev().find(|r| r.split == "test")
    }

    /// JSON lines, one per record.
    pub fn to_jsonl(&self) -> Result<String, serde_json::Error> {
        let mut out = String::new();
        for r in &self.records {
            out.push_str(&serde_json::to_string(r)?);
            out.push('\n');
        }
        Ok(out)
    }
}

pub struct TrainOutcome {
    pub report: TrainReport,
    pub params: ModelParams,
}

enum Sampler {
    Poisson { q: f64, rng: crate::rng::DetRng },
    Shuffle(ShuffleBatcher),
}

impl Sampler {
    fn next(&mut self, n: usize) -> Vec<usize> {
        match self {
            Sampler::Poisson { q, rng } => poisson_sample(n, *q, rng),
            Sampler::Shuffle(b) => b.next_batch(),
        }
    }
}

fn diverged(step: u64) -> impl Fn(ModelError) -> DpError {
    move |e| match e {
        ModelError::NumericOverflow(reason) => DpError::Diverged { step, reason },
        other => DpError::Model(other),
    }
}

/// Resolves the DP-SGD parameters for a training set of `n` examples, calibrating σ if asked.
pub fn resolve_dp(cfg: &TrainConfig, n: usize) -> Result<Option<(DPConfig, AccountingMethod, ClipMethod)>, DpError> {
    let Privacy::DpSgd {
        clip_norm,
        noise,
        microbatch,
        delta,
        accounting,
        method,
    } = cfg.privacy
    else {
        return Ok(None);
    };
    let delta = delta.unwrap_or(1.0 / n as f64);
    let mut dp = DPConfig::resolve(clip_norm, 0.0, cfg.batch_size, microbatch, n, cfg.horizon, delta)?;
    dp.noise_multiplier = match noise {
        NoiseLevel::Multiplier(s) => s,
        NoiseLevel::TargetEpsilon(eps) => calibrate_sigma(eps, delta, dp.q, dp.steps, accounting)?,
    };
    dp.validate()?;
    Ok(Some((dp, accounting, method)))
}

/// Runs the configured number of steps, evaluating on validation at the cadence
/// and on test at the end.
pub fn train(data: &SplitData<'_>, arch: &ModelArch, cfg: &TrainConfig) -> Result<TrainOutcome, DpError> {
    let start = Instant::now();
    let task = data.train.task();
    let loss = LossKind::from(task);
    let n = data.train.len();
    let dp = resolve_dp(cfg, n)?;
    let steps = cfg.horizon.steps(n, cfg.batch_size)?;
    if cfg.eval_every == 0 {
        return Err(DpError::InvalidConfig("eval cadence must be at least 1".into()));
    }

    let relabeled;
    let (train_set, label_eps) = match cfg.privacy {
        Privacy::LabelDp { epsilon } => {
            relabeled = randomize_labels(data.train, &RRConfig { epsilon, seed: cfg.seed })?;
            (&relabeled, Some(epsilon))
        }
        _ => (data.train, None),
    };
    let examples = train_set.examples();

    let mut params = ModelParams::init(arch, cfg.seed)?;
    let mut opt = OptimizerState::new(&cfg.optimizer, params.len());
    let mut noise = Gaussian::from_seed(cfg.seed, streams::NOISE);
    let mut sampler = match &dp {
        Some((c, ..)) => Sampler::Poisson {
            q: c.q,
            rng: seeded(cfg.seed, streams::SAMPLING),
        },
        None => Sampler::Shuffle(ShuffleBatcher::new(
            n,
            cfg.batch_size,
            seeded(cfg.seed, streams::SHUFFLE),
        )),
    };

    let mut records = Vec::new();
    let mut clip_acc = (0.0, 0u64);
    for t in 0..steps {
        let lr = if cfg.cosine_decay {
            super::cosine_lr(cfg.optimizer.lr, t, steps)
        } else {
            cfg.optimizer.lr
        };
        let idx = sampler.next(n);
        let batch: Vec<&Example> = idx.iter().map(|&i| &examples[i]).collect();
        let step = t + 1;
        let losses = match &dp {
            Some((c, _, method)) => {
                let s = dp_step(&mut params, &batch, loss, c, *method, &mut opt, lr, &mut noise)
                    .map_err(diverged(step))?;
                clip_acc.0 += s.clip.clipped_fraction;
                clip_acc.1 += 1;
                s.losses
            }
            None => sgd_step(&mut params, &batch, loss, &mut opt, lr).map_err(diverged(step))?,
        };
        if losses.iter().any(|l| !l.is_finite()) || !params.all_finite() {
            return Err(DpError::Diverged {
                step,
                reason: "non-finite loss or parameters".into(),
            });
        }
        if step % cfg.eval_every == 0 || step == steps {
            let epsilon = match &dp {
                Some((c, method, _)) => Some(epsilon_so_far(c, step, *method)?),
                None => label_eps,
            };
            let clipped = dp.as_ref().map(|_| {
                let f = if clip_acc.1 == 0 { 0.0 } else { clip_acc.0 / clip_acc.1 as f64 };
                clip_acc = (0.0, 0);
                f
            });
            let mut rec = evaluate(&params, data.valid, "valid", step).map_err(|e| match e {
                DpError::Model(m) => diverged(step)(m),
                other => other,
            })?;
            rec.epsilon = epsilon;
            rec.clipped_fraction = clipped;
            rec.wall_time_s = start.elapsed().as_secs_f64();
            records.push(rec);
        }
    }
    let mut test = evaluate(&params, data.test, "test", steps)?;
    test.epsilon = match &dp {
        Some((c, method, _)) => Some(epsilon_so_far(c, steps, *method)?),
        None => label_eps,
    };
    test.wall_time_s = start.elapsed().as_secs_f64();
    records.push(test);
    debug_assert!(task == data.test.task());
    Ok(TrainOutcome {
        report: TrainReport {
            seed: cfg.seed,
            steps,
            dp: dp.map(|d| d.0),
            records,
        },
        params,
    })
}

fn epsilon_so_far(c: &DPConfig, step: u64, method: AccountingMethod) -> Result<f64, DpError> {
    let spec = MechanismSpec {
        q: c.q,
        sigma: c.noise_multiplier,
        steps: step,
    };
    if c.noise_multiplier == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(accountant::epsilon(&spec, c.delta, method)?)
}

fn evaluate(params: &ModelParams, ds: &Dataset, split: &str, step: u64) -> Result<TrainRecord, DpError> {
    let logits = predict(params, ds.examples())?;
    let labels: Vec<u32> = ds.labels().collect();
    let kind = LossKind::from(ds.task());
    let mut total = 0.0;
    for (&f, &y) in logits.iter().zip(&labels) {
        total += kind.loss(f, f64::from(y))?;
    }
    let mean = total / logits.len() as f64;
    let (auc_v, pll_v) = match ds.task() {
        TaskKind::Binary => (Some(auc(&logits, &labels)?), None),
        TaskKind::Count => (None, Some(mean)),
    };
    Ok(TrainRecord {
        step,
        split: split.to_string(),
        loss: mean,
        auc: auc_v,
        pll: pll_v,
        epsilon: None,
        clipped_fraction: None,
        wall_time_s: 0.0,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{split_chronological, synth_generate, SynthConfig};

    fn small_synth(count: bool) -> (Dataset, Dataset, Dataset, ModelArch) {
        let mut sc = if count {
            SynthConfig::count(3000, 2.0, 5)
        } else {
            SynthConfig::binary(3000, 0.5, 5)
        };
        sc.vocab_sizes = vec![10; 6];
        sc.num_dense = 2;
        sc.weight_scale = 1.0;
        let ds = synth_generate(&sc).unwrap();
        let arch = ModelArch::for_schema(ds.schema(), vec![8, 8]);
        let (a, b, c) = split_chronological(&ds).unwrap();
        (a, b, c, arch)
    }

    fn config(privacy: Privacy) -> TrainConfig {
        TrainConfig {
            privacy,
            optimizer: OptimizerSpec::of(super::super::OptimizerKind::Adam, 0.01),
            batch_size: 100,
            horizon: Horizon::Epochs(2.0),
            cosine_decay: true,
            eval_every: 10,
            seed: 3,
        }
    }

    #[test]
    fn non_private_run_records_and_replays() {
        let (tr, va, te, arch) = small_synth(false);
        let data = SplitData { train: &tr, valid: &va, test: &te };
        let cfg = config(Privacy::NonPrivate);
        let a = train(&data, &arch, &cfg).unwrap();
        assert_eq!(a.report.steps, 48);
        assert_eq!(a.report.records.len(), 6);
        let t = a.report.test().unwrap();
        assert!(t.auc.unwrap() > 0.6 && t.epsilon.is_none(), "{t:?}");
        let b = train(&data, &arch, &cfg).unwrap();
        assert_eq!(a.params.flat(), b.params.flat());
    }

    #[test]
    fn dp_run_reports_epsilon() {
        let (tr, va, te, arch) = small_synth(false);
        let data = SplitData { train: &tr, valid: &va, test: &te };
        let cfg = config(Privacy::DpSgd {
            clip_norm: 1.0,
            noise: NoiseLevel::TargetEpsilon(4.0),
            microbatch: 2,
            delta: None,
            accounting: AccountingMethod::Rdp,
            method: ClipMethod::Ghost,
        });
        let out = train(&data, &arch, &cfg).unwrap();
        let eps: Vec<f64> = out.report.records.iter().filter_map(|r| r.epsilon).collect();
        assert!(eps.windows(2).all(|w| w[0] <= w[1]));
        let last = *eps.last().unwrap();
        assert!(last <= 4.0 && last >= 0.99 * 4.0, "{last}");
        assert!(out.report.records[0].clipped_fraction.is_some());
    }

    #[test]
    fn count_task_reports_pll() {
        let (tr, va, te, arch) = small_synth(true);
        let data = SplitData { train: &tr, valid: &va, test: &te };
        let mut cfg = config(Privacy::NonPrivate);
        cfg.optimizer = OptimizerSpec::sgd(0.01, 0.9);
        let out = train(&data, &arch, &cfg).unwrap();
        let t = out.report.test().unwrap();
        assert!(t.pll.is_some() && t.auc.is_none());
    }

    #[test]
    fn huge_learning_rate_diverges() {
        let (tr, va, te, arch) = small_synth(true);
        let data = SplitData { train: &tr, valid: &va, test: &te };
        let mut cfg = config(Privacy::NonPrivate);
        cfg.optimizer = OptimizerSpec::sgd(1e6, 0.0);
        cfg.cosine_decay = false;
        match train(&data, &arch, &cfg) {
            Err(DpError::Diverged { step, .. }) => assert!(step >= 1),
            Err(e) => panic!("unexpected error {e}"),
            Ok(_) => panic!("expected divergence"),
        }
    }

    #[test]
    fn label_dp_reports_label_epsilon() {
        let (tr, va, te, arch) = small_synth(false);
        let data = SplitData { train: &tr, valid: &va, test: &te };
        let out = train(&data, &arch, &config(Privacy::LabelDp { epsilon: 1.0 })).unwrap();
        assert_eq!(out.report.test().unwrap().epsilon, Some(1.0));
    }

    #[test]
    fn horizon_steps() {
        assert_eq!(Horizon::Epochs(1.5).steps(1000, 300).unwrap(), 5);
        assert_eq!(Horizon::Steps(7).steps(10, 3).unwrap(), 7);
        assert!(Horizon::Epochs(0.0).steps(10, 3).is_err());
    }
}
