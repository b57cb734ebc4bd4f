//! Throughput and memory comparison of non-private training, materialized
//! per-unit clipping and ghost clipping.

use std::alloc::{GlobalAlloc, Layout, System};
use std::io::Write;
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::data::{synth_generate, Example, SynthConfig};
use crate::dpsgd::{dp_step, sgd_step, ClipMethod, DPConfig, DpError, OptimizerSpec, OptimizerState};
use crate::model::{LossKind, ModelArch, ModelParams};
use crate::rng::{streams, Gaussian};

static CURRENT: AtomicUsize = AtomicUsize::new(0);
static PEAK: AtomicUsize = AtomicUsize::new(0);
static ACTIVE: AtomicBool = AtomicBool::new(false);

/// System allocator with a live-bytes counter and high-water mark. Install with
/// `#[global_allocator]` to get measured peaks in [`BenchResult`].
pub struct PeakAlloc;

impl PeakAlloc {
    pub fn is_active() -> bool {
        ACTIVE.load(Ordering::Relaxed)
    }

    pub fn current() -> usize {
        CURRENT.load(Ordering::Relaxed)
    }

    pub fn peak() -> usize {
        PEAK.load(Ordering::Relaxed)
    }

    pub fn reset_peak() {
        PEAK.store(CURRENT.load(Ordering::Relaxed), Ordering::Relaxed);
    }

    fn grow(n: usize) {
        let now = CURRENT.fetch_add(n, Ordering::Relaxed) + n;
        PEAK.fetch_max(now, Ordering::Relaxed);
    }
}

unsafe impl GlobalAlloc for PeakAlloc {
    unsafe fn alloc(&self, layout: Layout) -> *mut u8 {
        let p = unsafe { System.alloc(layout) };
        if !p.is_null() {
            ACTIVE.store(true, Ordering::Relaxed);
            Self::grow(layout.size());
        }
        p
    }

    unsafe fn alloc_zeroed(&self, layout: Layout) -> *mut u8 {
        let p = unsafe { System.alloc_zeroed(layout) };
        if !p.is_null() {
            ACTIVE.store(true, Ordering::Relaxed);
            Self::grow(layout.size());
        }
        p
    }

    unsafe fn dealloc(&self, ptr: *mut u8, layout: Layout) {
        unsafe { System.dealloc(ptr, layout) };
        CURRENT.fetch_sub(layout.size(), Ordering::Relaxed);
    }

    unsafe fn realloc(&self, ptr: *mut u8, layout: Layout, new_size: usize) -> *mut u8 {
        let p = unsafe { System.realloc(ptr, layout, new_size) };
        if !p.is_null() {
            if new_size >= layout.size() {
                Self::grow(new_size - layout.size());
            } else {
                CURRENT.fetch_sub(layout.size() - new_size, Ordering::Relaxed);
            }
        }
        p
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BenchImpl {
    Baseline,
    Naive,
    Ghost,
}

impl std::str::FromStr for BenchImpl {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "baseline" => Ok(Self::Baseline),
            "naive" => Ok(Self::Naive),
            "ghost" => Ok(Self::Ghost),
            other => Err(format!("unknown implementation {other:?} (baseline|naive|ghost)")),
        }
    }
}

impl BenchImpl {
    pub fn name(self) -> &'static str {
        match self {
            Self::Baseline => "baseline",
            Self::Naive => "naive",
            Self::Ghost => "ghost",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchSpec {
    pub implementations: Vec<BenchImpl>,
    pub batch_sizes: Vec<usize>,
    pub num_features: usize,
    pub buckets: u32,
    pub hidden: Vec<usize>,
    pub warmup_steps: usize,
    pub steps_per_window: usize,
    pub windows: usize,
    pub memory_cap_bytes: usize,
    pub seed: u64,
}

impl Default for BenchSpec {
    fn default() -> Self {
        Self {
            implementations: vec![BenchImpl::Baseline, BenchImpl::Naive, BenchImpl::Ghost],
            batch_sizes: vec![32, 256, 4096],
            num_features: 26,
            buckets: 2000,
            hidden: vec![256, 256],
            warmup_steps: 2,
            steps_per_window: 3,
            windows: 5,
            memory_cap_bytes: 1 << 30,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchResult {
    pub implementation: BenchImpl,
    pub batch_size: usize,
    /// 0 when out of memory.
    pub steps_per_sec_mean: f64,
    pub steps_per_sec_std: f64,
    pub peak_bytes_estimate: usize,
    /// High-water mark above the pre-step baseline; `None` without [`PeakAlloc`].
    pub peak_bytes_measured: Option<usize>,
    pub oom: bool,
}

/// Working-set model in bytes for one training step. Parameters, optimizer
/// state and the flat gradient are shared; activations and their gradients
/// scale with the batch; the naive method adds one gradient row per unit.
pub fn estimate_step_bytes(which: BenchImpl, arch: &ModelArch, batch: usize) -> usize {
    const F64: usize = 8;
    let p = arch.num_params();
    let widths: usize = arch.layer_dims().iter().map(|&(fan_in, _)| fan_in).sum();
    let activations = batch * (widths + 1) * F64;
    let backprop = batch * (arch.input_dim() + 2 * arch.max_width()) * F64;
    let shared = 3 * p * F64 + activations + backprop;
    match which {
        BenchImpl::Baseline => shared,
        BenchImpl::Ghost => shared + p * F64 + 2 * batch * F64,
        BenchImpl::Naive => shared + p * F64 + batch * p * F64,
    }
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = if xs.len() > 1 {
        xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    (mean, var.sqrt())
}

struct Runner<'a> {
    which: BenchImpl,
    params: ModelParams,
    opt: OptimizerState,
    noise: Gaussian,
    dp: DPConfig,
    pool: &'a [Example],
    batch: usize,
    cursor: usize,
}

impl Runner<'_> {
    fn step(&mut self) -> Result<(), DpError> {
        let n = self.pool.len();
        let batch: Vec<&Example> = (0..self.batch).map(|k| &self.pool[(self.cursor + k) % n]).collect();
        self.cursor = (self.cursor + self.batch) % n;
        match self.which {
            BenchImpl::Baseline => {
                sgd_step(&mut self.params, &batch, LossKind::Bce, &mut self.opt, 0.01)?;
            }
            BenchImpl::Ghost | BenchImpl::Naive => {
                let method = if self.which == BenchImpl::Ghost {
                    ClipMethod::Ghost
                } else {
                    ClipMethod::Naive
                };
                dp_step(
                    &mut self.params,
                    &batch,
                    LossKind::Bce,
                    &self.dp,
                    method,
                    &mut self.opt,
                    0.01,
                    &mut self.noise,
                )?;
            }
        }
        Ok(())
    }
}

/// Times every (implementation, batch size) cell. Data is generated before any
/// timing; cells whose working set exceeds the cap are recorded as OOM.
pub fn run_bench(spec: &BenchSpec) -> Result<Vec<BenchResult>, DpError> {
    if spec.windows < 5 {
        return Err(DpError::InvalidConfig("at least 5 timed windows are required".into()));
    }
    if spec.steps_per_window == 0 || spec.batch_sizes.contains(&0) {
        return Err(DpError::InvalidConfig("steps and batch sizes must be positive".into()));
    }
    let pool_size = spec.batch_sizes.iter().copied().max().unwrap_or(1).max(64);
    let mut synth = SynthConfig::binary(pool_size, 0.5, spec.seed);
    synth.vocab_sizes = vec![spec.buckets; spec.num_features];
    let pool = synth_generate(&synth)?;
    let arch = ModelArch::for_schema(pool.schema(), spec.hidden.clone());
    let init = ModelParams::init(&arch, spec.seed)?;

    let mut out = Vec::new();
    for &which in &spec.implementations {
        for &b in &spec.batch_sizes {
            let estimate = estimate_step_bytes(which, &arch, b);
            let mut result = BenchResult {
                implementation: which,
                batch_size: b,
                steps_per_sec_mean: 0.0,
                steps_per_sec_std: 0.0,
                peak_bytes_estimate: estimate,
                peak_bytes_measured: None,
                oom: estimate > spec.memory_cap_bytes,
            };
            if result.oom {
                out.push(result);
                continue;
            }
            let mut runner = Runner {
                which,
                params: init.clone(),
                opt: OptimizerState::new(&OptimizerSpec::sgd(0.01, 0.9), init.len()),
                noise: Gaussian::from_seed(spec.seed, streams::NOISE),
                dp: DPConfig {
                    clip_norm: 1.0,
                    noise_multiplier: 1.0,
                    batch_size: b,
                    microbatch: 1,
                    q: b as f64 / pool_size as f64,
                    steps: 1,
                    delta: 1e-6,
                },
                pool: pool.examples(),
                batch: b,
                cursor: 0,
            };
            // The first step doubles as the memory probe.
            let before = PeakAlloc::current();
            PeakAlloc::reset_peak();
            runner.step()?;
            if PeakAlloc::is_active() {
                let peak = PeakAlloc::peak().saturating_sub(before);
                result.peak_bytes_measured = Some(peak);
                result.oom = peak > spec.memory_cap_bytes;
            }
            if result.oom {
                out.push(result);
                continue;
            }
            for _ in 1..spec.warmup_steps {
                runner.step()?;
            }
            let mut rates = Vec::with_capacity(spec.windows);
            for _ in 0..spec.windows {
                let t = Instant::now();
                for _ in 0..spec.steps_per_window {
                    runner.step()?;
                }
                rates.push(spec.steps_per_window as f64 / t.elapsed().as_secs_f64());
            }
            let (mean, std) = mean_std(&rates);
            result.steps_per_sec_mean = mean;
            result.steps_per_sec_std = std;
            out.push(result);
        }
    }
    Ok(out)
}

/// Largest batch size that ran without OOM, if any.
pub fn max_batch(results: &[BenchResult], which: BenchImpl) -> Option<usize> {
    results
        .iter()
        .filter(|r| r.implementation == which && !r.oom)
        .map(|r| r.batch_size)
        .max()
}

pub fn write_bench_csv<W: Write>(results: &[BenchResult], out: W) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "implementation",
        "batch_size",
        "steps_per_sec_mean",
        "steps_per_sec_std",
        "peak_bytes_estimate",
        "peak_bytes_measured",
        "oom",
    ])?;
    for r in results {
        w.write_record([
            r.implementation.name().to_string(),
            r.batch_size.to_string(),
            if r.oom { "-".into() } else { format!("{:.4}", r.steps_per_sec_mean) },
            if r.oom { "-".into() } else { format!("{:.4}", r.steps_per_sec_std) },
            r.peak_bytes_estimate.to_string(),
            r.peak_bytes_measured.map(|m| m.to_string()).unwrap_or_default(),
            r.oom.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> BenchSpec {
        BenchSpec {
            batch_sizes: vec![4, 64],
            num_features: 3,
            buckets: 50,
            hidden: vec![8],
            warmup_steps: 1,
            steps_per_window: 1,
            windows: 5,
            ..BenchSpec::default()
        }
    }

    #[test]
    fn runs_every_cell() {
        let res = run_bench(&tiny()).unwrap();
        assert_eq!(res.len(), 6);
        assert!(res.iter().all(|r| !r.oom && r.steps_per_sec_mean > 0.0));
        let mut buf = Vec::new();
        write_bench_csv(&res, &mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap().lines().count(), 7);
    }

    #[test]
    fn cap_marks_naive_first() {
        let spec = tiny();
        let synth = {
            let mut s = SynthConfig::binary(64, 0.5, 0);
            s.vocab_sizes = vec![50; 3];
            synth_generate(&s).unwrap()
        };
        let arch = ModelArch::for_schema(synth.schema(), vec![8]);
        let cap = estimate_step_bytes(BenchImpl::Ghost, &arch, 64)
            .max(estimate_step_bytes(BenchImpl::Naive, &arch, 4));
        assert!(estimate_step_bytes(BenchImpl::Naive, &arch, 64) > cap);
        let res = run_bench(&BenchSpec {
            memory_cap_bytes: cap,
            ..spec
        })
        .unwrap();
        assert_eq!(max_batch(&res, BenchImpl::Naive), Some(4));
        assert_eq!(max_batch(&res, BenchImpl::Ghost), Some(64));
        assert_eq!(max_batch(&res, BenchImpl::Baseline), Some(64));
        let oom = res.iter().find(|r| r.oom).unwrap();
        assert_eq!(oom.steps_per_sec_mean, 0.0);
    }

    #[test]
    fn estimate_orders_implementations() {
        let mut s = SynthConfig::binary(16, 0.5, 0);
        s.vocab_sizes = vec![100; 4];
        let ds = synth_generate(&s).unwrap();
        let arch = ModelArch::for_schema(ds.schema(), vec![16, 16]);
        for b in [1, 32, 1024] {
            let base = estimate_step_bytes(BenchImpl::Baseline, &arch, b);
            let ghost = estimate_step_bytes(BenchImpl::Ghost, &arch, b);
            let naive = estimate_step_bytes(BenchImpl::Naive, &arch, b);
            assert!(base < ghost && ghost < naive);
        }
    }
}
