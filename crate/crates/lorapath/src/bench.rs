//! Deterministic microbenchmark harness: times variants at a shape with
//! warmup and repeats, and compares a chosen plan against the default
//! (cached-intermediate) execution.
//!
//! One measurement session owns the process at a time; concurrent sessions
//! are rejected rather than queued so timings never interleave.

use std::hint::black_box;
use std::sync::atomic::{AtomicBool, Ordering};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::costmodel::{self, ShapeConfig, VariantId};
use crate::dense::{Matrix, Scalar};
use crate::error::{Error, Result};
use crate::selector::PairPlan;
use crate::variants::{
    backward, baseline_backward, baseline_forward, forward, random_operands, LoraLayer,
};

/// Element precision the harness runs at. Verification always uses high
/// precision; single precision exists for timing only.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    High,
    Single,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BenchConfig {
    pub warmup_iters: usize,
    /// Timed iterations; at least 1. Fewer than 3 degrades the statistics
    /// and is flagged in the resulting [`TimingStats`].
    pub repeat_iters: usize,
    pub seed: u64,
    pub precision: Precision,
    pub single_thread: bool,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            warmup_iters: 3,
            repeat_iters: 7,
            seed: 0,
            precision: Precision::High,
            single_thread: false,
        }
    }
}

impl BenchConfig {
    fn validate(&self) -> Result<()> {
        if self.repeat_iters == 0 {
            return Err(Error::InvalidConfig(
                "repeat_iters must be at least 1".to_string(),
            ));
        }
        Ok(())
    }
}

/// Summary of one timed run. All durations in nanoseconds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimingStats {
    pub median_ns: f64,
    pub mean_ns: f64,
    pub std_ns: f64,
    pub min_ns: f64,
    pub samples: usize,
    /// Present when the measurement quality is questionable (coarse clock,
    /// too few samples).
    pub quality_warning: Option<String>,
}

/// Measured and predicted comparison of a plan against the baseline
/// execution over one forward+backward loop.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineComparison {
    pub shape: ShapeConfig,
    pub plan_forward: VariantId,
    pub plan_backward: VariantId,
    pub plan_timing: TimingStats,
    pub baseline_timing: TimingStats,
    /// `(baseline - plan) / baseline * 100` over median loop times.
    pub measured_speedup_pct: f64,
    pub plan_flops: u64,
    pub baseline_flops: u64,
    /// Same formula over exact FLOP counts; negative when the plan does more
    /// arithmetic than the baseline (the baseline skips one recompute).
    pub predicted_speedup_pct: f64,
}

static SESSION_ACTIVE: AtomicBool = AtomicBool::new(false);

/// Exclusive handle on the process's measurement capacity.
pub struct MeasurementSession {
    _private: (),
}

impl MeasurementSession {
    /// Fails if another session is alive anywhere in the process.
    pub fn acquire() -> Result<Self> {
        if SESSION_ACTIVE
            .compare_exchange(false, true, Ordering::SeqCst, Ordering::SeqCst)
            .is_ok()
        {
            Ok(Self { _private: () })
        } else {
            Err(Error::Measurement(
                "another measurement session is active".to_string(),
            ))
        }
    }

    /// Times one executable variant at a shape. Operand construction is
    /// excluded from the timed region.
    pub fn time_variant(
        &mut self,
        v: VariantId,
        c: &ShapeConfig,
        cfg: &BenchConfig,
    ) -> Result<TimingStats> {
        cfg.validate()?;
        if !v.is_executable() {
            return Err(Error::UnsupportedVariant(v));
        }
        match cfg.precision {
            Precision::High => time_variant_impl::<f64>(v, c, cfg),
            Precision::Single => time_variant_impl::<f32>(v, c, cfg),
        }
    }

    /// Times one forward+backward loop for the plan and for the baseline
    /// execution, and reports measured plus FLOP-predicted speedups.
    pub fn compare_to_baseline(
        &mut self,
        c: &ShapeConfig,
        plan: &PairPlan,
        cfg: &BenchConfig,
    ) -> Result<BaselineComparison> {
        cfg.validate()?;
        if !plan.backward_choice.is_executable() {
            return Err(Error::UnsupportedVariant(plan.backward_choice.into()));
        }
        let plan_flops = costmodel::flops_forward(plan.forward_choice, c)?
            .checked_add(costmodel::flops_backward(plan.backward_choice, c)?)
            .ok_or(Error::Overflow {
                shape: c.to_string(),
            })?;
        let base = costmodel::baseline_costs(c)?;
        let baseline_flops =
            base.forward_flops
                .checked_add(base.backward_flops)
                .ok_or(Error::Overflow {
                    shape: c.to_string(),
                })?;
        let (plan_timing, baseline_timing) = match cfg.precision {
            Precision::High => compare_impl::<f64>(c, plan, cfg)?,
            Precision::Single => compare_impl::<f32>(c, plan, cfg)?,
        };
        let measured_speedup_pct =
            (baseline_timing.median_ns - plan_timing.median_ns) / baseline_timing.median_ns * 100.0;
        let predicted_speedup_pct =
            (baseline_flops as f64 - plan_flops as f64) / baseline_flops as f64 * 100.0;
        Ok(BaselineComparison {
            shape: *c,
            plan_forward: plan.forward_choice.into(),
            plan_backward: plan.backward_choice.into(),
            plan_timing,
            baseline_timing,
            measured_speedup_pct,
            plan_flops,
            baseline_flops,
            predicted_speedup_pct,
        })
    }
}

impl Drop for MeasurementSession {
    fn drop(&mut self) {
        SESSION_ACTIVE.store(false, Ordering::SeqCst);
    }
}

/// Convenience wrapper: acquires a session for a single measurement.
pub fn time_variant(v: VariantId, c: &ShapeConfig, cfg: &BenchConfig) -> Result<TimingStats> {
    MeasurementSession::acquire()?.time_variant(v, c, cfg)
}

/// Convenience wrapper: acquires a session for a single comparison.
pub fn compare_to_baseline(
    c: &ShapeConfig,
    plan: &PairPlan,
    cfg: &BenchConfig,
) -> Result<BaselineComparison> {
    MeasurementSession::acquire()?.compare_to_baseline(c, plan, cfg)
}

fn with_thread_mode<R: Send>(single_thread: bool, f: impl FnOnce() -> R + Send) -> Result<R> {
    #[cfg(feature = "parallel")]
    if single_thread {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(1)
            .build()
            .map_err(|e| Error::Measurement(format!("failed to build 1-thread pool: {e}")))?;
        return Ok(pool.install(f));
    }
    let _ = single_thread;
    Ok(f())
}

fn time_variant_impl<T: Scalar>(
    v: VariantId,
    c: &ShapeConfig,
    cfg: &BenchConfig,
) -> Result<TimingStats> {
    let (input, layer, grad_output) = random_operands::<T>(c, cfg.seed, 1.0)?;
    // Validate once outside the timed region so the loop body cannot fail.
    match v {
        VariantId::Forward(f) => {
            forward(f, &input, &layer)?;
        }
        VariantId::Backward(b) => {
            backward(b, &input, &layer, &grad_output)?;
        }
    }
    let samples = with_thread_mode(cfg.single_thread, || {
        run_timed(cfg, || match v {
            VariantId::Forward(f) => {
                black_box(forward(f, &input, &layer).expect("validated"));
            }
            VariantId::Backward(b) => {
                black_box(backward(b, &input, &layer, &grad_output).expect("validated"));
            }
        })
    })??;
    Ok(stats_from(samples))
}

fn compare_impl<T: Scalar>(
    c: &ShapeConfig,
    plan: &PairPlan,
    cfg: &BenchConfig,
) -> Result<(TimingStats, TimingStats)> {
    let (input, layer, grad_output) = random_operands::<T>(c, cfg.seed, 1.0)?;
    plan_loop(plan, &input, &layer, &grad_output)?;
    baseline_loop(&input, &layer, &grad_output)?;
    let (plan_samples, base_samples) = with_thread_mode(cfg.single_thread, || {
        let plan_samples = run_timed(cfg, || {
            black_box(plan_loop(plan, &input, &layer, &grad_output).expect("validated"));
        })?;
        let base_samples = run_timed(cfg, || {
            black_box(baseline_loop(&input, &layer, &grad_output).expect("validated"));
        })?;
        Ok::<_, Error>((plan_samples, base_samples))
    })??;
    Ok((stats_from(plan_samples), stats_from(base_samples)))
}

fn plan_loop<T: Scalar>(
    plan: &PairPlan,
    input: &Matrix<T>,
    layer: &LoraLayer<T>,
    grad_output: &Matrix<T>,
) -> Result<(Matrix<T>, crate::variants::Gradients<T>)> {
    let y = forward(plan.forward_choice, input, layer)?;
    let g = backward(plan.backward_choice, input, layer, grad_output)?;
    Ok((y, g))
}

fn baseline_loop<T: Scalar>(
    input: &Matrix<T>,
    layer: &LoraLayer<T>,
    grad_output: &Matrix<T>,
) -> Result<(Matrix<T>, crate::variants::Gradients<T>)> {
    let (y, hidden) = baseline_forward(input, layer)?;
    let g = baseline_backward(input, layer, grad_output, &hidden)?;
    Ok((y, g))
}

fn run_timed(cfg: &BenchConfig, mut body: impl FnMut()) -> Result<Vec<f64>> {
    for _ in 0..cfg.warmup_iters {
        body();
    }
    let mut samples = Vec::with_capacity(cfg.repeat_iters);
    for _ in 0..cfg.repeat_iters {
        let start = Instant::now();
        body();
        let ns = start.elapsed().as_nanos();
        if ns == 0 {
            return Err(Error::Measurement(
                "recorded a zero-duration sample; clock resolution is insufficient for this shape"
                    .to_string(),
            ));
        }
        samples.push(ns as f64);
    }
    Ok(samples)
}

fn stats_from(mut samples: Vec<f64>) -> TimingStats {
    samples.sort_by(|a, b| a.partial_cmp(b).expect("samples are finite"));
    let n = samples.len();
    let median_ns = if n % 2 == 1 {
        samples[n / 2]
    } else {
        (samples[n / 2 - 1] + samples[n / 2]) / 2.0
    };
    let mean_ns = samples.iter().sum::<f64>() / n as f64;
    let std_ns = (samples.iter().map(|s| (s - mean_ns).powi(2)).sum::<f64>() / n as f64).sqrt();
    let min_ns = samples[0];

    let mut warnings = Vec::new();
    let resolution = clock_resolution_ns();
    if resolution > median_ns / 100.0 {
        warnings.push(format!(
            "clock resolution ~{resolution:.0} ns exceeds 1% of the median ({median_ns:.0} ns)"
        ));
    }
    if n < 3 {
        warnings.push(format!("only {n} samples; spread statistics are degenerate"));
    }
    TimingStats {
        median_ns,
        mean_ns,
        std_ns,
        min_ns,
        samples: n,
        quality_warning: if warnings.is_empty() {
            None
        } else {
            Some(warnings.join("; "))
        },
    }
}

/// Smallest positive tick the monotonic clock resolves, estimated once per call.
pub(crate) fn clock_resolution_ns() -> f64 {
    let mut best = f64::INFINITY;
    for _ in 0..32 {
        let start = Instant::now();
        let mut delta = start.elapsed();
        while delta.is_zero() {
            delta = start.elapsed();
        }
        let ns = delta.as_nanos() as f64;
        if ns < best {
            best = ns;
        }
    }
    if best.is_finite() {
        best
    } else {
        1.0
    }
}

/// Test-only blocking acquire: unit tests in one binary run concurrently and
/// should queue for the session instead of racing for it.
#[cfg(test)]
pub(crate) fn acquire_blocking() -> MeasurementSession {
    loop {
        match MeasurementSession::acquire() {
            Ok(s) => return s,
            Err(_) => std::thread::sleep(std::time::Duration::from_millis(2)),
        }
    }
}
