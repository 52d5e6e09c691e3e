//! Forward-pass throughput measurement.

use std::time::Instant;

use condenser_core::backbone::{count_macs, count_params, Network};
use condenser_core::{Rng, Shape, Tensor};
use serde::{Deserialize, Serialize};

use crate::error::{HarnessError, Result};
use crate::specio::spec_digest;
use crate::train::effective_threads;

pub const MIN_WARMUP: usize = 1;
pub const MIN_ITERS: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BenchConfig {
    pub batch: usize,
    pub warmup: usize,
    pub iters: usize,
    pub threads: usize,
    pub seed: u64,
}

impl Default for BenchConfig {
    fn default() -> Self {
        BenchConfig {
            batch: 1,
            warmup: 3,
            iters: 20,
            threads: 1,
            seed: 0,
        }
    }
}

impl BenchConfig {
    pub fn check(&self) -> Result<()> {
        if self.warmup < MIN_WARMUP {
            return Err(HarnessError::Usage(format!("--warmup must be at least {MIN_WARMUP}")));
        }
        if self.iters < MIN_ITERS {
            return Err(HarnessError::Usage(format!("--iters must be at least {MIN_ITERS}, got {}", self.iters)));
        }
        if self.batch == 0 || self.threads == 0 {
            return Err(HarnessError::Usage("--batch and --threads must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub spec_digest: String,
    pub params: u64,
    pub macs: u64,
    pub batch: usize,
    pub threads: usize,
    pub warmup: usize,
    pub iters: usize,
    pub images_per_sec: f64,
    /// Percentiles of per-iteration wall time (one whole batch).
    pub p50_ms: f64,
    pub p95_ms: f64,
    /// Raw per-iteration wall times in milliseconds.
    pub timings_ms: Vec<f64>,
}

impl BenchReport {
    /// Derives throughput and percentiles from raw timings.
    pub fn from_timings(
        spec_digest: String,
        params: u64,
        macs: u64,
        cfg: &BenchConfig,
        threads: usize,
        timings_ms: Vec<f64>,
    ) -> Self {
        let total_s: f64 = timings_ms.iter().sum::<f64>() / 1e3;
        BenchReport {
            spec_digest,
            params,
            macs,
            batch: cfg.batch,
            threads,
            warmup: cfg.warmup,
            iters: timings_ms.len(),
            images_per_sec: (cfg.batch * timings_ms.len()) as f64 / total_s,
            p50_ms: percentile(&timings_ms, 50.0),
            p95_ms: percentile(&timings_ms, 95.0),
            timings_ms,
        }
    }

    /// Mean per-image latency in milliseconds.
    pub fn latency_per_image_ms(&self) -> f64 {
        1e3 / self.images_per_sec
    }
}

/// Nearest-rank percentile: the smallest sample with at least `q`% of the
/// samples at or below it.
pub fn percentile(samples: &[f64], q: f64) -> f64 {
    if samples.is_empty() {
        return f64::NAN;
    }
    let mut s = samples.to_vec();
    s.sort_by(f64::total_cmp);
    let rank = ((q / 100.0) * s.len() as f64).ceil().max(1.0) as usize;
    s[rank.min(s.len()) - 1]
}

/// One inference pass over `x`, sharded over `threads` by batch.
fn forward_sharded(net: &Network<f32>, x: &Tensor<f32>, threads: usize) -> Result<()> {
    let n = x.shape().n;
    if threads <= 1 || n == 1 {
        net.forward(x)?;
        return Ok(());
    }
    let threads = threads.min(n);
    let shard = n.div_ceil(threads);
    let parts: Vec<Tensor<f32>> = (0..n)
        .step_by(shard)
        .map(|s| x.slice_batch(s, shard.min(n - s)))
        .collect::<Result<_, _>>()?;
    std::thread::scope(|s| {
        let handles: Vec<_> = parts.iter().map(|p| s.spawn(move || net.forward(p))).collect();
        for h in handles {
            h.join().expect("bench worker panicked")?;
        }
        Ok(())
    })
}

/// Times inference on random inputs with the monotonic clock. Taping is
/// off; only the forward pass is measured.
pub fn bench(net: &Network<f32>, cfg: &BenchConfig) -> Result<BenchReport> {
    cfg.check()?;
    let spec = net.spec();
    let threads = effective_threads(cfg.threads);
    let r = spec.input_res;
    let x = Tensor::uniform(Shape::new(cfg.batch, r.c, r.h, r.w)?, -1.0, 1.0, &mut Rng::new(cfg.seed));
    for _ in 0..cfg.warmup {
        forward_sharded(net, &x, threads)?;
    }
    let mut timings = Vec::with_capacity(cfg.iters);
    for _ in 0..cfg.iters {
        let t = Instant::now();
        forward_sharded(net, &x, threads)?;
        timings.push(t.elapsed().as_secs_f64() * 1e3);
    }
    Ok(BenchReport::from_timings(
        spec_digest(spec)?,
        count_params(spec)? as u64,
        count_macs(spec)?,
        cfg,
        threads,
        timings,
    ))
}
