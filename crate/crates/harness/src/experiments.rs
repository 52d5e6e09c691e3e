//! Composite runs shared by the CLI and the acceptance suite: the
//! train-and-measure evaluator used by exploration, and the shift-robustness
//! comparison.

use condenser_core::aads::shift_consistency;
use condenser_core::backbone::{count_macs, count_params, ArchitectureSpec, Network};
use condenser_core::explorer::{NetScoreWeights, PerfRecord};
use condenser_core::{Rng, Tensor};

use crate::bench::{bench, BenchConfig};
use crate::dataset::Dataset;
use crate::error::Result;
use crate::report::RobustnessRow;
use crate::specio::spec_digest;
use crate::train::{evaluate, train, TrainConfig};

/// Trains a candidate briefly and measures it.
///
/// The network is initialized and trained from `seed`; accuracy is top-1
/// on `val`; latency is the mean per-image time of a batch-1 benchmark.
pub struct TrainedEvaluator<'a> {
    pub train: &'a Dataset,
    pub val: &'a Dataset,
    pub recipe: TrainConfig,
    pub weights: NetScoreWeights,
    pub bench: BenchConfig,
}

impl TrainedEvaluator<'_> {
    pub fn evaluate(&self, spec: &ArchitectureSpec, seed: u64) -> Result<PerfRecord> {
        let mut net = Network::build(spec.clone(), &mut Rng::new(seed))?;
        let cfg = TrainConfig {
            seed,
            ..self.recipe.clone()
        };
        if cfg.epochs > 0 {
            train(&mut net, self.train, &cfg, None)?;
        }
        let a = evaluate(&net, self.val, 1)?;
        let latency = bench(&net, &self.bench)?.latency_per_image_ms();
        Ok(PerfRecord::new(
            a,
            count_params(spec)? as u64,
            count_macs(spec)?,
            latency,
            self.weights,
        )?)
    }
}

/// Per-seed outcome of one robustness run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ShiftRun {
    pub seed: u64,
    pub top1: f64,
    pub consistency: f64,
}

const SHIFT_BATCH: usize = 64;

/// Trains `spec` once per seed and measures top-1 and shift consistency on
/// `test`. Seed `s` drives initialization, batch order and the shifts.
pub fn shift_runs(
    spec: &ArchitectureSpec,
    train_set: &Dataset,
    test: &Dataset,
    recipe: &TrainConfig,
    seeds: &[u64],
    max_shift: usize,
) -> Result<Vec<ShiftRun>> {
    let batches: Vec<Tensor<f32>> = (0..test.len())
        .step_by(SHIFT_BATCH)
        .map(|s| test.images.slice_batch(s, SHIFT_BATCH.min(test.len() - s)))
        .collect::<Result<_, _>>()?;
    seeds
        .iter()
        .map(|&seed| {
            let mut net = Network::build(spec.clone(), &mut Rng::new(seed))?;
            let cfg = TrainConfig {
                seed,
                ..recipe.clone()
            };
            train(&mut net, train_set, &cfg, None)?;
            let top1 = evaluate(&net, test, 1)?;
            let consistency = shift_consistency(|x| net.forward(x), &batches, max_shift, &mut Rng::new(seed))?;
            Ok(ShiftRun {
                seed,
                top1,
                consistency,
            })
        })
        .collect()
}

/// Summarizes [`shift_runs`] for a named variant.
pub fn robustness_row(variant: &str, spec: &ArchitectureSpec, runs: &[ShiftRun], max_shift: usize) -> Result<RobustnessRow> {
    let c: Vec<f64> = runs.iter().map(|r| r.consistency).collect();
    let t: Vec<f64> = runs.iter().map(|r| r.top1).collect();
    RobustnessRow::new(variant, spec_digest(spec)?, max_shift, &c, &t)
}
