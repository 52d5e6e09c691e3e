//! SGD training and top-1 evaluation.

use std::time::Instant;

use condenser_core::aads::argmax_per_sample;
use condenser_core::backbone::Network;
use condenser_core::nn::{softmax_xent, softmax_xent_backward};
use condenser_core::{Rng, Tensor};
use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::error::{HarnessError, Result};

/// True when `CONDENSER_DETERMINISTIC=1` is set.
pub fn deterministic_env() -> bool {
    std::env::var("CONDENSER_DETERMINISTIC").is_ok_and(|v| v == "1")
}

/// Thread count actually used: always 1 in deterministic mode.
pub fn effective_threads(requested: usize) -> usize {
    if deterministic_env() {
        1
    } else {
        requested.max(1)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Schedule {
    Constant,
    /// Half-cosine decay from `lr` to zero over all steps.
    Cosine,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub schedule: Schedule,
    /// Stop after the first epoch whose monitored top-1 reaches this percent.
    #[serde(default)]
    pub target_top1: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 0.05,
            momentum: 0.9,
            weight_decay: 5e-4,
            epochs: 20,
            batch_size: 32,
            seed: 0,
            schedule: Schedule::Cosine,
            target_top1: None,
        }
    }
}

impl TrainConfig {
    pub fn check(&self) -> Result<()> {
        let bad = |m: &str| Err(HarnessError::Usage(format!("train config: {m}")));
        if !(self.lr.is_finite() && self.lr >= 0.0) {
            return bad("lr must be finite and non-negative");
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad("momentum must lie in [0, 1)");
        }
        if !(self.weight_decay.is_finite() && self.weight_decay >= 0.0) {
            return bad("weight_decay must be finite and non-negative");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1");
        }
        Ok(())
    }

    fn lr_at(&self, step: usize, total: usize) -> f64 {
        match self.schedule {
            Schedule::Constant => self.lr,
            Schedule::Cosine => 0.5 * self.lr * (1.0 + (std::f64::consts::PI * step as f64 / total as f64).cos()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub loss: f64,
    pub train_top1: f64,
    /// Top-1 on the monitor set, when one was given.
    pub eval_top1: Option<f64>,
    pub lr: f64,
    pub seconds: f64,
}

/// SGD with heavy-ball momentum. Weight decay is added to the gradient of
/// weight slots only; running statistics are never touched.
pub struct Sgd {
    velocity: Vec<Tensor<f32>>,
    momentum: f32,
    weight_decay: f32,
}

impl Sgd {
    pub fn new(net: &Network<f32>, momentum: f64, weight_decay: f64) -> Self {
        Sgd {
            velocity: net.params().zeros_like(),
            momentum: momentum as f32,
            weight_decay: weight_decay as f32,
        }
    }

    pub fn step(&mut self, net: &mut Network<f32>, grads: &[Tensor<f32>], lr: f64) {
        let lr = lr as f32;
        let kinds: Vec<_> = net.params().slots().iter().map(|s| s.kind).collect();
        let params = net.params_mut().tensors_mut();
        for (((w, g), v), kind) in params.iter_mut().zip(grads).zip(&mut self.velocity).zip(kinds) {
            if !kind.trainable() {
                continue;
            }
            let wd = if kind.decays() { self.weight_decay } else { 0.0 };
            for ((w, g), v) in w.data_mut().iter_mut().zip(g.data()).zip(v.data_mut()) {
                *v = self.momentum * *v + *g + wd * *w;
                *w -= lr * *v;
            }
        }
    }
}

/// Trains `net` in place; returns one record per completed epoch.
///
/// Batches are drawn from a fresh permutation each epoch, seeded from
/// `cfg.seed` and the epoch number; a trailing partial batch is kept. The
/// loop runs on the calling thread, so identical inputs give bitwise
/// identical parameters. `monitor`, when given, is evaluated after every
/// epoch and drives `cfg.target_top1`.
pub fn train(net: &mut Network<f32>, data: &Dataset, cfg: &TrainConfig, monitor: Option<&Dataset>) -> Result<Vec<EpochMetrics>> {
    cfg.check()?;
    if data.is_empty() {
        return Err(HarnessError::Dataset("cannot train on an empty dataset".into()));
    }
    check_compatible(net, data)?;
    let n = data.len();
    let per_epoch = n.div_ceil(cfg.batch_size);
    let total = per_epoch * cfg.epochs;
    let mut sgd = Sgd::new(net, cfg.momentum, cfg.weight_decay);
    let root = Rng::new(cfg.seed);
    let mut history = Vec::new();
    for epoch in 0..cfg.epochs {
        let started = Instant::now();
        let mut order: Vec<usize> = (0..n).collect();
        root.fork(epoch as u64).shuffle(&mut order);
        let (mut loss_sum, mut correct) = (0.0f64, 0usize);
        let mut lr = cfg.lr;
        for (b, idx) in order.chunks(cfg.batch_size).enumerate() {
            let step = epoch * per_epoch + b;
            lr = cfg.lr_at(step, total);
            let (x, y) = data.batch(idx)?;
            let (logits, tape) = net.forward_train(&x)?;
            let (loss, xt) = softmax_xent(&logits, &y)?;
            let loss = loss as f64;
            if !loss.is_finite() {
                return Err(HarnessError::Divergence { epoch, step: b, loss });
            }
            loss_sum += loss * idx.len() as f64;
            correct += argmax_per_sample(&logits).iter().zip(&y).filter(|(p, t)| p == t).count();
            let grads = net.backward(&tape, &softmax_xent_backward(&xt))?;
            if grads.params.iter().any(|g| !g.all_finite()) {
                return Err(HarnessError::Divergence { epoch, step: b, loss });
            }
            sgd.step(net, &grads.params, lr);
        }
        let eval_top1 = monitor.map(|m| evaluate(net, m, 1)).transpose()?;
        history.push(EpochMetrics {
            epoch: epoch + 1,
            loss: loss_sum / n as f64,
            train_top1: 100.0 * correct as f64 / n as f64,
            eval_top1,
            lr,
            seconds: started.elapsed().as_secs_f64(),
        });
        if let (Some(target), Some(acc)) = (cfg.target_top1, eval_top1) {
            if acc >= target {
                break;
            }
        }
    }
    Ok(history)
}

fn check_compatible(net: &Network<f32>, data: &Dataset) -> Result<()> {
    let spec = net.spec();
    if data.resolution() != spec.input_res {
        return Err(HarnessError::Dataset(format!(
            "dataset resolution {:?} does not match the architecture input {:?}",
            data.resolution(),
            spec.input_res
        )));
    }
    if data.num_classes > spec.num_classes {
        return Err(HarnessError::Dataset(format!(
            "dataset has {} classes but the head predicts {}",
            data.num_classes, spec.num_classes
        )));
    }
    Ok(())
}

const EVAL_BATCH: usize = 64;

/// Predicted class per sample (lowest index on ties), in dataset order.
///
/// Inference is per sample, so the result does not depend on batching or on
/// `threads`, which splits the dataset into contiguous shards.
pub fn predict(net: &Network<f32>, data: &Dataset, threads: usize) -> Result<Vec<usize>> {
    if data.is_empty() {
        return Err(HarnessError::Dataset("cannot evaluate an empty dataset".into()));
    }
    check_compatible(net, data)?;
    let n = data.len();
    let threads = effective_threads(threads).min(n);
    let shard = n.div_ceil(threads);
    let run = |start: usize, end: usize| -> Result<Vec<usize>> {
        let mut out = Vec::with_capacity(end - start);
        let mut i = start;
        while i < end {
            let len = EVAL_BATCH.min(end - i);
            let (x, _) = data.range(i, len)?;
            out.extend(argmax_per_sample(&net.forward(&x)?));
            i += len;
        }
        Ok(out)
    };
    if threads == 1 {
        return run(0, n);
    }
    std::thread::scope(|s| {
        let handles: Vec<_> = (0..n)
            .step_by(shard)
            .map(|start| {
                let run = &run;
                s.spawn(move || run(start, (start + shard).min(n)))
            })
            .collect();
        let mut out = Vec::with_capacity(n);
        for h in handles {
            out.extend(h.join().expect("evaluation worker panicked")?);
        }
        Ok(out)
    })
}

/// Top-1 accuracy in percent.
pub fn evaluate(net: &Network<f32>, data: &Dataset, threads: usize) -> Result<f64> {
    let pred = predict(net, data, threads)?;
    let hits = pred.iter().zip(&data.labels).filter(|(p, t)| p == t).count();
    Ok(100.0 * hits as f64 / data.len() as f64)
}
