//! Softmax cross-entropy over class logits `(n, k, 1, 1)`.

use alloc::vec::Vec;


use crate::error::{Error, Result};
use crate::real::Real;
use crate::tensor::Tensor;

#[derive(Debug, Clone)]
pub struct XentTape<E: Real = f32> {
    probs: Tensor<E>,
    labels: Vec<usize>,
}

impl<E: Real> XentTape<E> {
    pub fn probs(&self) -> &Tensor<E> {
        &self.probs
    }
}

/// Mean negative log-likelihood over the batch.
pub fn softmax_xent<E: Real>(logits: &Tensor<E>, labels: &[usize]) -> Result<(E, XentTape<E>)> {
    let s = logits.shape();
    let k = s.c * s.plane();
    if labels.len() != s.n {
        return Err(Error::arg("softmax_xent: one label per sample required"));
    }
    if let Some(bad) = labels.iter().find(|&&l| l >= k) {
        return Err(Error::arg(alloc::format!(
            "softmax_xent: class index {bad} out of range for {k} classes"
        )));
    }
    let mut probs = Vec::with_capacity(logits.numel());
    let mut loss = 0.0f64;
    for (n, &label) in labels.iter().enumerate() {
        let row = &logits.data()[n * k..(n + 1) * k];
        let max = row.iter().fold(E::neg_infinity(), |m, v| m.max(*v));
        let sum: f64 = row.iter().map(|v| libm::exp((*v - max).as_f64())).sum();
        let log_z = max.as_f64() + libm::log(sum);
        loss += log_z - row[label].as_f64();
        probs.extend(row.iter().map(|v| E::of(libm::exp(v.as_f64() - log_z))));
    }
    let tape = XentTape {
        probs: Tensor::from_raw(s, probs),
        labels: labels.to_vec(),
    };
    Ok((E::of(loss / s.n as f64), tape))
}

/// Gradient of the mean loss: `(softmax − onehot) / batch`.
pub fn softmax_xent_backward<E: Real>(tape: &XentTape<E>) -> Tensor<E> {
    let s = tape.probs.shape();
    let k = s.c * s.plane();
    let inv_n = E::one() / E::of_usize(s.n);
    let mut g = tape.probs.data().to_vec();
    for (n, &l) in tape.labels.iter().enumerate() {
        g[n * k + l] -= E::one();
    }
    for v in g.iter_mut() {
        *v *= inv_n;
    }
    Tensor::from_raw(s, g)
}
