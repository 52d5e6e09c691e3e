//! Batch normalization over `(n, h, w)` per channel.

use alloc::vec;
use alloc::vec::Vec;



use crate::error::{Error, Result};
use crate::real::Real;
use crate::tensor::{Shape, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Normalize with batch statistics and update the running estimates.
    Train,
    /// Normalize with the running estimates.
    Eval,
}

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

#[derive(Debug, Clone, PartialEq)]
pub struct BnParams<E: Real = f32> {
    pub gamma: Tensor<E>,
    pub beta: Tensor<E>,
    pub running_mean: Tensor<E>,
    pub running_var: Tensor<E>,
    pub eps: f64,
    /// running ← (1 − momentum)·running + momentum·batch
    pub momentum: f64,
}

impl<E: Real> BnParams<E> {
    /// `gamma = 1`, `beta = 0`, running mean 0 and variance 1.
    pub fn identity(c: usize) -> Result<Self> {
        let s = Shape::vector(c)?;
        Ok(BnParams {
            gamma: Tensor::ones(s),
            beta: Tensor::zeros(s),
            running_mean: Tensor::zeros(s),
            running_var: Tensor::ones(s),
            eps: BN_EPS,
            momentum: BN_MOMENTUM,
        })
    }

    pub fn channels(&self) -> usize {
        self.gamma.numel()
    }

    fn check(&self, x: Shape) -> Result<()> {
        let c = self.channels();
        let v = Shape::vector(c)?;
        self.beta.expect_shape(v)?;
        self.running_mean.expect_shape(v)?;
        self.running_var.expect_shape(v)?;
        if x.c != c {
            return Err(Error::arg(alloc::format!(
                "batchnorm: input has {} channels, parameters have {c}",
                x.c
            )));
        }
        if !(self.eps > 0.0) || !(0.0 < self.momentum && self.momentum < 1.0) {
            return Err(Error::arg("batchnorm: eps must be > 0 and momentum in (0, 1)"));
        }
        if self.running_var.data().iter().any(|v| *v < E::zero()) {
            return Err(Error::arg("batchnorm: running_var must be non-negative"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct BnTape<E: Real = f32> {
    mode: Mode,
    xhat: Tensor<E>,
    inv_std: Vec<E>,
    gamma: Vec<E>,
}

#[derive(Debug, Clone)]
pub struct BnGrads<E: Real = f32> {
    pub x: Tensor<E>,
    pub gamma: Tensor<E>,
    pub beta: Tensor<E>,
}

fn bn_impl<E: Real>(x: &Tensor<E>, p: &mut BnParams<E>, mode: Mode) -> Result<(Tensor<E>, BnTape<E>)> {
    let s = x.shape();
    p.check(s)?;
    let plane = s.plane();
    let m = s.n * plane;
    let (mean, var): (Vec<f64>, Vec<f64>) = match mode {
        Mode::Train => {
            let mut mean = vec![0.0f64; s.c];
            let mut var = vec![0.0f64; s.c];
            for c in 0..s.c {
                let mut sum = 0.0;
                for n in 0..s.n {
                    sum += x.plane(n, c).iter().map(|v| v.as_f64()).sum::<f64>();
                }
                let mu = sum / m as f64;
                let mut sq = 0.0;
                for n in 0..s.n {
                    sq += x.plane(n, c).iter().map(|v| (v.as_f64() - mu) * (v.as_f64() - mu)).sum::<f64>();
                }
                mean[c] = mu;
                var[c] = sq / m as f64;
            }
            let mom = p.momentum;
            let unbias = if m > 1 { m as f64 / (m - 1) as f64 } else { 1.0 };
            for c in 0..s.c {
                let rm = &mut p.running_mean.data_mut()[c];
                *rm = E::of((1.0 - mom) * rm.as_f64() + mom * mean[c]);
                let rv = &mut p.running_var.data_mut()[c];
                *rv = E::of((1.0 - mom) * rv.as_f64() + mom * var[c] * unbias);
            }
            (mean, var)
        }
        Mode::Eval => (
            p.running_mean.data().iter().map(|v| v.as_f64()).collect(),
            p.running_var.data().iter().map(|v| v.as_f64()).collect(),
        ),
    };
    let inv_std: Vec<E> = var.iter().map(|v| E::of(1.0 / libm::sqrt(v + p.eps))).collect();
    let mut xhat = Vec::with_capacity(s.numel());
    let mut y = Vec::with_capacity(s.numel());
    for n in 0..s.n {
        for c in 0..s.c {
            let (mu, is) = (E::of(mean[c]), inv_std[c]);
            let (g, b) = (p.gamma.data()[c], p.beta.data()[c]);
            for v in x.plane(n, c) {
                let xh = (*v - mu) * is;
                xhat.push(xh);
                y.push(g * xh + b);
            }
        }
    }
    let tape = BnTape {
        mode,
        xhat: Tensor::from_raw(s, xhat),
        inv_std,
        gamma: p.gamma.data().to_vec(),
    };
    Ok((Tensor::from_raw(s, y), tape))
}

/// In [`Mode::Train`] this also updates `p`'s running statistics.
pub fn batchnorm<E: Real>(x: &Tensor<E>, p: &mut BnParams<E>, mode: Mode) -> Result<Tensor<E>> {
    Ok(bn_impl(x, p, mode)?.0)
}

pub fn batchnorm_taped<E: Real>(
    x: &Tensor<E>,
    p: &mut BnParams<E>,
    mode: Mode,
) -> Result<(Tensor<E>, BnTape<E>)> {
    bn_impl(x, p, mode)
}

pub fn batchnorm_backward<E: Real>(tape: &BnTape<E>, grad_out: &Tensor<E>) -> Result<BnGrads<E>> {
    let s = tape.xhat.shape();
    grad_out.expect_shape(s)?;
    let m = E::of_usize(s.n * s.plane());
    let vs = Shape::vector(s.c)?;
    let mut gg = vec![E::zero(); s.c];
    let mut gb = vec![E::zero(); s.c];
    for n in 0..s.n {
        for c in 0..s.c {
            let g = grad_out.plane(n, c);
            let xh = tape.xhat.plane(n, c);
            gb[c] += g.iter().copied().sum::<E>();
            gg[c] += crate::real::dot(g, xh);
        }
    }
    let mut gx = Vec::with_capacity(s.numel());
    for n in 0..s.n {
        for c in 0..s.c {
            let k = tape.gamma[c] * tape.inv_std[c];
            let g = grad_out.plane(n, c);
            match tape.mode {
                Mode::Eval => gx.extend(g.iter().map(|v| *v * k)),
                Mode::Train => {
                    let xh = tape.xhat.plane(n, c);
                    let (sg, sgx) = (gb[c] / m, gg[c] / m);
                    gx.extend(g.iter().zip(xh).map(|(gv, xv)| k * (*gv - sg - *xv * sgx)));
                }
            }
        }
    }
    Ok(BnGrads {
        x: Tensor::from_raw(s, gx),
        gamma: Tensor::from_raw(vs, gg),
        beta: Tensor::from_raw(vs, gb),
    })
}
