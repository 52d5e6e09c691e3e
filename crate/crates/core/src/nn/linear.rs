//! Fully connected layer over the flattened `c·h·w` features of each sample.

use alloc::vec;

use crate::error::{Error, Result};
use crate::real::{axpy, dot, Real};
use crate::tensor::{Shape, Tensor};

#[derive(Debug, Clone, PartialEq)]
pub struct LinearParams<E: Real = f32> {
    /// `(out, in, 1, 1)`
    pub weight: Tensor<E>,
    /// `(out, 1, 1, 1)`
    pub bias: Tensor<E>,
}

impl<E: Real> LinearParams<E> {
    pub fn new(weight: Tensor<E>, bias: Tensor<E>) -> Result<Self> {
        let w = weight.shape();
        if w.h != 1 || w.w != 1 {
            return Err(Error::arg("linear: weight must be (out, in, 1, 1)"));
        }
        bias.expect_shape(Shape::vector(w.n)?)?;
        Ok(LinearParams { weight, bias })
    }

    pub fn in_features(&self) -> usize {
        self.weight.shape().c
    }

    pub fn out_features(&self) -> usize {
        self.weight.shape().n
    }

    fn output_shape(&self, x: Shape) -> Result<Shape> {
        if x.c * x.plane() != self.in_features() {
            return Err(Error::arg(alloc::format!(
                "linear: input has {} features, weight expects {}",
                x.c * x.plane(),
                self.in_features()
            )));
        }
        Shape::new(x.n, self.out_features(), 1, 1)
    }
}

#[derive(Debug, Clone)]
pub struct LinearTape<E: Real = f32> {
    x: Tensor<E>,
    params: LinearParams<E>,
}

#[derive(Debug, Clone)]
pub struct LinearGrads<E: Real = f32> {
    pub x: Tensor<E>,
    pub weight: Tensor<E>,
    pub bias: Tensor<E>,
}

pub fn linear<E: Real>(x: &Tensor<E>, p: &LinearParams<E>) -> Result<Tensor<E>> {
    let os = p.output_shape(x.shape())?;
    let (fin, fout) = (p.in_features(), p.out_features());
    let w = p.weight.data();
    let mut out = vec![E::zero(); os.numel()];
    for n in 0..os.n {
        let xi = &x.data()[n * fin..(n + 1) * fin];
        for o in 0..fout {
            out[n * fout + o] = p.bias.data()[o] + dot(&w[o * fin..(o + 1) * fin], xi);
        }
    }
    Ok(Tensor::from_raw(os, out))
}

pub fn linear_taped<E: Real>(x: &Tensor<E>, p: &LinearParams<E>) -> Result<(Tensor<E>, LinearTape<E>)> {
    let y = linear(x, p)?;
    Ok((
        y,
        LinearTape {
            x: x.clone(),
            params: p.clone(),
        },
    ))
}

pub fn linear_backward<E: Real>(tape: &LinearTape<E>, grad_out: &Tensor<E>) -> Result<LinearGrads<E>> {
    let p = &tape.params;
    let os = p.output_shape(tape.x.shape())?;
    grad_out.expect_shape(os)?;
    let (fin, fout) = (p.in_features(), p.out_features());
    let w = p.weight.data();
    let mut gx = vec![E::zero(); tape.x.numel()];
    let mut gw = vec![E::zero(); p.weight.numel()];
    let mut gb = vec![E::zero(); fout];
    for n in 0..os.n {
        let xi = &tape.x.data()[n * fin..(n + 1) * fin];
        let gxi = &mut gx[n * fin..(n + 1) * fin];
        for o in 0..fout {
            let g = grad_out.data()[n * fout + o];
            gb[o] += g;
            axpy(&mut gw[o * fin..(o + 1) * fin], g, xi);
            axpy(gxi, g, &w[o * fin..(o + 1) * fin]);
        }
    }
    Ok(LinearGrads {
        x: Tensor::from_raw(tape.x.shape(), gx),
        weight: Tensor::from_raw(p.weight.shape(), gw),
        bias: Tensor::from_raw(p.bias.shape(), gb),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn affine_map() {
        let w = Tensor::from_vec(Shape::new(2, 3, 1, 1).unwrap(), alloc::vec![1.0f64, 2.0, 3.0, -1.0, 0.0, 1.0])
            .unwrap();
        let b = Tensor::from_vec(Shape::vector(2).unwrap(), alloc::vec![0.5, -0.5]).unwrap();
        let p = LinearParams::new(w, b).unwrap();
        let x = Tensor::from_vec(Shape::new(1, 3, 1, 1).unwrap(), alloc::vec![1.0, 1.0, 2.0]).unwrap();
        assert_eq!(linear(&x, &p).unwrap().data(), &[9.5, 0.5]);
        let bad = Tensor::zeros(Shape::new(1, 2, 1, 1).unwrap());
        assert!(linear(&bad, &p).is_err());
    }
}
