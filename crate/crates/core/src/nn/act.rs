use crate::error::{Error, Result};
use crate::real::Real;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Sigmoid,
}

#[derive(Debug, Clone)]
pub struct ActTape<E: Real = f32> {
    kind: Activation,
    /// relu: the input; sigmoid: the output
    saved: Tensor<E>,
}

impl<E: Real> ActTape<E> {
    /// For relu, the smallest `|x|`, i.e. the distance to the kink.
    pub fn kink_margin(&self) -> E {
        match self.kind {
            Activation::Relu => self.saved.data().iter().fold(E::infinity(), |m, v| m.min(v.abs())),
            Activation::Sigmoid => E::infinity(),
        }
    }
}

#[inline]
pub fn sigmoid<E: Real>(v: E) -> E {
    if v >= E::zero() {
        E::one() / (E::one() + (-v).exp())
    } else {
        let e = v.exp();
        e / (E::one() + e)
    }
}

pub fn act<E: Real>(x: &Tensor<E>, kind: Activation) -> Tensor<E> {
    match kind {
        Activation::Relu => x.map(|v| v.max(E::zero())),
        Activation::Sigmoid => x.map(sigmoid),
    }
}

pub fn act_taped<E: Real>(x: &Tensor<E>, kind: Activation) -> (Tensor<E>, ActTape<E>) {
    let y = act(x, kind);
    let saved = match kind {
        Activation::Relu => x.clone(),
        Activation::Sigmoid => y.clone(),
    };
    (y, ActTape { kind, saved })
}

pub fn act_backward<E: Real>(tape: &ActTape<E>, grad_out: &Tensor<E>) -> Result<Tensor<E>> {
    grad_out.expect_shape(tape.saved.shape()).map_err(|_| {
        Error::arg("act_backward: gradient does not match tape")
    })?;
    let data = grad_out
        .data()
        .iter()
        .zip(tape.saved.data())
        .map(|(g, s)| match tape.kind {
            Activation::Relu => {
                if *s > E::zero() {
                    *g
                } else {
                    E::zero()
                }
            }
            Activation::Sigmoid => *g * *s * (E::one() - *s),
        })
        .collect();
    Ok(Tensor::from_raw(grad_out.shape(), data))
}
