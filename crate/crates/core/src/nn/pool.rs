//! Max pooling (condenser), global average pooling (head) and
//! nearest-neighbour upsampling (expansion).

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::real::Real;
use crate::tensor::{Shape, Tensor};

#[derive(Debug, Clone)]
pub struct MaxPoolTape<E: Real = f32> {
    in_shape: Shape,
    /// Flat input index of the winning element for every output element.
    argmax: Vec<u32>,
    /// Smallest gap between a window's maximum and its runner-up, ignoring
    /// windows whose two largest values are both exactly zero.
    min_gap: E,
}

impl<E: Real> MaxPoolTape<E> {
    /// Distance to the nearest tie; finite differences are unreliable when
    /// a perturbation can exceed this.
    pub fn kink_margin(&self) -> E {
        self.min_gap
    }
}

fn pool_shape(x: Shape, k: usize, stride: usize) -> Result<Shape> {
    if k == 0 || stride == 0 {
        return Err(Error::arg("maxpool2d: window and stride must be positive"));
    }
    if x.h < k || x.w < k {
        return Err(Error::arg("maxpool2d: window larger than input"));
    }
    if x.h % stride != 0 || x.w % stride != 0 {
        return Err(Error::arg("maxpool2d: h and w must be divisible by stride"));
    }
    Shape::new(x.n, x.c, (x.h - k) / stride + 1, (x.w - k) / stride + 1)
}

fn maxpool_impl<E: Real>(
    x: &Tensor<E>,
    k: usize,
    stride: usize,
    record: bool,
) -> Result<(Tensor<E>, Option<MaxPoolTape<E>>)> {
    let s = x.shape();
    let os = pool_shape(s, k, stride)?;
    if x.numel() > u32::MAX as usize {
        return Err(Error::arg("maxpool2d: tensor too large"));
    }
    let mut out = Vec::with_capacity(os.numel());
    let mut argmax = if record { Vec::with_capacity(os.numel()) } else { Vec::new() };
    let mut min_gap = E::infinity();
    let data = x.data();
    for nc in 0..s.n * s.c {
        let base = nc * s.plane();
        for oy in 0..os.h {
            for ox in 0..os.w {
                let mut best = E::neg_infinity();
                let mut second = E::neg_infinity();
                let mut best_i = 0;
                // Row-major scan with strict comparison: first index wins ties.
                for ky in 0..k {
                    let row = base + (oy * stride + ky) * s.w + ox * stride;
                    for kx in 0..k {
                        let v = data[row + kx];
                        if v > best {
                            second = best;
                            best = v;
                            best_i = row + kx;
                        } else if v > second {
                            second = v;
                        }
                    }
                }
                out.push(best);
                if record {
                    argmax.push(best_i as u32);
                    // exact ties at zero are relu plateaus, not kinks
                    if k > 1 && !(best == second && best == E::zero()) {
                        min_gap = min_gap.min(best - second);
                    }
                }
            }
        }
    }
    let y = Tensor::from_raw(os, out);
    let tape = record.then_some(MaxPoolTape {
        in_shape: s,
        argmax,
        min_gap,
    });
    Ok((y, tape))
}

/// Windowed max with window `k` and `stride`, no padding.
pub fn maxpool2d<E: Real>(x: &Tensor<E>, k: usize, stride: usize) -> Result<Tensor<E>> {
    Ok(maxpool_impl(x, k, stride, false)?.0)
}

pub fn maxpool2d_taped<E: Real>(
    x: &Tensor<E>,
    k: usize,
    stride: usize,
) -> Result<(Tensor<E>, MaxPoolTape<E>)> {
    let (y, t) = maxpool_impl(x, k, stride, true)?;
    Ok((y, t.expect("recorded")))
}

/// Routes each output gradient to its window's argmax.
pub fn maxpool2d_backward<E: Real>(tape: &MaxPoolTape<E>, grad_out: &Tensor<E>) -> Result<Tensor<E>> {
    if grad_out.numel() != tape.argmax.len() || grad_out.shape().n != tape.in_shape.n {
        return Err(Error::arg("maxpool2d_backward: gradient does not match tape"));
    }
    let mut gx = vec![E::zero(); tape.in_shape.numel()];
    for (g, &i) in grad_out.data().iter().zip(&tape.argmax) {
        gx[i as usize] += *g;
    }
    Ok(Tensor::from_raw(tape.in_shape, gx))
}

/// Spatial mean per channel; output `(n, c, 1, 1)`.
pub fn avgpool_global<E: Real>(x: &Tensor<E>) -> Tensor<E> {
    let s = x.shape();
    let inv = E::one() / E::of_usize(s.plane());
    let data = (0..s.n * s.c)
        .map(|nc| x.data()[nc * s.plane()..(nc + 1) * s.plane()].iter().copied().sum::<E>() * inv)
        .collect();
    Tensor::from_raw(Shape { h: 1, w: 1, ..s }, data)
}

pub fn avgpool_global_backward<E: Real>(in_shape: Shape, grad_out: &Tensor<E>) -> Result<Tensor<E>> {
    grad_out.expect_shape(Shape {
        h: 1,
        w: 1,
        ..in_shape
    })?;
    let plane = in_shape.plane();
    let inv = E::one() / E::of_usize(plane);
    let mut gx = Vec::with_capacity(in_shape.numel());
    for g in grad_out.data() {
        gx.extend(core::iter::repeat_n(*g * inv, plane));
    }
    Ok(Tensor::from_raw(in_shape, gx))
}

/// Replicates every pixel into a `factor × factor` block.
pub fn upsample_nearest<E: Real>(x: &Tensor<E>, factor: usize) -> Result<Tensor<E>> {
    if factor == 0 {
        return Err(Error::arg("upsample_nearest: factor must be at least 1"));
    }
    let s = x.shape();
    let os = Shape::new(s.n, s.c, s.h * factor, s.w * factor)?;
    let mut out = Vec::with_capacity(os.numel());
    for nc in 0..s.n * s.c {
        let plane = &x.data()[nc * s.plane()..(nc + 1) * s.plane()];
        for oy in 0..os.h {
            let row = &plane[(oy / factor) * s.w..(oy / factor + 1) * s.w];
            for ox in 0..os.w {
                out.push(row[ox / factor]);
            }
        }
    }
    Ok(Tensor::from_raw(os, out))
}

/// Sums each `factor × factor` block of the gradient.
pub fn upsample_nearest_backward<E: Real>(
    in_shape: Shape,
    factor: usize,
    grad_out: &Tensor<E>,
) -> Result<Tensor<E>> {
    let os = Shape::new(in_shape.n, in_shape.c, in_shape.h * factor, in_shape.w * factor)?;
    grad_out.expect_shape(os)?;
    let mut gx = vec![E::zero(); in_shape.numel()];
    for nc in 0..in_shape.n * in_shape.c {
        let g = &grad_out.data()[nc * os.plane()..(nc + 1) * os.plane()];
        let dst = &mut gx[nc * in_shape.plane()..(nc + 1) * in_shape.plane()];
        for oy in 0..os.h {
            for ox in 0..os.w {
                dst[(oy / factor) * in_shape.w + ox / factor] += g[oy * os.w + ox];
            }
        }
    }
    Ok(Tensor::from_raw(in_shape, gx))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;

    fn sh(n: usize, c: usize, h: usize, w: usize) -> Shape {
        Shape::new(n, c, h, w).unwrap()
    }

    fn ramp() -> Tensor<f32> {
        Tensor::from_vec(sh(1, 1, 4, 4), (1..=16).map(|v| v as f32).collect()).unwrap()
    }

    #[test]
    fn maxpool_2x2() {
        let y = maxpool2d(&ramp(), 2, 2).unwrap();
        assert_eq!(y.shape(), sh(1, 1, 2, 2));
        assert_eq!(y.data(), &[6.0, 8.0, 14.0, 16.0]);
    }

    #[test]
    fn maxpool_k1_identity() {
        let x = Tensor::<f32>::uniform(sh(2, 3, 4, 6), -1.0, 1.0, &mut Rng::new(1));
        assert_eq!(maxpool2d(&x, 1, 1).unwrap(), x);
    }

    #[test]
    fn maxpool_backward_routes_to_argmax_and_conserves_mass() {
        let x = Tensor::<f64>::uniform(sh(2, 2, 6, 6), -1.0, 1.0, &mut Rng::new(2));
        let (y, tape) = maxpool2d_taped(&x, 2, 2).unwrap();
        let g = Tensor::ones(y.shape());
        let gx = maxpool2d_backward(&tape, &g).unwrap();
        assert_eq!(gx.sum(), g.sum());
        for (i, v) in gx.data().iter().enumerate() {
            if *v != 0.0 {
                // each routed cell holds its window's max
                assert!(y.data().contains(&x.data()[i]));
            }
        }
    }

    #[test]
    fn maxpool_ties_go_to_first_index() {
        let x = Tensor::<f32>::full(sh(1, 1, 2, 2), 1.0);
        let (_, tape) = maxpool2d_taped(&x, 2, 2).unwrap();
        let gx = maxpool2d_backward(&tape, &Tensor::ones(sh(1, 1, 1, 1))).unwrap();
        assert_eq!(gx.data(), &[1.0, 0.0, 0.0, 0.0]);
        assert_eq!(tape.kink_margin(), 0.0);
    }

    #[test]
    fn maxpool_rejects_bad_windows() {
        assert!(maxpool2d(&ramp(), 5, 1).is_err());
        assert!(maxpool2d(&ramp(), 3, 3).is_err());
        assert!(maxpool2d(&ramp(), 0, 1).is_err());
    }

    #[test]
    fn global_average() {
        let c = Tensor::<f32>::full(sh(2, 3, 8, 8), 2.5);
        let y = avgpool_global(&c);
        assert_eq!(y.shape(), sh(2, 3, 1, 1));
        assert!(y.data().iter().all(|v| *v == 2.5));
        assert_eq!(avgpool_global(&ramp()).data(), &[8.5]);
    }

    #[test]
    fn global_average_backward_spreads_evenly() {
        let g = Tensor::<f64>::full(sh(1, 2, 1, 1), 4.0);
        let gx = avgpool_global_backward(sh(1, 2, 2, 2), &g).unwrap();
        assert!(gx.data().iter().all(|v| *v == 1.0));
    }

    #[test]
    fn upsample_examples() {
        let x = Tensor::from_vec(sh(1, 1, 2, 2), alloc::vec![1.0f32, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(upsample_nearest(&x, 1).unwrap(), x);
        let y = upsample_nearest(&x, 2).unwrap();
        assert_eq!(
            y.data(),
            &[1., 1., 2., 2., 1., 1., 2., 2., 3., 3., 4., 4., 3., 3., 4., 4.]
        );
        let gx = upsample_nearest_backward(x.shape(), 2, &Tensor::ones(y.shape())).unwrap();
        assert!(gx.data().iter().all(|v: &f32| *v == 4.0));
        assert!(upsample_nearest(&x, 0).is_err());
    }
}
