//! 2-D convolution via per-sample, per-group im2col.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::real::{axpy, dot, Real};
use crate::tensor::{Shape, Tensor};

#[derive(Debug, Clone, PartialEq)]
pub struct ConvParams<E: Real = f32> {
    /// `(c_out, c_in / groups, kh, kw)`
    pub weight: Tensor<E>,
    /// `(c_out, 1, 1, 1)`
    pub bias: Option<Tensor<E>>,
    pub stride: usize,
    pub pad: usize,
    pub groups: usize,
}

impl<E: Real> ConvParams<E> {
    pub fn new(
        weight: Tensor<E>,
        bias: Option<Tensor<E>>,
        stride: usize,
        pad: usize,
        groups: usize,
    ) -> Result<Self> {
        let p = ConvParams {
            weight,
            bias,
            stride,
            pad,
            groups,
        };
        p.check()?;
        Ok(p)
    }

    /// Same-padding convolution: `pad = (k - 1) / 2`.
    pub fn same(weight: Tensor<E>, bias: Option<Tensor<E>>, stride: usize, groups: usize) -> Result<Self> {
        let pad = (weight.shape().h - 1) / 2;
        Self::new(weight, bias, stride, pad, groups)
    }

    fn check(&self) -> Result<()> {
        let w = self.weight.shape();
        if self.groups == 0 || w.n % self.groups != 0 {
            return Err(Error::arg("conv2d: c_out must be divisible by groups"));
        }
        if w.h % 2 == 0 || w.w % 2 == 0 {
            return Err(Error::arg("conv2d: kernel sizes must be odd"));
        }
        if !(1..=2).contains(&self.stride) {
            return Err(Error::arg("conv2d: stride must be 1 or 2"));
        }
        if let Some(b) = &self.bias {
            b.expect_shape(Shape::vector(w.n)?)?;
        }
        Ok(())
    }

    pub fn c_out(&self) -> usize {
        self.weight.shape().n
    }

    pub fn c_in(&self) -> usize {
        self.weight.shape().c * self.groups
    }

    pub fn kernel(&self) -> (usize, usize) {
        let s = self.weight.shape();
        (s.h, s.w)
    }

    pub fn output_shape(&self, x: Shape) -> Result<Shape> {
        self.check()?;
        if x.c != self.c_in() {
            return Err(Error::arg(alloc::format!(
                "conv2d: input has {} channels, weight expects {}",
                x.c,
                self.c_in()
            )));
        }
        let (kh, kw) = self.kernel();
        if x.h + 2 * self.pad < kh || x.w + 2 * self.pad < kw {
            return Err(Error::arg("conv2d: kernel larger than padded input"));
        }
        let oh = (x.h + 2 * self.pad - kh) / self.stride + 1;
        let ow = (x.w + 2 * self.pad - kw) / self.stride + 1;
        Shape::new(x.n, self.c_out(), oh, ow)
    }

    fn is_pointwise_identity_layout(&self) -> bool {
        self.kernel() == (1, 1) && self.stride == 1 && self.pad == 0
    }
}

#[derive(Debug, Clone)]
pub struct ConvTape<E: Real = f32> {
    x: Tensor<E>,
    params: ConvParams<E>,
}

impl<E: Real> ConvTape<E> {
    pub fn params(&self) -> &ConvParams<E> {
        &self.params
    }
}

#[derive(Debug, Clone)]
pub struct ConvGrads<E: Real = f32> {
    pub x: Tensor<E>,
    pub weight: Tensor<E>,
    pub bias: Option<Tensor<E>>,
}

struct Geometry {
    cig: usize,
    cog: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    pad: usize,
    h: usize,
    w: usize,
    oh: usize,
    ow: usize,
}

impl Geometry {
    fn new<E: Real>(x: Shape, out: Shape, p: &ConvParams<E>) -> Self {
        let (kh, kw) = p.kernel();
        Geometry {
            cig: x.c / p.groups,
            cog: out.c / p.groups,
            kh,
            kw,
            stride: p.stride,
            pad: p.pad,
            h: x.h,
            w: x.w,
            oh: out.h,
            ow: out.w,
        }
    }

    fn k(&self) -> usize {
        self.cig * self.kh * self.kw
    }

    fn p(&self) -> usize {
        self.oh * self.ow
    }

    /// Valid output range `[lo, hi)` along one axis for kernel offset `kk`.
    fn valid(&self, kk: usize, len_in: usize, len_out: usize) -> (usize, usize) {
        // in = o * stride + kk - pad must lie in [0, len_in)
        let lo = if kk >= self.pad {
            0
        } else {
            (self.pad - kk).div_ceil(self.stride)
        };
        let hi = if len_in + self.pad > kk {
            ((len_in + self.pad - kk - 1) / self.stride + 1).min(len_out)
        } else {
            0
        };
        let lo = lo.min(len_out);
        (lo, hi.max(lo))
    }

    /// Fills `cols` (K × P) from the input channels `[c0, c0 + cig)` of one sample.
    fn im2col<E: Real>(&self, src: &[E], cols: &mut [E]) {
        let (p, plane) = (self.p(), self.h * self.w);
        for ci in 0..self.cig {
            let inp = &src[ci * plane..(ci + 1) * plane];
            for ky in 0..self.kh {
                let (ylo, yhi) = self.valid(ky, self.h, self.oh);
                for kx in 0..self.kw {
                    let (xlo, xhi) = self.valid(kx, self.w, self.ow);
                    let row = &mut cols[((ci * self.kh + ky) * self.kw + kx) * p..][..p];
                    row.fill(E::zero());
                    for oy in ylo..yhi {
                        let iy = oy * self.stride + ky - self.pad;
                        let dst = &mut row[oy * self.ow..(oy + 1) * self.ow];
                        let src_row = &inp[iy * self.w..(iy + 1) * self.w];
                        if xlo == xhi {
                            continue;
                        }
                        if self.stride == 1 {
                            let ix0 = xlo + kx - self.pad;
                            dst[xlo..xhi].copy_from_slice(&src_row[ix0..ix0 + (xhi - xlo)]);
                        } else {
                            for ox in xlo..xhi {
                                dst[ox] = src_row[ox * self.stride + kx - self.pad];
                            }
                        }
                    }
                }
            }
        }
    }

    /// Adjoint of [`im2col`]: accumulates `cols` into the input-shaped `dst`.
    fn col2im<E: Real>(&self, cols: &[E], dst: &mut [E]) {
        let (p, plane) = (self.p(), self.h * self.w);
        for ci in 0..self.cig {
            let out = &mut dst[ci * plane..(ci + 1) * plane];
            for ky in 0..self.kh {
                let (ylo, yhi) = self.valid(ky, self.h, self.oh);
                for kx in 0..self.kw {
                    let (xlo, xhi) = self.valid(kx, self.w, self.ow);
                    let row = &cols[((ci * self.kh + ky) * self.kw + kx) * p..][..p];
                    for oy in ylo..yhi {
                        let iy = oy * self.stride + ky - self.pad;
                        let src = &row[oy * self.ow..(oy + 1) * self.ow];
                        let dst_row = &mut out[iy * self.w..(iy + 1) * self.w];
                        for ox in xlo..xhi {
                            dst_row[ox * self.stride + kx - self.pad] += src[ox];
                        }
                    }
                }
            }
        }
    }
}

pub fn conv2d<E: Real>(x: &Tensor<E>, p: &ConvParams<E>) -> Result<Tensor<E>> {
    let out_shape = p.output_shape(x.shape())?;
    let g = Geometry::new(x.shape(), out_shape, p);
    let (k, np) = (g.k(), g.p());
    let in_plane = g.h * g.w;
    let wdata = p.weight.data();
    let pointwise = p.is_pointwise_identity_layout();
    let mut cols = if pointwise { Vec::new() } else { vec![E::zero(); k * np] };
    let mut out = vec![E::zero(); out_shape.numel()];
    for n in 0..out_shape.n {
        for grp in 0..p.groups {
            let src_start = (n * x.shape().c + grp * g.cig) * in_plane;
            let src = &x.data()[src_start..src_start + g.cig * in_plane];
            let cols: &[E] = if pointwise {
                src
            } else {
                g.im2col(src, &mut cols);
                &cols
            };
            for oc in grp * g.cog..(grp + 1) * g.cog {
                let dst = &mut out[(n * out_shape.c + oc) * np..][..np];
                if let Some(b) = &p.bias {
                    dst.fill(b.data()[oc]);
                }
                let wrow = &wdata[oc * k..(oc + 1) * k];
                for (kk, &wv) in wrow.iter().enumerate() {
                    axpy(dst, wv, &cols[kk * np..(kk + 1) * np]);
                }
            }
        }
    }
    Ok(Tensor::from_raw(out_shape, out))
}

pub fn conv2d_taped<E: Real>(x: &Tensor<E>, p: &ConvParams<E>) -> Result<(Tensor<E>, ConvTape<E>)> {
    let y = conv2d(x, p)?;
    Ok((
        y,
        ConvTape {
            x: x.clone(),
            params: p.clone(),
        },
    ))
}

pub fn conv2d_backward<E: Real>(tape: &ConvTape<E>, grad_out: &Tensor<E>) -> Result<ConvGrads<E>> {
    let p = &tape.params;
    let x = &tape.x;
    let out_shape = p.output_shape(x.shape())?;
    grad_out.expect_shape(out_shape)?;
    let g = Geometry::new(x.shape(), out_shape, p);
    let (k, np) = (g.k(), g.p());
    let in_plane = g.h * g.w;
    let wdata = p.weight.data();
    let gdata = grad_out.data();

    let mut gx = vec![E::zero(); x.numel()];
    let mut gw = vec![E::zero(); p.weight.numel()];
    let mut cols = vec![E::zero(); k * np];
    let mut gcols = vec![E::zero(); k * np];
    for n in 0..out_shape.n {
        for grp in 0..p.groups {
            let src_start = (n * x.shape().c + grp * g.cig) * in_plane;
            let src = &x.data()[src_start..src_start + g.cig * in_plane];
            g.im2col(src, &mut cols);
            gcols.fill(E::zero());
            for oc in grp * g.cog..(grp + 1) * g.cog {
                let go = &gdata[(n * out_shape.c + oc) * np..][..np];
                let wrow = &wdata[oc * k..(oc + 1) * k];
                let gwrow = &mut gw[oc * k..(oc + 1) * k];
                for kk in 0..k {
                    let col = &cols[kk * np..(kk + 1) * np];
                    gwrow[kk] += dot(go, col);
                    axpy(&mut gcols[kk * np..(kk + 1) * np], wrow[kk], go);
                }
            }
            g.col2im(&gcols, &mut gx[src_start..src_start + g.cig * in_plane]);
        }
    }
    let bias = match &p.bias {
        Some(b) => {
            let mut gb = vec![E::zero(); b.numel()];
            for n in 0..out_shape.n {
                for (oc, acc) in gb.iter_mut().enumerate() {
                    *acc += gdata[(n * out_shape.c + oc) * np..][..np].iter().copied().sum::<E>();
                }
            }
            Some(Tensor::from_raw(b.shape(), gb))
        }
        None => None,
    };
    Ok(ConvGrads {
        x: Tensor::from_raw(x.shape(), gx),
        weight: Tensor::from_raw(p.weight.shape(), gw),
        bias,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;

    fn sh(n: usize, c: usize, h: usize, w: usize) -> Shape {
        Shape::new(n, c, h, w).unwrap()
    }

    #[test]
    fn pointwise_identity_kernel() {
        let x = Tensor::<f32>::uniform(sh(2, 3, 5, 4), -1.0, 1.0, &mut Rng::new(1));
        let mut w = Tensor::zeros(sh(3, 3, 1, 1));
        for c in 0..3 {
            w.data_mut()[c * 3 + c] = 1.0;
        }
        let p = ConvParams::new(w, None, 1, 0, 1).unwrap();
        assert_eq!(conv2d(&x, &p).unwrap(), x);
    }

    #[test]
    fn box_filter_center_is_window_mean() {
        let x = Tensor::from_vec(sh(1, 1, 4, 4), (1..=16).map(|v| v as f32).collect()).unwrap();
        let w = Tensor::full(sh(1, 1, 3, 3), 1.0f32 / 9.0);
        let p = ConvParams::new(w, None, 1, 1, 1).unwrap();
        let y = conv2d(&x, &p).unwrap();
        assert_eq!(y.shape(), sh(1, 1, 4, 4));
        // window rows 0..3, cols 0..3 of 1..16: mean = 6
        assert!((y.at(0, 0, 1, 1) - 6.0).abs() < 1e-5);
    }

    #[test]
    fn depthwise_unit_weights_is_identity() {
        let x = Tensor::<f64>::uniform(sh(1, 4, 3, 3), -1.0, 1.0, &mut Rng::new(2));
        let w = Tensor::ones(sh(4, 1, 1, 1));
        let p = ConvParams::new(w, None, 1, 0, 4).unwrap();
        assert_eq!(conv2d(&x, &p).unwrap(), x);
    }

    #[test]
    fn output_shape_math() {
        let w = Tensor::<f32>::zeros(sh(8, 3, 3, 3));
        let p = ConvParams::same(w, None, 2, 1).unwrap();
        assert_eq!(p.output_shape(sh(2, 3, 32, 32)).unwrap(), sh(2, 8, 16, 16));
        assert!(p.output_shape(sh(2, 4, 32, 32)).is_err());
    }

    #[test]
    fn invalid_params_rejected() {
        assert!(ConvParams::new(Tensor::<f32>::zeros(sh(3, 1, 3, 3)), None, 1, 1, 2).is_err());
        assert!(ConvParams::new(Tensor::<f32>::zeros(sh(2, 1, 2, 2)), None, 1, 0, 1).is_err());
        assert!(ConvParams::new(Tensor::<f32>::zeros(sh(2, 1, 3, 3)), None, 3, 0, 1).is_err());
        let bad_bias = Some(Tensor::zeros(sh(3, 1, 1, 1)));
        assert!(ConvParams::new(Tensor::<f32>::zeros(sh(2, 1, 3, 3)), bad_bias, 1, 0, 1).is_err());
    }

    #[test]
    fn zero_grad_out_gives_zero_grads() {
        let mut rng = Rng::new(3);
        let x = Tensor::<f64>::uniform(sh(2, 2, 5, 5), -1.0, 1.0, &mut rng);
        let w = Tensor::uniform(sh(3, 2, 3, 3), -1.0, 1.0, &mut rng);
        let b = Some(Tensor::uniform(sh(3, 1, 1, 1), -1.0, 1.0, &mut rng));
        let p = ConvParams::same(w, b, 1, 1).unwrap();
        let (y, tape) = conv2d_taped(&x, &p).unwrap();
        let g = conv2d_backward(&tape, &Tensor::zeros(y.shape())).unwrap();
        assert_eq!(g.x.max_abs(), 0.0);
        assert_eq!(g.weight.max_abs(), 0.0);
        assert_eq!(g.bias.unwrap().max_abs(), 0.0);
    }

    #[test]
    fn bias_grad_is_channel_sum() {
        let mut rng = Rng::new(4);
        let x = Tensor::<f64>::uniform(sh(2, 2, 4, 4), -1.0, 1.0, &mut rng);
        let w = Tensor::uniform(sh(2, 2, 3, 3), -1.0, 1.0, &mut rng);
        let b = Some(Tensor::zeros(sh(2, 1, 1, 1)));
        let p = ConvParams::same(w, b, 2, 1).unwrap();
        let (y, tape) = conv2d_taped(&x, &p).unwrap();
        let go = Tensor::uniform(y.shape(), -1.0, 1.0, &mut rng);
        let gb = conv2d_backward(&tape, &go).unwrap().bias.unwrap();
        for c in 0..2 {
            let s: f64 = (0..2).map(|n| go.plane(n, c).iter().sum::<f64>()).sum();
            assert!((gb.data()[c] - s).abs() < 1e-12);
        }
    }

    #[test]
    fn backward_rejects_wrong_grad_shape() {
        let x = Tensor::<f64>::zeros(sh(1, 1, 4, 4));
        let p = ConvParams::same(Tensor::zeros(sh(1, 1, 3, 3)), None, 1, 1).unwrap();
        let (_, tape) = conv2d_taped(&x, &p).unwrap();
        assert!(conv2d_backward(&tape, &Tensor::zeros(sh(1, 1, 2, 2))).is_err());
    }
}
