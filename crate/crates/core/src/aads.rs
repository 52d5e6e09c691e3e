//! Anti-aliased downsampling: a fixed binomial blur followed by stride-2
//! subsampling, and the shift-consistency metric used to measure how stable
//! a classifier's prediction is under small circular translations.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::real::Real;
use crate::rng::Rng;
use crate::tensor::{Shape, Tensor};

pub const DEFAULT_BLUR_TAPS: usize = 3;
pub const MAX_BLUR_TAPS: usize = 7;

/// Normalized binomial filter, applied separably and per channel.
#[derive(Debug, Clone, PartialEq)]
pub struct BlurKernel {
    taps: Vec<f64>,
}

impl BlurKernel {
    pub fn taps(&self) -> &[f64] {
        &self.taps
    }

    pub fn len(&self) -> usize {
        self.taps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.taps.is_empty()
    }

    pub fn pad(&self) -> usize {
        (self.taps.len() - 1) / 2
    }

    /// The equivalent 2-D kernel, row-major `k × k`.
    pub fn outer(&self) -> Vec<f64> {
        self.taps
            .iter()
            .flat_map(|a| self.taps.iter().map(move |b| a * b))
            .collect()
    }
}

/// Row `k − 1` of Pascal's triangle divided by `2^(k−1)`.
pub fn make_blur_kernel(k: usize) -> Result<BlurKernel> {
    if k % 2 == 0 || !(1..=MAX_BLUR_TAPS).contains(&k) {
        return Err(Error::arg(alloc::format!(
            "blur kernel length must be odd and in 1..={MAX_BLUR_TAPS}, got {k}"
        )));
    }
    let mut row = vec![1.0f64];
    for _ in 1..k {
        let mut next = vec![1.0; row.len() + 1];
        for i in 1..row.len() {
            next[i] = row[i - 1] + row[i];
        }
        row = next;
    }
    let total = (1u64 << (k - 1)) as f64;
    Ok(BlurKernel {
        taps: row.into_iter().map(|v| v / total).collect(),
    })
}

/// Reflect-101 indexing: `-1 → 1`, `n → n − 2`. Valid for `-(n-1) ≤ i ≤ 2n − 2`.
#[inline]
pub fn reflect(i: isize, n: usize) -> usize {
    let n = n as isize;
    let r = if i < 0 {
        -i
    } else if i >= n {
        2 * (n - 1) - i
    } else {
        i
    };
    r as usize
}

pub fn aads_output_shape(x: Shape, kernel: &BlurKernel) -> Result<Shape> {
    if x.h % 2 != 0 || x.w % 2 != 0 {
        return Err(Error::arg(alloc::format!(
            "aads_down: height and width must be even, got {}×{}",
            x.h,
            x.w
        )));
    }
    if x.h <= kernel.pad() || x.w <= kernel.pad() {
        return Err(Error::arg("aads_down: input too small for reflect padding"));
    }
    Shape::new(x.n, x.c, x.h / 2, x.w / 2)
}

#[derive(Debug, Clone)]
pub struct AadsTape {
    in_shape: Shape,
    kernel: BlurKernel,
}

/// Blur with reflect padding, then keep every second row and column
/// starting at index 0. Output is `(n, c, h/2, w/2)`.
pub fn aads_down<E: Real>(x: &Tensor<E>, kernel: &BlurKernel) -> Result<Tensor<E>> {
    let s = x.shape();
    let os = aads_output_shape(s, kernel)?;
    let taps: Vec<E> = kernel.taps.iter().map(|t| E::of(*t)).collect();
    let p = kernel.pad() as isize;
    let mut tmp = vec![E::zero(); os.h * s.w];
    let mut out = Vec::with_capacity(os.numel());
    for nc in 0..s.n * s.c {
        let plane = &x.data()[nc * s.plane()..(nc + 1) * s.plane()];
        // vertical pass at the kept rows
        tmp.fill(E::zero());
        for i in 0..os.h {
            let dst = &mut tmp[i * s.w..(i + 1) * s.w];
            for (a, t) in taps.iter().enumerate() {
                let r = reflect(2 * i as isize + a as isize - p, s.h);
                crate::real::axpy(dst, *t, &plane[r * s.w..(r + 1) * s.w]);
            }
        }
        // horizontal pass at the kept columns
        for i in 0..os.h {
            let row = &tmp[i * s.w..(i + 1) * s.w];
            for j in 0..os.w {
                let mut acc = E::zero();
                for (b, t) in taps.iter().enumerate() {
                    acc += *t * row[reflect(2 * j as isize + b as isize - p, s.w)];
                }
                out.push(acc);
            }
        }
    }
    Ok(Tensor::from_raw(os, out))
}

pub fn aads_down_taped<E: Real>(x: &Tensor<E>, kernel: &BlurKernel) -> Result<(Tensor<E>, AadsTape)> {
    let y = aads_down(x, kernel)?;
    Ok((
        y,
        AadsTape {
            in_shape: x.shape(),
            kernel: kernel.clone(),
        },
    ))
}

pub fn aads_down_backward<E: Real>(tape: &AadsTape, grad_out: &Tensor<E>) -> Result<Tensor<E>> {
    let s = tape.in_shape;
    let os = aads_output_shape(s, &tape.kernel)?;
    grad_out.expect_shape(os)?;
    let taps: Vec<E> = tape.kernel.taps.iter().map(|t| E::of(*t)).collect();
    let p = tape.kernel.pad() as isize;
    let mut gx = vec![E::zero(); s.numel()];
    let mut gtmp = vec![E::zero(); os.h * s.w];
    for nc in 0..s.n * s.c {
        let g = &grad_out.data()[nc * os.plane()..(nc + 1) * os.plane()];
        gtmp.fill(E::zero());
        for i in 0..os.h {
            let row = &mut gtmp[i * s.w..(i + 1) * s.w];
            for j in 0..os.w {
                let gv = g[i * os.w + j];
                for (b, t) in taps.iter().enumerate() {
                    row[reflect(2 * j as isize + b as isize - p, s.w)] += *t * gv;
                }
            }
        }
        let dst = &mut gx[nc * s.plane()..(nc + 1) * s.plane()];
        for i in 0..os.h {
            let src = &gtmp[i * s.w..(i + 1) * s.w];
            for (a, t) in taps.iter().enumerate() {
                let r = reflect(2 * i as isize + a as isize - p, s.h);
                crate::real::axpy(&mut dst[r * s.w..(r + 1) * s.w], *t, src);
            }
        }
    }
    Ok(Tensor::from_raw(s, gx))
}

/// Rolls each plane by `dy` rows and `dx` columns with wrap-around.
pub fn circular_shift<E: Real>(x: &Tensor<E>, dy: isize, dx: isize) -> Tensor<E> {
    let s = x.shape();
    let mut out = Vec::with_capacity(s.numel());
    for nc in 0..s.n * s.c {
        let plane = &x.data()[nc * s.plane()..(nc + 1) * s.plane()];
        for y in 0..s.h {
            let sy = (y as isize - dy).rem_euclid(s.h as isize) as usize;
            for xx in 0..s.w {
                let sx = (xx as isize - dx).rem_euclid(s.w as isize) as usize;
                out.push(plane[sy * s.w + sx]);
            }
        }
    }
    Tensor::from_raw(s, out)
}

/// Index of the largest logit per sample; the lowest index wins ties.
pub fn argmax_per_sample<E: Real>(logits: &Tensor<E>) -> Vec<usize> {
    let s = logits.shape();
    let k = s.c * s.plane();
    (0..s.n)
        .map(|n| {
            let row = &logits.data()[n * k..(n + 1) * k];
            let mut best = 0;
            for (i, v) in row.iter().enumerate() {
                if *v > row[best] {
                    best = i;
                }
            }
            best
        })
        .collect()
}

/// Fraction of images whose predicted class survives a random circular
/// shift with offsets drawn uniformly from `[-max_shift, max_shift]²`.
///
/// `model` maps a batch of images to `(n, classes, 1, 1)` logits. One shift
/// is drawn per image from `rng`.
pub fn shift_consistency<F>(mut model: F, images: &[Tensor<f32>], max_shift: usize, rng: &mut Rng) -> Result<f64>
where
    F: FnMut(&Tensor<f32>) -> Result<Tensor<f32>>,
{
    if images.is_empty() {
        return Err(Error::arg("shift_consistency: empty dataset"));
    }
    let mut kept = 0usize;
    let mut total = 0usize;
    for batch in images {
        let s = batch.shape();
        let mut shifted = Vec::with_capacity(s.n);
        for i in 0..s.n {
            let img = batch.slice_batch(i, 1)?;
            let m = max_shift as isize;
            let dy = rng.between(0, 2 * max_shift) as isize - m;
            let dx = rng.between(0, 2 * max_shift) as isize - m;
            shifted.push(circular_shift(&img, dy, dx));
        }
        let refs: Vec<&Tensor<f32>> = shifted.iter().collect();
        let shifted = Tensor::concat_batch(&refs)?;
        let a = argmax_per_sample(&model(batch)?);
        let b = argmax_per_sample(&model(&shifted)?);
        if a.len() != s.n || b.len() != s.n {
            return Err(Error::arg("shift_consistency: model returned wrong batch size"));
        }
        kept += a.iter().zip(&b).filter(|(x, y)| x == y).count();
        total += s.n;
    }
    Ok(kept as f64 / total as f64)
}
