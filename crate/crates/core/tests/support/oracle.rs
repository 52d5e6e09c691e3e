//! Independent reference implementations used as test oracles.
#![allow(dead_code)]

use condenser_core::nn::ConvParams;
use condenser_core::{Rng, Shape, Tensor};

/// Direct 7-loop convolution in f64.
pub fn naive_conv(x: &Tensor<f32>, p: &ConvParams<f32>) -> (Shape, Vec<f64>) {
    let s = x.shape();
    let ws = p.weight.shape();
    let (co, cig, kh, kw) = (ws.n, ws.c, ws.h, ws.w);
    let g = p.groups;
    let cog = co / g;
    let oh = (s.h + 2 * p.pad - kh) / p.stride + 1;
    let ow = (s.w + 2 * p.pad - kw) / p.stride + 1;
    let mut out = vec![0.0f64; s.n * co * oh * ow];
    for n in 0..s.n {
        for o in 0..co {
            let grp = o / cog;
            for y in 0..oh {
                for xo in 0..ow {
                    let mut acc = p.bias.as_ref().map_or(0.0, |b| b.data()[o] as f64);
                    for ci in 0..cig {
                        let c = grp * cig + ci;
                        for ky in 0..kh {
                            for kx in 0..kw {
                                let iy = (y * p.stride + ky) as isize - p.pad as isize;
                                let ix = (xo * p.stride + kx) as isize - p.pad as isize;
                                if iy < 0 || ix < 0 || iy >= s.h as isize || ix >= s.w as isize {
                                    continue;
                                }
                                let xv = x.at(n, c, iy as usize, ix as usize) as f64;
                                let wv = p.weight.at(o, ci, ky, kx) as f64;
                                acc += xv * wv;
                            }
                        }
                    }
                    out[((n * co + o) * oh + y) * ow + xo] = acc;
                }
            }
        }
    }
    (Shape::new(s.n, co, oh, ow).unwrap(), out)
}

/// Random grouped conv problem with n, c ≤ 4, h, w ≤ 9 and groups ∈ {1, c}.
pub fn random_conv_problem(rng: &mut Rng) -> (Tensor<f32>, ConvParams<f32>) {
    loop {
        let n = rng.between(1, 4);
        let c = rng.between(1, 4);
        let depthwise = rng.chance(0.5);
        let groups = if depthwise { c } else { 1 };
        let co = if depthwise { c * rng.between(1, 2) } else { rng.between(1, 4) };
        let k = *rng.choose(&[1usize, 3, 5]);
        let stride = rng.between(1, 2);
        let pad = rng.between(0, k / 2 + 1);
        let h = rng.between(1, 9);
        let w = rng.between(1, 9);
        if h + 2 * pad < k || w + 2 * pad < k {
            continue;
        }
        let x = Tensor::uniform(Shape::new(n, c, h, w).unwrap(), -1.0, 1.0, rng);
        let wt = Tensor::uniform(Shape::new(co, c / groups, k, k).unwrap(), -1.0, 1.0, rng);
        let bias = rng
            .chance(0.5)
            .then(|| Tensor::uniform(Shape::vector(co).unwrap(), -1.0, 1.0, rng));
        return (x, ConvParams::new(wt, bias, stride, pad, groups).unwrap());
    }
}

fn reflect101(i: isize, n: usize) -> usize {
    let n = n as isize;
    if n == 1 {
        return 0;
    }
    let period = 2 * (n - 1);
    let mut m = i.rem_euclid(period);
    if m >= n {
        m = period - m;
    }
    m as usize
}

fn binomial(k: usize) -> Vec<f64> {
    let mut row = vec![1.0f64];
    for _ in 1..k {
        let mut next = vec![1.0; row.len() + 1];
        for i in 1..row.len() {
            next[i] = row[i - 1] + row[i];
        }
        row = next;
    }
    let s: f64 = row.iter().sum();
    row.iter().map(|v| v / s).collect()
}

/// Full 2-D blur with the k×k outer-product kernel and reflect padding,
/// evaluated everywhere, then subsampled at even positions.
pub fn direct_blur_down(x: &Tensor<f64>, k: usize) -> Vec<f64> {
    let s = x.shape();
    let t = binomial(k);
    let p = (k / 2) as isize;
    let mut out = Vec::new();
    for n in 0..s.n {
        for c in 0..s.c {
            let mut full = vec![0.0; s.h * s.w];
            for y in 0..s.h {
                for xx in 0..s.w {
                    let mut acc = 0.0;
                    for a in 0..k {
                        for b in 0..k {
                            let iy = reflect101(y as isize + a as isize - p, s.h);
                            let ix = reflect101(xx as isize + b as isize - p, s.w);
                            acc += t[a] * t[b] * x.at(n, c, iy, ix);
                        }
                    }
                    full[y * s.w + xx] = acc;
                }
            }
            for y in (0..s.h).step_by(2) {
                for xx in (0..s.w).step_by(2) {
                    out.push(full[y * s.w + xx]);
                }
            }
        }
    }
    out
}
