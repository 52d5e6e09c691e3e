//! Double-condensing attention condenser (DC-AC).
//!
//! Both branches start from the same condensed input `max_pool_s(x)`:
//!
//! ```text
//!            ┌─ 1×1 conv ──────────────────────────────────────── B ─┐
//! x ─ pool_s ┤                                                       ⊙ ── out
//!            └─ [3×3 grouped conv → BN → relu] × n_emb ─ 1×1 conv ─ A ─┘
//!                                                       (σ applied to A)
//! ```
//!
//! `out = B ⊙ σ(A)`. There is no learned scale on the product. The output
//! stays at the condensed resolution unless `expand_output` is set, in which
//! case it is replicated back to the input resolution.

use alloc::format;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{
    act_backward, act_taped, batchnorm_backward, batchnorm_taped, conv2d_backward, conv2d_taped,
    maxpool2d_backward, maxpool2d_taped, upsample_nearest, upsample_nearest_backward, ActTape,
    Activation, BnParams, BnTape, ConvParams, ConvTape, MaxPoolTape, Mode,
};
use crate::params::{ParamSlot, SlotKind};
use crate::real::Real;
use crate::rng::Rng;
use crate::tensor::{Shape, Tensor};

const EMBED_K: usize = 3;

fn default_true() -> bool {
    true
}

fn is_false(v: &bool) -> bool {
    !*v
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DcacSpec {
    pub c_in: usize,
    pub c_out: usize,
    /// Channels of the attention embedding; at most `c_in`.
    pub c_emb: usize,
    /// Condensation factor (1 or 2) of the max-pool condenser.
    pub condense: usize,
    /// Number of 3×3 embedding convolutions.
    pub n_emb: usize,
    pub groups_emb: usize,
    /// Batch norm after each embedding convolution.
    #[serde(default = "default_true")]
    pub bn: bool,
    /// Biases on the pointwise convolutions, and on embedding convolutions
    /// that are not followed by batch norm.
    #[serde(default, skip_serializing_if = "is_false")]
    pub bias: bool,
    /// Upsample the gated output back to the input resolution.
    #[serde(default, skip_serializing_if = "is_false")]
    pub expand_output: bool,
}

impl DcacSpec {
    pub fn new(c_in: usize, c_out: usize, c_emb: usize, condense: usize) -> Self {
        DcacSpec {
            c_in,
            c_out,
            c_emb,
            condense,
            n_emb: 1,
            groups_emb: 1,
            bn: true,
            bias: false,
            expand_output: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: &str| Err(Error::arg(format!("dcac: {m}")));
        if self.c_in == 0 || self.c_out == 0 || self.c_emb == 0 {
            return fail("channel counts must be positive");
        }
        if self.c_emb > self.c_in {
            return fail("c_emb must not exceed c_in");
        }
        if !(1..=2).contains(&self.condense) {
            return fail("condensation factor must be 1 or 2");
        }
        if self.n_emb == 0 {
            return fail("at least one embedding layer is required");
        }
        if self.groups_emb == 0 || self.c_in % self.groups_emb != 0 || self.c_emb % self.groups_emb != 0 {
            return fail("c_in and c_emb must be divisible by groups_emb");
        }
        Ok(())
    }

    pub fn output_shape(&self, x: Shape) -> Result<Shape> {
        self.validate()?;
        if x.c != self.c_in {
            return Err(Error::arg(format!(
                "dcac: input has {} channels, block expects {}",
                x.c, self.c_in
            )));
        }
        let s = self.condense;
        if x.h % s != 0 || x.w % s != 0 {
            return Err(Error::arg(format!(
                "dcac: {}×{} input is not divisible by condensation factor {s}",
                x.h, x.w
            )));
        }
        if self.expand_output {
            Ok(x.with_c(self.c_out))
        } else {
            Shape::new(x.n, self.c_out, x.h / s, x.w / s)
        }
    }

    fn embed_bias(&self) -> bool {
        self.bias && !self.bn
    }

    /// Parameter layout, in the order [`DcacParams::to_tensors`] uses.
    pub fn param_slots(&self, prefix: &str) -> Result<Vec<ParamSlot>> {
        self.validate()?;
        let v = |c| Shape::vector(c);
        let mut slots = Vec::new();
        slots.push(ParamSlot::new(
            format!("{prefix}feat.weight"),
            Shape::new(self.c_out, self.c_in, 1, 1)?,
            SlotKind::Weight { fan_in: self.c_in },
        ));
        if self.bias {
            slots.push(ParamSlot::new(format!("{prefix}feat.bias"), v(self.c_out)?, SlotKind::Bias));
        }
        for i in 0..self.n_emb {
            let cin = if i == 0 { self.c_in } else { self.c_emb };
            let cig = cin / self.groups_emb;
            slots.push(ParamSlot::new(
                format!("{prefix}embed{i}.weight"),
                Shape::new(self.c_emb, cig, EMBED_K, EMBED_K)?,
                SlotKind::Weight {
                    fan_in: cig * EMBED_K * EMBED_K,
                },
            ));
            if self.embed_bias() {
                slots.push(ParamSlot::new(format!("{prefix}embed{i}.bias"), v(self.c_emb)?, SlotKind::Bias));
            }
            if self.bn {
                for (name, kind) in [
                    ("gamma", SlotKind::BnGamma),
                    ("beta", SlotKind::BnBeta),
                    ("running_mean", SlotKind::RunningMean),
                    ("running_var", SlotKind::RunningVar),
                ] {
                    slots.push(ParamSlot::new(format!("{prefix}embed{i}.bn.{name}"), v(self.c_emb)?, kind));
                }
            }
        }
        slots.push(ParamSlot::new(
            format!("{prefix}expand.weight"),
            Shape::new(self.c_out, self.c_emb, 1, 1)?,
            SlotKind::Weight { fan_in: self.c_emb },
        ));
        if self.bias {
            slots.push(ParamSlot::new(format!("{prefix}expand.bias"), v(self.c_out)?, SlotKind::Bias));
        }
        Ok(slots)
    }
}

/// Learned parameters of one block, closed form.
pub fn dcac_param_count(spec: &DcacSpec) -> usize {
    let b = spec.bias as usize;
    let feat = spec.c_in * spec.c_out + b * spec.c_out;
    let expand = spec.c_emb * spec.c_out + b * spec.c_out;
    let per_layer_extra = spec.c_emb * (2 * spec.bn as usize + spec.embed_bias() as usize);
    let k2 = EMBED_K * EMBED_K;
    let first = spec.c_emb * (spec.c_in / spec.groups_emb) * k2;
    let rest = (spec.n_emb - 1) * spec.c_emb * (spec.c_emb / spec.groups_emb) * k2;
    feat + expand + first + rest + spec.n_emb * per_layer_extra
}

/// Multiply-accumulates of the block's convolutions, all evaluated at the
/// condensed resolution `(h/s) × (w/s)`. Pooling, normalization and the
/// gate are not counted.
pub fn dcac_mac_count(spec: &DcacSpec, h: usize, w: usize) -> u64 {
    let s = spec.condense.max(1);
    let p = ((h / s) * (w / s)) as u64;
    let k2 = (EMBED_K * EMBED_K) as u64;
    let (ci, co, ce, g) = (spec.c_in as u64, spec.c_out as u64, spec.c_emb as u64, spec.groups_emb as u64);
    let feat = ci * co * p;
    let expand = ce * co * p;
    let first = ce * (ci / g) * k2 * p;
    let rest = (spec.n_emb as u64 - 1) * ce * (ce / g) * k2 * p;
    feat + expand + first + rest
}

/// Score-matrix cost `(hw)²·c` of dense self-attention over `h·w` tokens of
/// width `c`: the `Q·Kᵀ` term alone, a lower bound on any dense variant.
pub fn dense_attention_macs(c: usize, h: usize, w: usize) -> u64 {
    let t = (h * w) as u64;
    t * t * c as u64
}

/// Reference dense spatial self-attention with identity projections:
/// `out = X · softmax(Xᵀ X / √c)ᵀ` per sample. Forward only; used as a
/// latency baseline.
pub fn dense_token_attention<E: Real>(x: &Tensor<E>) -> Tensor<E> {
    let s = x.shape();
    let t = s.plane();
    let scale = E::one() / E::of_usize(s.c).sqrt();
    let mut out = alloc::vec![E::zero(); s.numel()];
    let mut tokens = alloc::vec![E::zero(); t * s.c];
    let mut row = alloc::vec![E::zero(); t];
    let mut acc = alloc::vec![E::zero(); s.c];
    for n in 0..s.n {
        // token-major copy: tokens[i * c + ch]
        for ch in 0..s.c {
            for (i, v) in x.plane(n, ch).iter().enumerate() {
                tokens[i * s.c + ch] = *v;
            }
        }
        for i in 0..t {
            let q = &tokens[i * s.c..(i + 1) * s.c];
            let mut max = E::neg_infinity();
            for (j, r) in row.iter_mut().enumerate() {
                *r = crate::real::dot(q, &tokens[j * s.c..(j + 1) * s.c]) * scale;
                max = max.max(*r);
            }
            let mut z = E::zero();
            for r in row.iter_mut() {
                *r = (*r - max).exp();
                z += *r;
            }
            acc.fill(E::zero());
            for (j, r) in row.iter().enumerate() {
                crate::real::axpy(&mut acc, *r / z, &tokens[j * s.c..(j + 1) * s.c]);
            }
            for ch in 0..s.c {
                out[(n * s.c + ch) * t + i] = acc[ch];
            }
        }
    }
    Tensor::from_raw(s, out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct DcacParams<E: Real = f32> {
    /// Pointwise `c_in → c_out` on the condensed input; produces `B`.
    pub feat: ConvParams<E>,
    /// 3×3 grouped `c_in → c_emb`, then `c_emb → c_emb`.
    pub embed: Vec<ConvParams<E>>,
    /// One per embedding conv when `spec.bn`, otherwise empty.
    pub embed_bn: Vec<BnParams<E>>,
    /// Pointwise `c_emb → c_out`; produces the pre-gate `A`.
    pub expand: ConvParams<E>,
}

impl<E: Real> DcacParams<E> {
    pub fn init(spec: &DcacSpec, rng: &mut Rng) -> Result<Self> {
        let slots = spec.param_slots("")?;
        let tensors = slots.iter().map(|s| s.init(rng)).collect::<Result<Vec<_>>>()?;
        Self::from_tensors(spec, &tensors)
    }

    /// Rebuilds the block from tensors laid out as [`DcacSpec::param_slots`].
    pub fn from_tensors(spec: &DcacSpec, tensors: &[Tensor<E>]) -> Result<Self> {
        let slots = spec.param_slots("")?;
        if tensors.len() != slots.len() {
            return Err(Error::arg(format!(
                "dcac: expected {} parameter tensors, got {}",
                slots.len(),
                tensors.len()
            )));
        }
        for (s, t) in slots.iter().zip(tensors) {
            t.expect_shape(s.shape)?;
        }
        let mut it = tensors.iter().cloned();
        let mut next = || it.next().expect("length checked");
        let feat_w = next();
        let feat_b = spec.bias.then(&mut next);
        let feat = ConvParams::new(feat_w, feat_b, 1, 0, 1)?;
        let mut embed = Vec::with_capacity(spec.n_emb);
        let mut embed_bn = Vec::new();
        for _ in 0..spec.n_emb {
            let w = next();
            let b = spec.embed_bias().then(&mut next);
            embed.push(ConvParams::same(w, b, 1, spec.groups_emb)?);
            if spec.bn {
                let mut bn = BnParams::identity(spec.c_emb)?;
                bn.gamma = next();
                bn.beta = next();
                bn.running_mean = next();
                bn.running_var = next();
                embed_bn.push(bn);
            }
        }
        let exp_w = next();
        let exp_b = spec.bias.then(&mut next);
        let expand = ConvParams::new(exp_w, exp_b, 1, 0, 1)?;
        Ok(DcacParams {
            feat,
            embed,
            embed_bn,
            expand,
        })
    }

    /// Inverse of [`from_tensors`](Self::from_tensors).
    pub fn to_tensors(&self) -> Vec<Tensor<E>> {
        let mut out = Vec::new();
        out.push(self.feat.weight.clone());
        out.extend(self.feat.bias.clone());
        for (i, c) in self.embed.iter().enumerate() {
            out.push(c.weight.clone());
            out.extend(c.bias.clone());
            if let Some(bn) = self.embed_bn.get(i) {
                out.extend([
                    bn.gamma.clone(),
                    bn.beta.clone(),
                    bn.running_mean.clone(),
                    bn.running_var.clone(),
                ]);
            }
        }
        out.push(self.expand.weight.clone());
        out.extend(self.expand.bias.clone());
        out
    }

    /// Zeroes every attention-branch weight and bias (embedding and
    /// expansion). Batch-norm affine terms are left alone.
    pub fn zero_attention(&mut self) {
        for c in self.embed.iter_mut().chain(core::iter::once(&mut self.expand)) {
            c.weight.data_mut().fill(E::zero());
            if let Some(b) = &mut c.bias {
                b.data_mut().fill(E::zero());
            }
        }
    }
}

struct EmbedTape<E: Real> {
    conv: ConvTape<E>,
    bn: Option<BnTape<E>>,
    relu: ActTape<E>,
}

pub struct DcacTape<E: Real = f32> {
    in_shape: Shape,
    condense: usize,
    expand_output: bool,
    pool: Option<MaxPoolTape<E>>,
    feat: ConvTape<E>,
    embed: Vec<EmbedTape<E>>,
    expand: ConvTape<E>,
    gate: ActTape<E>,
    b: Tensor<E>,
    sig_a: Tensor<E>,
}

impl<E: Real> DcacTape<E> {
    /// Feature embeddings `B`.
    pub fn features(&self) -> &Tensor<E> {
        &self.b
    }

    /// Attention values `σ(A)`.
    pub fn attention(&self) -> &Tensor<E> {
        &self.sig_a
    }

    /// Smallest distance to a relu kink or pooling tie inside the block.
    pub fn kink_margin(&self) -> E {
        let mut m = self.pool.as_ref().map_or(E::infinity(), |p| p.kink_margin());
        for e in &self.embed {
            m = m.min(e.relu.kink_margin());
        }
        m
    }
}

pub struct DcacGrads<E: Real = f32> {
    pub x: Tensor<E>,
    /// Same order as [`DcacParams::to_tensors`]; running statistics get zeros.
    pub params: Vec<Tensor<E>>,
}

fn forward_impl<E: Real>(
    x: &Tensor<E>,
    spec: &DcacSpec,
    p: &mut DcacParams<E>,
    mode: Mode,
) -> Result<(Tensor<E>, DcacTape<E>)> {
    spec.output_shape(x.shape())?;
    let s = spec.condense;
    let (pooled, pool) = if s > 1 {
        let (y, t) = maxpool2d_taped(x, s, s)?;
        (y, Some(t))
    } else {
        (x.clone(), None)
    };
    let (b, feat) = conv2d_taped(&pooled, &p.feat)?;
    let mut a = pooled;
    let mut embed = Vec::with_capacity(spec.n_emb);
    for i in 0..spec.n_emb {
        let (y, conv) = conv2d_taped(&a, &p.embed[i])?;
        let (y, bn) = if spec.bn {
            let (y, t) = batchnorm_taped(&y, &mut p.embed_bn[i], mode)?;
            (y, Some(t))
        } else {
            (y, None)
        };
        let (y, relu) = act_taped(&y, Activation::Relu);
        embed.push(EmbedTape { conv, bn, relu });
        a = y;
    }
    let (pre_gate, expand) = conv2d_taped(&a, &p.expand)?;
    let (sig_a, gate) = act_taped(&pre_gate, Activation::Sigmoid);
    let mut out = b.mul(&sig_a)?;
    if spec.expand_output && s > 1 {
        out = upsample_nearest(&out, s)?;
    }
    let tape = DcacTape {
        in_shape: x.shape(),
        condense: s,
        expand_output: spec.expand_output,
        pool,
        feat,
        embed,
        expand,
        gate,
        b,
        sig_a,
    };
    Ok((out, tape))
}

/// `B ⊙ σ(A)`; in [`Mode::Train`] the embedding batch norms update their
/// running statistics in `p`.
pub fn dcac_forward<E: Real>(x: &Tensor<E>, spec: &DcacSpec, p: &mut DcacParams<E>, mode: Mode) -> Result<Tensor<E>> {
    Ok(forward_impl(x, spec, p, mode)?.0)
}

pub fn dcac_forward_taped<E: Real>(
    x: &Tensor<E>,
    spec: &DcacSpec,
    p: &mut DcacParams<E>,
    mode: Mode,
) -> Result<(Tensor<E>, DcacTape<E>)> {
    forward_impl(x, spec, p, mode)
}

pub fn dcac_backward<E: Real>(tape: &DcacTape<E>, grad_out: &Tensor<E>) -> Result<DcacGrads<E>> {
    let mut g = grad_out.clone();
    if tape.expand_output && tape.condense > 1 {
        g = upsample_nearest_backward(tape.b.shape(), tape.condense, &g)?;
    }
    g.expect_shape(tape.b.shape())?;
    let g_b = g.mul(&tape.sig_a)?;
    let g_sig = g.mul(&tape.b)?;
    let g_a = act_backward(&tape.gate, &g_sig)?;

    let expand = conv2d_backward(&tape.expand, &g_a)?;
    let mut g_emb = expand.x;
    let mut embed_grads = Vec::with_capacity(tape.embed.len());
    for e in tape.embed.iter().rev() {
        let gr = act_backward(&e.relu, &g_emb)?;
        let (gc, bn) = match &e.bn {
            Some(bt) => {
                let bg = batchnorm_backward(bt, &gr)?;
                (bg.x, Some((bg.gamma, bg.beta)))
            }
            None => (gr, None),
        };
        let cg = conv2d_backward(&e.conv, &gc)?;
        g_emb = cg.x;
        embed_grads.push((cg.weight, cg.bias, bn));
    }
    embed_grads.reverse();
    let feat = conv2d_backward(&tape.feat, &g_b)?;
    let g_pooled = feat.x.add(&g_emb)?;
    let gx = match &tape.pool {
        Some(pt) => maxpool2d_backward(pt, &g_pooled)?,
        None => g_pooled,
    };
    debug_assert_eq!(gx.shape(), tape.in_shape);

    let mut params = Vec::new();
    params.push(feat.weight);
    params.extend(feat.bias);
    for (w, b, bn) in embed_grads {
        params.push(w);
        params.extend(b);
        if let Some((gg, gb)) = bn {
            let z = Tensor::zeros(gg.shape());
            params.extend([gg, gb, z.clone(), z]);
        }
    }
    params.push(expand.weight);
    params.extend(expand.bias);
    Ok(DcacGrads { x: gx, params })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sh(n: usize, c: usize, h: usize, w: usize) -> Shape {
        Shape::new(n, c, h, w).unwrap()
    }

    #[test]
    fn worked_param_count() {
        let spec = DcacSpec {
            bn: false,
            ..DcacSpec::new(8, 8, 4, 1)
        };
        // 8·8 (feat) + 4·8·9 (embed) + 4·8 (expand)
        assert_eq!(dcac_param_count(&spec), 384);
        let p = DcacParams::<f32>::init(&spec, &mut Rng::new(1)).unwrap();
        let allocated: usize = p.to_tensors().iter().map(|t| t.numel()).sum();
        assert_eq!(allocated, 384);
    }

    #[test]
    fn doubling_c_emb_doubles_attention_params_only() {
        let base = DcacSpec {
            bn: false,
            ..DcacSpec::new(8, 8, 4, 1)
        };
        let wide = DcacSpec { c_emb: 8, ..base.clone() };
        let feat = 8 * 8;
        assert_eq!(dcac_param_count(&wide) - feat, 2 * (dcac_param_count(&base) - feat));
    }

    #[test]
    fn condensation_quarters_macs() {
        let s1 = DcacSpec::new(16, 16, 8, 1);
        let s2 = DcacSpec { condense: 2, ..s1.clone() };
        assert_eq!(dcac_mac_count(&s2, 32, 32) * 4, dcac_mac_count(&s1, 32, 32));
    }

    #[test]
    fn shape_contract() {
        let spec = DcacSpec::new(8, 16, 4, 2);
        let mut p = DcacParams::<f32>::init(&spec, &mut Rng::new(2)).unwrap();
        let x = Tensor::uniform(sh(1, 8, 16, 16), -1.0, 1.0, &mut Rng::new(3));
        let y = dcac_forward(&x, &spec, &mut p, Mode::Train).unwrap();
        assert_eq!(y.shape(), sh(1, 16, 8, 8));
        let up = DcacSpec {
            expand_output: true,
            ..spec.clone()
        };
        let y = dcac_forward(&x, &up, &mut p, Mode::Eval).unwrap();
        assert_eq!(y.shape(), sh(1, 16, 16, 16));
    }

    #[test]
    fn zero_attention_gives_half_features() {
        let spec = DcacSpec {
            bias: true,
            ..DcacSpec::new(4, 6, 2, 2)
        };
        let mut p = DcacParams::<f32>::init(&spec, &mut Rng::new(4)).unwrap();
        p.zero_attention();
        let x = Tensor::uniform(sh(2, 4, 8, 8), -1.0, 1.0, &mut Rng::new(5));
        let (y, tape) = dcac_forward_taped(&x, &spec, &mut p, Mode::Train).unwrap();
        let half_b = tape.features().scale(0.5);
        assert_eq!(y, half_b);
    }

    #[test]
    fn invalid_specs_rejected() {
        assert!(DcacSpec::new(4, 4, 8, 1).validate().is_err());
        assert!(DcacSpec::new(4, 4, 2, 3).validate().is_err());
        assert!(DcacSpec { groups_emb: 3, ..DcacSpec::new(6, 4, 4, 1) }.validate().is_err());
        assert!(DcacSpec { n_emb: 0, ..DcacSpec::new(4, 4, 2, 1) }.validate().is_err());
        let spec = DcacSpec::new(4, 4, 2, 2);
        assert!(spec.output_shape(sh(1, 4, 7, 8)).is_err());
        assert!(spec.output_shape(sh(1, 3, 8, 8)).is_err());
    }

    #[test]
    fn zero_grad_out_gives_zero_grads() {
        let spec = DcacSpec::new(4, 4, 2, 2);
        let mut p = DcacParams::<f64>::init(&spec, &mut Rng::new(6)).unwrap();
        let x = Tensor::uniform(sh(1, 4, 8, 8), -1.0, 1.0, &mut Rng::new(7));
        let (y, tape) = dcac_forward_taped(&x, &spec, &mut p, Mode::Train).unwrap();
        let g = dcac_backward(&tape, &Tensor::zeros(y.shape())).unwrap();
        assert_eq!(g.x.max_abs(), 0.0);
        assert!(g.params.iter().all(|t| t.max_abs() == 0.0));
        assert_eq!(g.params.len(), p.to_tensors().len());
    }

    #[test]
    fn dense_attention_rows_are_convex_combinations() {
        let x = Tensor::<f64>::uniform(sh(1, 2, 3, 3), -1.0, 1.0, &mut Rng::new(8));
        let y = dense_token_attention(&x);
        for ch in 0..2 {
            let (lo, hi) = x.plane(0, ch).iter().fold((f64::MAX, f64::MIN), |(l, h), v| (l.min(*v), h.max(*v)));
            assert!(y.plane(0, ch).iter().all(|v| *v >= lo - 1e-12 && *v <= hi + 1e-12));
        }
        assert_eq!(dense_attention_macs(16, 32, 32), 1024 * 1024 * 16);
    }
}
