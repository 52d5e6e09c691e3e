//! Forward and backward execution of a built network.

use alloc::vec::Vec;
use core::ops::Range;

use super::layout::{Layout, StageLayout};
use super::spec::{ArchitectureSpec, BlockSpec, ConvBlockSpec};
use crate::aads::{aads_down, aads_down_backward, aads_down_taped, make_blur_kernel, AadsTape};
use crate::dcac::{dcac_backward, dcac_forward, dcac_forward_taped, DcacParams, DcacTape};
use crate::error::{Error, Result};
use crate::nn::{
    act, act_backward, act_taped, avgpool_global, avgpool_global_backward, batchnorm, batchnorm_backward,
    batchnorm_taped, conv2d, conv2d_backward, conv2d_taped, linear, linear_backward, linear_taped, ActTape,
    Activation, BnParams, BnTape, ConvParams, ConvTape, LinearParams, LinearTape, Mode, BN_EPS, BN_MOMENTUM,
};
use crate::params::{ModelParams, SlotKind};
use crate::real::Real;
use crate::rng::Rng;
use crate::tensor::{concat_channels, split_channels, Shape, Tensor};

struct ConvBlockTape<E: Real> {
    conv: ConvTape<E>,
    bn: Option<BnTape<E>>,
    relu: Option<ActTape<E>>,
}

enum BlockTape<E: Real> {
    Conv(ConvBlockTape<E>),
    Dcac(DcacTape<E>),
    Aads(AadsTape),
}

impl<E: Real> BlockTape<E> {
    fn kink_margin(&self) -> E {
        match self {
            BlockTape::Conv(c) => c.relu.as_ref().map_or(E::infinity(), |r| r.kink_margin()),
            BlockTape::Dcac(d) => d.kink_margin(),
            BlockTape::Aads(_) => E::infinity(),
        }
    }
}

struct StageTape<E: Real> {
    columns: Vec<Vec<BlockTape<E>>>,
    widths: Vec<usize>,
    merge: Option<ConvBlockTape<E>>,
}

/// Everything the backward pass needs from one training forward.
pub struct NetworkTape<E: Real = f32> {
    stem: Vec<BlockTape<E>>,
    stages: Vec<StageTape<E>>,
    pool_in: Shape,
    head: LinearTape<E>,
}

impl<E: Real> NetworkTape<E> {
    /// Smallest distance of any relu input from zero, or of any pooling
    /// window from a tie. Finite differences are unreliable below it.
    pub fn kink_margin(&self) -> E {
        let mut m = E::infinity();
        for b in &self.stem {
            m = m.min(b.kink_margin());
        }
        for s in &self.stages {
            for b in s.columns.iter().flatten() {
                m = m.min(b.kink_margin());
            }
            if let Some(r) = s.merge.as_ref().and_then(|t| t.relu.as_ref()) {
                m = m.min(r.kink_margin());
            }
        }
        m
    }
}

pub struct NetworkGrads<E: Real = f32> {
    pub x: Tensor<E>,
    /// One tensor per parameter slot; zeros for running statistics.
    pub params: Vec<Tensor<E>>,
}

/// Per stage, the output of every column before any merge, plus the logits.
pub struct StageTrace<E: Real = f32> {
    pub columns: Vec<Vec<Tensor<E>>>,
    pub logits: Tensor<E>,
}

/// Running statistics produced by a training forward, keyed by slot.
type Updates<E> = Vec<(usize, Tensor<E>)>;

struct Run<'a, E: Real> {
    layout: &'a Layout,
    tensors: &'a [Tensor<E>],
    mode: Mode,
    taped: bool,
    updates: Updates<E>,
}

impl<E: Real> Run<'_, E> {
    fn conv(&mut self, x: &Tensor<E>, c: &ConvBlockSpec, r: Range<usize>) -> Result<(Tensor<E>, Option<ConvBlockTape<E>>)> {
        let t = &self.tensors[r.clone()];
        let bias = (!c.bn).then(|| t[1].clone());
        let p = ConvParams::same(t[0].clone(), bias, c.stride, c.groups)?;
        let (mut y, conv) = if self.taped {
            let (y, tp) = conv2d_taped(x, &p)?;
            (y, Some(tp))
        } else {
            (conv2d(x, &p)?, None)
        };
        let mut bn_tape = None;
        if c.bn {
            let mut bn = BnParams {
                gamma: t[1].clone(),
                beta: t[2].clone(),
                running_mean: t[3].clone(),
                running_var: t[4].clone(),
                eps: BN_EPS,
                momentum: BN_MOMENTUM,
            };
            y = if self.taped {
                let (y2, tp) = batchnorm_taped(&y, &mut bn, self.mode)?;
                bn_tape = Some(tp);
                y2
            } else {
                batchnorm(&y, &mut bn, self.mode)?
            };
            if self.mode == Mode::Train {
                self.updates.push((r.start + 3, bn.running_mean));
                self.updates.push((r.start + 4, bn.running_var));
            }
        }
        let mut relu = None;
        if c.relu {
            y = if self.taped {
                let (y2, tp) = act_taped(&y, Activation::Relu);
                relu = Some(tp);
                y2
            } else {
                act(&y, Activation::Relu)
            };
        }
        Ok((y, conv.map(|conv| ConvBlockTape { conv, bn: bn_tape, relu })))
    }

    fn block(&mut self, x: &Tensor<E>, b: &BlockSpec, r: Range<usize>) -> Result<(Tensor<E>, Option<BlockTape<E>>)> {
        match b {
            BlockSpec::Conv(c) => {
                let (y, t) = self.conv(x, c, r)?;
                Ok((y, t.map(BlockTape::Conv)))
            }
            BlockSpec::Dcac(d) => {
                let mut p = DcacParams::from_tensors(d, &self.tensors[r.clone()])?;
                let (y, tape) = if self.taped {
                    let (y, t) = dcac_forward_taped(x, d, &mut p, self.mode)?;
                    (y, Some(BlockTape::Dcac(t)))
                } else {
                    (dcac_forward(x, d, &mut p, self.mode)?, None)
                };
                if self.mode == Mode::Train {
                    for (k, t) in p.to_tensors().into_iter().enumerate() {
                        let slot = r.start + k;
                        if !self.layout.slots[slot].kind.trainable() {
                            self.updates.push((slot, t));
                        }
                    }
                }
                Ok((y, tape))
            }
            BlockSpec::Aads(a) => {
                let kernel = make_blur_kernel(a.k)?;
                if self.taped {
                    let (y, t) = aads_down_taped(x, &kernel)?;
                    Ok((y, Some(BlockTape::Aads(t))))
                } else {
                    Ok((aads_down(x, &kernel)?, None))
                }
            }
        }
    }

    fn column(
        &mut self,
        x: &Tensor<E>,
        blocks: &[BlockSpec],
        ranges: &[Range<usize>],
    ) -> Result<(Tensor<E>, Vec<BlockTape<E>>)> {
        let mut tapes = Vec::new();
        let mut y: Option<Tensor<E>> = None;
        for (b, r) in blocks.iter().zip(ranges) {
            let (out, t) = self.block(y.as_ref().unwrap_or(x), b, r.clone())?;
            tapes.extend(t);
            y = Some(out);
        }
        Ok((y.unwrap_or_else(|| x.clone()), tapes))
    }

    fn network(
        &mut self,
        spec: &ArchitectureSpec,
        x: &Tensor<E>,
        mut trace: Option<&mut Vec<Vec<Tensor<E>>>>,
    ) -> Result<(Tensor<E>, Option<NetworkTape<E>>)> {
        let r = spec.input_res;
        let s = x.shape();
        if (s.c, s.h, s.w) != (r.c, r.h, r.w) {
            return Err(Error::ShapeMismatch {
                expected: Shape::new(s.n, r.c, r.h, r.w)?,
                got: s,
            });
        }
        let layout = self.layout;
        let (mut h, stem) = self.column(x, &spec.stem, &layout.stem)?;
        let mut stages = Vec::with_capacity(spec.stages.len());
        for (st, sl) in spec.stages.iter().zip(&layout.stages) {
            let StageLayout { columns, merge } = sl;
            let mut outs = Vec::with_capacity(columns.len());
            let mut col_tapes = Vec::with_capacity(columns.len());
            for (col, ranges) in st.columns.iter().zip(columns) {
                let (y, t) = self.column(&h, &col.0, ranges)?;
                outs.push(y);
                col_tapes.push(t);
            }
            let widths: Vec<usize> = outs.iter().map(|o| o.shape().c).collect();
            let refs: Vec<&Tensor<E>> = outs.iter().collect();
            let cat = concat_channels(&refs)?;
            if let Some(tr) = trace.as_deref_mut() {
                tr.push(outs);
            }
            let mut merge_tape = None;
            h = match merge {
                Some((m, r)) => {
                    let (y, t) = self.conv(&cat, m, r.clone())?;
                    merge_tape = t;
                    y
                }
                None => cat,
            };
            stages.push(StageTape {
                columns: col_tapes,
                widths,
                merge: merge_tape,
            });
        }
        let pool_in = h.shape();
        let pooled = avgpool_global(&h);
        let t = &self.tensors[layout.head.clone()];
        let lp = LinearParams::new(t[0].clone(), t[1].clone())?;
        if self.taped {
            let (logits, head) = linear_taped(&pooled, &lp)?;
            Ok((
                logits,
                Some(NetworkTape {
                    stem,
                    stages,
                    pool_in,
                    head,
                }),
            ))
        } else {
            Ok((linear(&pooled, &lp)?, None))
        }
    }
}

fn conv_block_backward<E: Real>(t: &ConvBlockTape<E>, g: &Tensor<E>, out: &mut [Tensor<E>]) -> Result<Tensor<E>> {
    let mut g = match &t.relu {
        Some(r) => act_backward(r, g)?,
        None => g.clone(),
    };
    if let Some(bt) = &t.bn {
        let bg = batchnorm_backward(bt, &g)?;
        out[1] = bg.gamma;
        out[2] = bg.beta;
        g = bg.x;
    }
    let cg = conv2d_backward(&t.conv, &g)?;
    out[0] = cg.weight;
    if let Some(b) = cg.bias {
        out[1] = b;
    }
    Ok(cg.x)
}

fn block_backward<E: Real>(t: &BlockTape<E>, g: &Tensor<E>, out: &mut [Tensor<E>]) -> Result<Tensor<E>> {
    match t {
        BlockTape::Conv(c) => conv_block_backward(c, g, out),
        BlockTape::Dcac(d) => {
            let dg = dcac_backward(d, g)?;
            for (o, p) in out.iter_mut().zip(dg.params) {
                *o = p;
            }
            Ok(dg.x)
        }
        BlockTape::Aads(a) => aads_down_backward(a, g),
    }
}

fn column_backward<E: Real>(
    tapes: &[BlockTape<E>],
    ranges: &[Range<usize>],
    g: Tensor<E>,
    grads: &mut [Tensor<E>],
) -> Result<Tensor<E>> {
    let mut g = g;
    for (t, r) in tapes.iter().zip(ranges).rev() {
        g = block_backward(t, &g, &mut grads[r.clone()])?;
    }
    Ok(g)
}

/// A validated spec together with parameters in its layout.
pub struct Network<E: Real = f32> {
    spec: ArchitectureSpec,
    layout: Layout,
    params: ModelParams<E>,
}

impl<E: Real> Network<E> {
    /// Pairs `spec` with `params`; slot names and shapes must match the
    /// spec's layout exactly.
    pub fn new(spec: ArchitectureSpec, params: ModelParams<E>) -> Result<Self> {
        let layout = Layout::new(&spec)?;
        if params.slots() != layout.slots.as_slice() {
            let first = layout
                .slots
                .iter()
                .zip(params.slots())
                .find(|(a, b)| a != b)
                .map(|(a, _)| a.name.clone());
            return Err(Error::arg(alloc::format!(
                "parameter table does not match the architecture ({} slots expected, {} given{})",
                layout.slots.len(),
                params.len(),
                first.map(|n| alloc::format!(", first difference at {n}")).unwrap_or_default()
            )));
        }
        Ok(Network { spec, layout, params })
    }

    pub fn build(spec: ArchitectureSpec, rng: &mut Rng) -> Result<Self> {
        let layout = Layout::new(&spec)?;
        let params = ModelParams::init(layout.slots.clone(), rng)?;
        Ok(Network { spec, layout, params })
    }

    pub fn spec(&self) -> &ArchitectureSpec {
        &self.spec
    }

    pub fn params(&self) -> &ModelParams<E> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ModelParams<E> {
        &mut self.params
    }

    pub fn into_params(self) -> ModelParams<E> {
        self.params
    }

    /// Channel count feeding the classifier.
    pub fn feature_width(&self) -> usize {
        self.layout.head_in
    }

    pub fn cast<F: Real>(&self) -> Network<F> {
        Network {
            spec: self.spec.clone(),
            layout: Layout::new(&self.spec).expect("validated at construction"),
            params: self.params.cast(),
        }
    }

    fn run(&self, mode: Mode, taped: bool) -> Run<'_, E> {
        Run {
            layout: &self.layout,
            tensors: self.params.tensors(),
            mode,
            taped,
            updates: Vec::new(),
        }
    }

    fn apply(&mut self, updates: Updates<E>) {
        let t = self.params.tensors_mut();
        for (i, v) in updates {
            t[i] = v;
        }
    }

    /// Inference: batch norms use their running statistics.
    pub fn forward(&self, x: &Tensor<E>) -> Result<Tensor<E>> {
        Ok(self.run(Mode::Eval, false).network(&self.spec, x, None)?.0)
    }

    /// Taped forward. In [`Mode::Train`] batch statistics are used and the
    /// running statistics in the parameter table are updated.
    pub fn forward_taped(&mut self, x: &Tensor<E>, mode: Mode) -> Result<(Tensor<E>, NetworkTape<E>)> {
        let mut run = self.run(mode, true);
        let (y, tape) = run.network(&self.spec, x, None)?;
        let updates = run.updates;
        self.apply(updates);
        Ok((y, tape.expect("taped run")))
    }

    pub fn forward_train(&mut self, x: &Tensor<E>) -> Result<(Tensor<E>, NetworkTape<E>)> {
        self.forward_taped(x, Mode::Train)
    }

    /// Inference forward that also returns every column's output.
    pub fn trace(&self, x: &Tensor<E>) -> Result<StageTrace<E>> {
        let mut cols = Vec::new();
        let (logits, _) = self.run(Mode::Eval, false).network(&self.spec, x, Some(&mut cols))?;
        Ok(StageTrace { columns: cols, logits })
    }

    pub fn backward(&self, tape: &NetworkTape<E>, grad_logits: &Tensor<E>) -> Result<NetworkGrads<E>> {
        let mut grads = self.params.zeros_like();
        let l = &self.layout;
        let hg = linear_backward(&tape.head, grad_logits)?;
        grads[l.head.start] = hg.weight;
        grads[l.head.start + 1] = hg.bias;
        let mut g = avgpool_global_backward(tape.pool_in, &hg.x)?;
        for (st, sl) in tape.stages.iter().zip(&l.stages).rev() {
            if let (Some(mt), Some((_, r))) = (&st.merge, &sl.merge) {
                g = conv_block_backward(mt, &g, &mut grads[r.clone()])?;
            }
            let parts = split_channels(&g, &st.widths)?;
            let mut acc: Option<Tensor<E>> = None;
            for ((tapes, ranges), gp) in st.columns.iter().zip(&sl.columns).zip(parts) {
                let gx = column_backward(tapes, ranges, gp, &mut grads)?;
                match &mut acc {
                    Some(a) => a.add_assign(&gx)?,
                    None => acc = Some(gx),
                }
            }
            g = acc.expect("validated stages have columns");
        }
        let gx = column_backward(&tape.stem, &l.stem, g, &mut grads)?;
        // running statistics are not trainable
        for (s, t) in l.slots.iter().zip(grads.iter_mut()) {
            if matches!(s.kind, SlotKind::RunningMean | SlotKind::RunningVar) {
                t.data_mut().fill(E::zero());
            }
        }
        Ok(NetworkGrads { x: gx, params: grads })
    }
}
