//! Parameter naming and ordering for a whole network.
//!
//! Slots are laid out stem first, then stage by stage and column by column,
//! then each merge convolution, then the head:
//!
//! ```text
//! stem.{i}.conv.weight
//! stages.{s}.col{j}.{b}.feat.weight
//! stages.{s}.merge.conv.weight
//! head.fc.weight, head.fc.bias
//! ```

use alloc::format;
use alloc::vec::Vec;
use core::ops::Range;

use super::spec::{ArchitectureSpec, BlockSpec, ConvBlockSpec, Interaction};
use super::ensure_valid;
use crate::error::Result;
use crate::params::{ModelParams, ParamSlot, SlotKind};
use crate::real::Real;
use crate::rng::Rng;
use crate::tensor::Shape;

pub(crate) fn conv_slots(c: &ConvBlockSpec, prefix: &str) -> Result<Vec<ParamSlot>> {
    let cig = c.c_in / c.groups;
    let mut v = Vec::new();
    v.push(ParamSlot::new(
        format!("{prefix}conv.weight"),
        Shape::new(c.c_out, cig, c.k, c.k)?,
        SlotKind::Weight { fan_in: cig * c.k * c.k },
    ));
    let vec = Shape::vector(c.c_out)?;
    if c.bn {
        for (name, kind) in [
            ("gamma", SlotKind::BnGamma),
            ("beta", SlotKind::BnBeta),
            ("running_mean", SlotKind::RunningMean),
            ("running_var", SlotKind::RunningVar),
        ] {
            v.push(ParamSlot::new(format!("{prefix}bn.{name}"), vec, kind));
        }
    } else {
        v.push(ParamSlot::new(format!("{prefix}conv.bias"), vec, SlotKind::Bias));
    }
    Ok(v)
}

pub(crate) fn block_slots(b: &BlockSpec, prefix: &str) -> Result<Vec<ParamSlot>> {
    match b {
        BlockSpec::Conv(c) => conv_slots(c, prefix),
        BlockSpec::Dcac(d) => d.param_slots(prefix),
        BlockSpec::Aads(_) => Ok(Vec::new()),
    }
}

/// The redistribution convolution of a merging stage.
pub(crate) fn merge_conv(c_in: usize, c_out: usize) -> ConvBlockSpec {
    ConvBlockSpec::plain(c_in, c_out, 1)
}

pub(crate) struct StageLayout {
    pub columns: Vec<Vec<Range<usize>>>,
    pub merge: Option<(ConvBlockSpec, Range<usize>)>,
}

/// Slot ranges of every parameterized unit, aligned with the architecture.
pub(crate) struct Layout {
    pub slots: Vec<ParamSlot>,
    pub stem: Vec<Range<usize>>,
    pub stages: Vec<StageLayout>,
    pub head: Range<usize>,
    pub head_in: usize,
}

impl Layout {
    pub fn new(spec: &ArchitectureSpec) -> Result<Self> {
        let trace = ensure_valid(spec)?;
        let mut slots: Vec<ParamSlot> = Vec::new();
        let push = |slots: &mut Vec<ParamSlot>, new: Vec<ParamSlot>| {
            let start = slots.len();
            slots.extend(new);
            start..slots.len()
        };
        let mut stem = Vec::with_capacity(spec.stem.len());
        for (i, b) in spec.stem.iter().enumerate() {
            stem.push(push(&mut slots, block_slots(b, &format!("stem.{i}."))?));
        }
        let mut stages = Vec::with_capacity(spec.stages.len());
        let mut prev = trace.after_stem;
        for (si, st) in spec.stages.iter().enumerate() {
            let mut columns = Vec::with_capacity(st.columns.len());
            let mut concat = 0;
            for (ci, col) in st.columns.iter().enumerate() {
                let mut ranges = Vec::with_capacity(col.0.len());
                let mut d = prev;
                for (bi, b) in col.0.iter().enumerate() {
                    ranges.push(push(&mut slots, block_slots(b, &format!("stages.{si}.col{ci}.{bi}."))?));
                    d = super::propagate_block(b, d).expect("validated");
                }
                concat += d.0;
                columns.push(ranges);
            }
            let merge = match st.interaction {
                Interaction::Independent => None,
                Interaction::MergeAll => {
                    let m = merge_conv(concat, st.merge_channels.expect("validated"));
                    let r = push(&mut slots, conv_slots(&m, &format!("stages.{si}.merge."))?);
                    Some((m, r))
                }
            };
            stages.push(StageLayout { columns, merge });
            prev = trace.stages[si];
        }
        let head_in = prev.0;
        let k = spec.num_classes;
        let head = push(
            &mut slots,
            alloc::vec![
                ParamSlot::new("head.fc.weight", Shape::new(k, head_in, 1, 1)?, SlotKind::Weight { fan_in: head_in }),
                ParamSlot::new("head.fc.bias", Shape::vector(k)?, SlotKind::Bias),
            ],
        );
        Ok(Layout {
            slots,
            stem,
            stages,
            head,
            head_in,
        })
    }
}

/// Every parameter slot of `spec`, in storage order.
pub fn param_slots(spec: &ArchitectureSpec) -> Result<Vec<ParamSlot>> {
    Ok(Layout::new(spec)?.slots)
}

/// Fresh parameters: kaiming-uniform weights, zero biases, identity batch norms.
pub fn build<E: Real>(spec: &ArchitectureSpec, rng: &mut Rng) -> Result<ModelParams<E>> {
    ModelParams::init(param_slots(spec)?, rng)
}
