//! Closed-form parameter and multiply-accumulate counts.
//!
//! Parameters are learned scalars only; batch-norm running statistics are
//! buffers and are not counted. MACs count convolutions, the blur of AADS
//! blocks (as a depthwise `k×k` filter evaluated at the kept positions) and
//! the classifier. Pooling, normalization, activations and gating are free.

use super::layout::merge_conv;
use super::spec::{ArchitectureSpec, BlockSpec, ConvBlockSpec, Interaction};
use super::validate::{propagate_block, Dims};
use super::ensure_valid;
use crate::dcac::{dcac_mac_count, dcac_param_count};
use crate::error::Result;

fn conv_params(c: &ConvBlockSpec) -> usize {
    let w = c.c_out * (c.c_in / c.groups) * c.k * c.k;
    w + if c.bn { 2 * c.c_out } else { c.c_out }
}

fn conv_macs(c: &ConvBlockSpec, (_, h, w): Dims) -> u64 {
    let (oh, ow) = (h / c.stride, w / c.stride);
    (c.c_out * (c.c_in / c.groups) * c.k * c.k) as u64 * (oh * ow) as u64
}

/// Learned scalars of one block.
pub fn block_params(b: &BlockSpec) -> usize {
    match b {
        BlockSpec::Conv(c) => conv_params(c),
        BlockSpec::Dcac(d) => dcac_param_count(d),
        BlockSpec::Aads(_) => 0,
    }
}

/// MACs of one block applied to an input of size `dims`.
pub fn block_macs(b: &BlockSpec, dims: Dims) -> u64 {
    match b {
        BlockSpec::Conv(c) => conv_macs(c, dims),
        BlockSpec::Dcac(d) => dcac_mac_count(d, dims.1, dims.2),
        BlockSpec::Aads(a) => (a.k * a.k * dims.0) as u64 * ((dims.1 / 2) * (dims.2 / 2)) as u64,
    }
}

struct Tally {
    params: usize,
    macs: u64,
}

fn tally(spec: &ArchitectureSpec) -> Result<Tally> {
    let trace = ensure_valid(spec)?;
    let mut t = Tally { params: 0, macs: 0 };
    let column = |blocks: &[BlockSpec], mut d: Dims, t: &mut Tally| {
        for b in blocks {
            t.params += block_params(b);
            t.macs += block_macs(b, d);
            d = propagate_block(b, d).expect("validated");
        }
        d
    };
    let mut d = column(&spec.stem, trace.input, &mut t);
    for (si, st) in spec.stages.iter().enumerate() {
        let mut concat = 0;
        let mut hw = (d.1, d.2);
        for col in &st.columns {
            let o = column(&col.0, d, &mut t);
            concat += o.0;
            hw = (o.1, o.2);
        }
        if st.interaction == Interaction::MergeAll {
            let m = merge_conv(concat, st.merge_channels.expect("validated"));
            t.params += conv_params(&m);
            t.macs += conv_macs(&m, (concat, hw.0, hw.1));
        }
        d = trace.stages[si];
    }
    t.params += d.0 * spec.num_classes + spec.num_classes;
    t.macs += (d.0 * spec.num_classes) as u64;
    Ok(t)
}

/// Learned parameters of the whole network. Equals the number of
/// trainable scalars allocated by [`build`](super::build).
pub fn count_params(spec: &ArchitectureSpec) -> Result<usize> {
    Ok(tally(spec)?.params)
}

/// Per-image MACs at the architecture's input resolution.
pub fn count_macs(spec: &ArchitectureSpec) -> Result<u64> {
    Ok(tally(spec)?.macs)
}
