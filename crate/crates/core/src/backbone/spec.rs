//! Declarative architecture description.
//!
//! An [`ArchitectureSpec`] is a stem (a list of blocks), a sequence of
//! stages of parallel columns, and a classifier head. Every column of a
//! stage receives the full stage input. An [`Interaction::Independent`]
//! stage concatenates its column outputs channel-wise; an
//! [`Interaction::MergeAll`] stage additionally mixes the concatenation with
//! a pointwise redistribution convolution (followed by batch norm and relu)
//! whose output is the stage output.

use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::dcac::DcacSpec;

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConvBlockSpec {
    pub c_in: usize,
    pub c_out: usize,
    /// Square kernel size; odd. Padding is `(k − 1) / 2`.
    pub k: usize,
    pub stride: usize,
    pub groups: usize,
    /// Batch norm after the convolution (the convolution then has no bias).
    pub bn: bool,
    pub relu: bool,
}

impl ConvBlockSpec {
    /// `k×k`, stride 1, ungrouped, with batch norm and relu.
    pub fn plain(c_in: usize, c_out: usize, k: usize) -> Self {
        ConvBlockSpec {
            c_in,
            c_out,
            k,
            stride: 1,
            groups: 1,
            bn: true,
            relu: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AadsBlockSpec {
    /// Blur taps (odd, 1..=7).
    pub k: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BlockSpec {
    Conv(ConvBlockSpec),
    Dcac(DcacSpec),
    /// Anti-aliased stride-2 downsampling; channel count passes through.
    Aads(AadsBlockSpec),
}

impl BlockSpec {
    pub fn conv(c_in: usize, c_out: usize, k: usize) -> Self {
        BlockSpec::Conv(ConvBlockSpec::plain(c_in, c_out, k))
    }

    pub fn aads(k: usize) -> Self {
        BlockSpec::Aads(AadsBlockSpec { k })
    }

    /// Declared input channels; `None` for channel-agnostic blocks.
    pub fn c_in(&self) -> Option<usize> {
        match self {
            BlockSpec::Conv(c) => Some(c.c_in),
            BlockSpec::Dcac(d) => Some(d.c_in),
            BlockSpec::Aads(_) => None,
        }
    }

    pub fn kind_name(&self) -> &'static str {
        match self {
            BlockSpec::Conv(_) => "conv",
            BlockSpec::Dcac(_) => "dcac",
            BlockSpec::Aads(_) => "aads",
        }
    }

    /// Spatial reduction factor of the block.
    pub fn downsample(&self) -> usize {
        match self {
            BlockSpec::Conv(c) => c.stride,
            BlockSpec::Dcac(d) if !d.expand_output => d.condense,
            BlockSpec::Dcac(_) => 1,
            BlockSpec::Aads(_) => 2,
        }
    }
}

/// An ordered list of blocks.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ColumnSpec(pub Vec<BlockSpec>);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Interaction {
    Independent,
    MergeAll,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StageSpec {
    pub columns: Vec<ColumnSpec>,
    pub interaction: Interaction,
    /// Output channels of the redistribution convolution; required for
    /// `merge_all`, absent for `independent`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub merge_channels: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HeadPool {
    GlobalAvg,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HeadSpec {
    pub pool: HeadPool,
}

impl Default for HeadSpec {
    fn default() -> Self {
        HeadSpec {
            pool: HeadPool::GlobalAvg,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InputRes {
    pub c: usize,
    pub h: usize,
    pub w: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArchitectureSpec {
    pub input_res: InputRes,
    pub num_classes: usize,
    pub stem: Vec<BlockSpec>,
    pub stages: Vec<StageSpec>,
    pub head: HeadSpec,
}

impl ArchitectureSpec {
    /// Every block in definition order: stem, then stage by stage, column
    /// by column.
    pub fn blocks(&self) -> impl Iterator<Item = &BlockSpec> {
        self.stem
            .iter()
            .chain(self.stages.iter().flat_map(|s| s.columns.iter().flat_map(|c| c.0.iter())))
    }
}
