//! Stock architectures and ablation transforms.

use alloc::vec;
use alloc::vec::Vec;

use super::spec::{
    ArchitectureSpec, BlockSpec, ColumnSpec, ConvBlockSpec, HeadSpec, InputRes, Interaction, StageSpec,
};
use super::validate::{propagate_block, Dims};
use super::ensure_valid;
use crate::dcac::DcacSpec;
use crate::error::Result;

fn conv_g(c_in: usize, c_out: usize, k: usize, groups: usize) -> BlockSpec {
    BlockSpec::Conv(ConvBlockSpec {
        groups,
        ..ConvBlockSpec::plain(c_in, c_out, k)
    })
}

fn dcac(c_in: usize, c_out: usize, c_emb: usize, n_emb: usize, groups: usize) -> BlockSpec {
    BlockSpec::Dcac(DcacSpec {
        n_emb,
        groups_emb: groups,
        ..DcacSpec::new(c_in, c_out, c_emb, 2)
    })
}

fn col(blocks: Vec<BlockSpec>) -> ColumnSpec {
    ColumnSpec(blocks)
}

/// Small columnar backbone for 32×32 RGB inputs and 10 classes.
///
/// ```text
/// stem     conv3×3 3→16, AADS                                32→16 px
/// stage 1  independent: conv3×3 | conv1×1 + conv3×3/g2 | conv5×5/g4   16→48 ch
/// stage 2  merge_all, 3 × [DC-AC 48→32 (emb 16, g4), conv3×3 32→32]
///          merge 96→64                                       16→8 px
/// stage 3  merge_all, 2 × [DC-AC 64→64 (emb 32, 2 layers, g4), conv3×3/g4]
///          merge 128→128                                     8→4 px
/// head     global average pool, linear 128→10
/// ```
///
/// Early columns are independent and later ones interact; all spatial
/// reduction outside DC-AC blocks goes through AADS.
pub fn reference_spec() -> ArchitectureSpec {
    ArchitectureSpec {
        input_res: InputRes { c: 3, h: 32, w: 32 },
        num_classes: 10,
        stem: vec![BlockSpec::conv(3, 16, 3), BlockSpec::aads(3)],
        stages: vec![
            StageSpec {
                columns: vec![
                    col(vec![BlockSpec::conv(16, 16, 3)]),
                    col(vec![BlockSpec::conv(16, 16, 1), conv_g(16, 16, 3, 2)]),
                    col(vec![conv_g(16, 16, 5, 4)]),
                ],
                interaction: Interaction::Independent,
                merge_channels: None,
            },
            StageSpec {
                columns: (0..3)
                    .map(|_| col(vec![dcac(48, 32, 16, 1, 4), BlockSpec::conv(32, 32, 3)]))
                    .collect(),
                interaction: Interaction::MergeAll,
                merge_channels: Some(64),
            },
            StageSpec {
                columns: (0..2)
                    .map(|_| col(vec![dcac(64, 64, 32, 2, 4), conv_g(64, 64, 3, 4)]))
                    .collect(),
                interaction: Interaction::MergeAll,
                merge_channels: Some(128),
            },
        ],
        head: HeadSpec::default(),
    }
}

/// Two-stage network on 2×8×8 inputs with 3 classes, small enough for
/// exhaustive finite-difference checks.
pub fn micro_spec() -> ArchitectureSpec {
    let plain_pw = BlockSpec::Conv(ConvBlockSpec {
        bn: false,
        ..ConvBlockSpec::plain(4, 4, 1)
    });
    ArchitectureSpec {
        input_res: InputRes { c: 2, h: 8, w: 8 },
        num_classes: 3,
        stem: vec![BlockSpec::conv(2, 4, 3), BlockSpec::aads(3)],
        stages: vec![
            StageSpec {
                columns: vec![col(vec![BlockSpec::conv(4, 4, 3)]), col(vec![plain_pw])],
                interaction: Interaction::Independent,
                merge_channels: None,
            },
            StageSpec {
                columns: vec![
                    col(vec![BlockSpec::Dcac(DcacSpec::new(8, 4, 2, 2))]),
                    col(vec![dcac(8, 4, 4, 2, 2)]),
                ],
                interaction: Interaction::MergeAll,
                merge_channels: Some(6),
            },
        ],
        head: HeadSpec::default(),
    }
}

fn map_columns(
    spec: &ArchitectureSpec,
    mut f: impl FnMut(&[BlockSpec], Dims) -> Vec<BlockSpec>,
) -> Result<ArchitectureSpec> {
    let trace = ensure_valid(spec)?;
    let mut out = spec.clone();
    out.stem = f(&spec.stem, trace.input);
    let mut d = trace.after_stem;
    for (si, st) in out.stages.iter_mut().enumerate() {
        for c in st.columns.iter_mut() {
            c.0 = f(&c.0, d);
        }
        d = trace.stages[si];
    }
    Ok(out)
}

/// Replaces every DC-AC block by a 3×3 convolution with the same channel
/// contract and the block's condensation factor as stride.
pub fn without_dcac(spec: &ArchitectureSpec) -> Result<ArchitectureSpec> {
    map_columns(spec, |blocks, _| {
        blocks
            .iter()
            .map(|b| match b {
                BlockSpec::Dcac(d) => BlockSpec::Conv(ConvBlockSpec {
                    stride: if d.expand_output { 1 } else { d.condense },
                    ..ConvBlockSpec::plain(d.c_in, d.c_out, 3)
                }),
                other => other.clone(),
            })
            .collect()
    })
}

/// Replaces AADS with strided convolution: the stride moves into the
/// preceding spatial convolution when there is one, otherwise a 3×3
/// depthwise stride-2 convolution takes the block's place.
pub fn without_aads(spec: &ArchitectureSpec) -> Result<ArchitectureSpec> {
    map_columns(spec, |blocks, mut d| {
        let mut out: Vec<BlockSpec> = Vec::with_capacity(blocks.len());
        for b in blocks {
            if let BlockSpec::Aads(_) = b {
                if let Some(BlockSpec::Conv(prev)) = out.last_mut() {
                    if prev.stride == 1 && prev.k > 1 {
                        prev.stride = 2;
                        d = propagate_block(b, d).expect("validated");
                        continue;
                    }
                }
                out.push(BlockSpec::Conv(ConvBlockSpec {
                    stride: 2,
                    groups: d.0,
                    relu: false,
                    ..ConvBlockSpec::plain(d.0, d.0, 3)
                }));
            } else {
                out.push(b.clone());
            }
            d = propagate_block(b, d).expect("validated");
        }
        out
    })
}

/// Plain strided-convolution counterpart of `spec` with the same widths:
/// no DC-AC and no AADS.
pub fn strided_ablation(spec: &ArchitectureSpec) -> Result<ArchitectureSpec> {
    without_aads(&without_dcac(spec)?)
}
