//! Symbolic shape propagation and contract checks.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use super::spec::{ArchitectureSpec, BlockSpec, Interaction};
use crate::aads::{make_blur_kernel, MAX_BLUR_TAPS};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Rule {
    ChannelMismatch,
    /// A 1×1 convolution with stride > 1.
    PointwiseStrided,
    Resolution,
    BlockParams,
    StageStructure,
    Head,
    InputRes,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Violation {
    /// Path to the offending element, e.g. `stages[1].columns[0][2] (dcac)`.
    pub location: String,
    pub rule: Rule,
    pub message: String,
}

impl core::fmt::Display for Violation {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        write!(f, "{}: {}", self.location, self.message)
    }
}

/// `(channels, height, width)` of an activation, batch excluded.
pub type Dims = (usize, usize, usize);

/// Output dims of one block, or the rule it breaks.
pub fn propagate_block(block: &BlockSpec, (c, h, w): Dims) -> Result<Dims, (Rule, String)> {
    match block {
        BlockSpec::Conv(cv) => {
            if cv.k == 1 && cv.stride > 1 {
                return Err((
                    Rule::PointwiseStrided,
                    format!(
                        "1×1 convolution with stride {}: pointwise strided convolutions are not allowed",
                        cv.stride
                    ),
                ));
            }
            if cv.c_in != c {
                return Err((
                    Rule::ChannelMismatch,
                    format!("conv expects {} input channels but receives {c}", cv.c_in),
                ));
            }
            if cv.k % 2 == 0 || cv.c_out == 0 || !(1..=2).contains(&cv.stride) {
                return Err((
                    Rule::BlockParams,
                    format!("conv needs odd k, positive c_out and stride 1 or 2 (k={}, stride={})", cv.k, cv.stride),
                ));
            }
            if cv.groups == 0 || cv.c_in % cv.groups != 0 || cv.c_out % cv.groups != 0 {
                return Err((
                    Rule::BlockParams,
                    format!("groups={} must divide c_in={} and c_out={}", cv.groups, cv.c_in, cv.c_out),
                ));
            }
            if h % cv.stride != 0 || w % cv.stride != 0 {
                return Err((
                    Rule::Resolution,
                    format!("{h}×{w} input is not divisible by stride {}", cv.stride),
                ));
            }
            Ok((cv.c_out, h / cv.stride, w / cv.stride))
        }
        BlockSpec::Dcac(d) => {
            if d.c_in != c {
                return Err((
                    Rule::ChannelMismatch,
                    format!("dcac expects {} input channels but receives {c}", d.c_in),
                ));
            }
            d.validate().map_err(|e| (Rule::BlockParams, format!("{e}")))?;
            let s = d.condense;
            if h % s != 0 || w % s != 0 {
                return Err((
                    Rule::Resolution,
                    format!("{h}×{w} input is not divisible by condensation factor {s}"),
                ));
            }
            if d.expand_output {
                Ok((d.c_out, h, w))
            } else {
                Ok((d.c_out, h / s, w / s))
            }
        }
        BlockSpec::Aads(a) => {
            let kernel = make_blur_kernel(a.k).map_err(|_| {
                (
                    Rule::BlockParams,
                    format!("aads blur length must be odd and at most {MAX_BLUR_TAPS}, got {}", a.k),
                )
            })?;
            if h % 2 != 0 || w % 2 != 0 || h <= kernel.pad() || w <= kernel.pad() {
                return Err((
                    Rule::Resolution,
                    format!("aads needs even height and width larger than {}, got {h}×{w}", kernel.pad()),
                ));
            }
            Ok((c, h / 2, w / 2))
        }
    }
}

fn at(location: String, block: &BlockSpec, (rule, message): (Rule, String)) -> Violation {
    Violation {
        location: format!("{location} ({})", block.kind_name()),
        rule,
        message,
    }
}

/// Propagates shapes through `blocks`; stops at the first failure.
fn run_column(blocks: &[BlockSpec], mut dims: Dims, prefix: &str) -> Result<Dims, Violation> {
    for (i, b) in blocks.iter().enumerate() {
        dims = propagate_block(b, dims).map_err(|e| at(format!("{prefix}[{i}]"), b, e))?;
    }
    Ok(dims)
}

/// Dims after the stem and after every stage, for a spec that validates.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ShapeTrace {
    pub input: Dims,
    pub after_stem: Dims,
    /// Per stage: the stage output.
    pub stages: Vec<Dims>,
}

/// Full symbolic check. Returns every violation found; within a column
/// only the first failure is reported, and checking stops after the first
/// stage whose output cannot be determined.
pub fn validate(spec: &ArchitectureSpec) -> Result<ShapeTrace, Vec<Violation>> {
    let mut errs = Vec::new();
    let r = spec.input_res;
    if r.c == 0 || r.h == 0 || r.w == 0 {
        errs.push(Violation {
            location: "input_res".into(),
            rule: Rule::InputRes,
            message: "input resolution must be positive".into(),
        });
        return Err(errs);
    }
    if spec.num_classes == 0 {
        errs.push(Violation {
            location: "num_classes".into(),
            rule: Rule::Head,
            message: "at least one class is required".into(),
        });
    }
    let input = (r.c, r.h, r.w);
    let after_stem = match run_column(&spec.stem, input, "stem") {
        Ok(d) => d,
        Err(v) => {
            errs.push(v);
            return Err(errs);
        }
    };
    let mut dims = after_stem;
    let mut stages = Vec::with_capacity(spec.stages.len());
    for (si, stage) in spec.stages.iter().enumerate() {
        let loc = format!("stages[{si}]");
        let mut structural = |message: String| {
            errs.push(Violation {
                location: loc.clone(),
                rule: Rule::StageStructure,
                message,
            })
        };
        if stage.columns.is_empty() {
            structural("stage has no columns".into());
        }
        match (stage.interaction, stage.merge_channels) {
            (Interaction::Independent, Some(_)) => {
                structural("independent stage must not declare merge_channels".into())
            }
            (Interaction::MergeAll, None | Some(0)) => {
                structural("merge_all stage needs positive merge_channels".into())
            }
            _ => {}
        }
        let mut outs = Vec::with_capacity(stage.columns.len());
        let mut column_failed = false;
        for (ci, col) in stage.columns.iter().enumerate() {
            let prefix = format!("stages[{si}].columns[{ci}]");
            if col.0.is_empty() {
                errs.push(Violation {
                    location: prefix,
                    rule: Rule::StageStructure,
                    message: "column has no blocks".into(),
                });
                column_failed = true;
                continue;
            }
            match run_column(&col.0, dims, &prefix) {
                Ok(d) => outs.push(d),
                Err(v) => {
                    errs.push(v);
                    column_failed = true;
                }
            }
        }
        if column_failed || outs.is_empty() {
            return Err(errs);
        }
        let (h0, w0) = (outs[0].1, outs[0].2);
        if outs.iter().any(|d| (d.1, d.2) != (h0, w0)) {
            errs.push(Violation {
                location: loc,
                rule: Rule::Resolution,
                message: format!(
                    "columns disagree on output resolution: {:?}",
                    outs.iter().map(|d| (d.1, d.2)).collect::<Vec<_>>()
                ),
            });
            return Err(errs);
        }
        let concat: usize = outs.iter().map(|d| d.0).sum();
        dims = match stage.interaction {
            Interaction::Independent => (concat, h0, w0),
            Interaction::MergeAll => (stage.merge_channels.unwrap_or(concat).max(1), h0, w0),
        };
        stages.push(dims);
    }
    if errs.is_empty() {
        Ok(ShapeTrace {
            input,
            after_stem,
            stages,
        })
    } else {
        Err(errs)
    }
}
