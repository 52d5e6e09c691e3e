//! Columnar backbones: description, validation, parameters, execution and
//! cost model.

mod cost;
mod exec;
mod layout;
mod reference;
pub mod spec;
mod validate;

pub use cost::{block_macs, block_params, count_macs, count_params};
pub use exec::{Network, NetworkGrads, NetworkTape, StageTrace};
pub use layout::{build, param_slots};
pub use reference::{micro_spec, reference_spec, strided_ablation, without_aads, without_dcac};
pub use spec::{
    AadsBlockSpec, ArchitectureSpec, BlockSpec, ColumnSpec, ConvBlockSpec, HeadPool, HeadSpec, InputRes,
    Interaction, StageSpec,
};
pub use validate::{propagate_block, validate, Dims, Rule, ShapeTrace, Violation};

use crate::error::Error;

/// Runs [`validate`] and folds the violations into one error.
pub fn ensure_valid(spec: &ArchitectureSpec) -> crate::Result<ShapeTrace> {
    validate(spec).map_err(|v| {
        let msgs: alloc::vec::Vec<alloc::string::String> = v.iter().map(|v| alloc::format!("{v}")).collect();
        Error::InvalidSpec(msgs.join("; "))
    })
}
