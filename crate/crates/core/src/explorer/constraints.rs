use serde::{Deserialize, Serialize};

use super::netscore::PerfRecord;
use crate::backbone::{ensure_valid, validate, ArchitectureSpec, BlockSpec, Interaction, Rule};
use crate::error::{Error, Result};

/// How the two "encouraging" rules (columnar design and AADS) are applied.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Enforcement {
    /// A failure makes the candidate infeasible.
    Hard,
    /// A failure subtracts `penalty` from the score instead.
    Soft { penalty: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConstraintSet {
    /// At least one stage with two or more columns, and at least one
    /// independent stage.
    pub require_columnar: bool,
    /// No 1×1 convolution with stride above 1.
    pub forbid_pointwise_strided: bool,
    /// Every spatial reduction outside a DC-AC condenser is an AADS block.
    pub require_aads: bool,
    /// Minimum top-1 percent; `None` disables the check.
    #[serde(default)]
    pub accuracy_floor: Option<f64>,
    #[serde(default = "hard")]
    pub enforcement: Enforcement,
}

fn hard() -> Enforcement {
    Enforcement::Hard
}

impl Default for ConstraintSet {
    /// The three structural rules, hard, without an accuracy floor.
    fn default() -> Self {
        ConstraintSet {
            require_columnar: true,
            forbid_pointwise_strided: true,
            require_aads: true,
            accuracy_floor: None,
            enforcement: Enforcement::Hard,
        }
    }
}

impl ConstraintSet {
    pub fn structural() -> Self {
        Self::default()
    }

    pub fn with_floor(self, floor: f64) -> Self {
        ConstraintSet {
            accuracy_floor: Some(floor),
            ..self
        }
    }
}

/// One entry per rule, in order columnar, pointwise-strided, AADS,
/// accuracy; `None` when the rule is disabled.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Verdicts(pub [Option<bool>; 4]);

impl Verdicts {
    pub fn columnar(&self) -> Option<bool> {
        self.0[0]
    }

    pub fn pointwise(&self) -> Option<bool> {
        self.0[1]
    }

    pub fn aads(&self) -> Option<bool> {
        self.0[2]
    }

    pub fn accuracy(&self) -> Option<bool> {
        self.0[3]
    }

    /// Every enabled rule passes.
    pub fn all(&self) -> bool {
        self.0.iter().all(|v| v.unwrap_or(true))
    }

    /// Feasibility under `cs`: soft rules never make a candidate infeasible.
    pub fn feasible(&self, cs: &ConstraintSet) -> bool {
        let soft = matches!(cs.enforcement, Enforcement::Soft { .. });
        self.0
            .iter()
            .enumerate()
            .all(|(i, v)| v.unwrap_or(true) || (soft && (i == 0 || i == 2)))
    }

    /// Score deduction under soft enforcement.
    pub fn penalty(&self, cs: &ConstraintSet) -> f64 {
        match cs.enforcement {
            Enforcement::Hard => 0.0,
            Enforcement::Soft { penalty } => {
                [self.0[0], self.0[2]].iter().filter(|v| **v == Some(false)).count() as f64 * penalty
            }
        }
    }
}

fn columnar(spec: &ArchitectureSpec) -> bool {
    spec.stages.iter().any(|s| s.columns.len() >= 2)
        && spec.stages.iter().any(|s| s.interaction == Interaction::Independent)
}

fn no_pointwise_strided(spec: &ArchitectureSpec) -> bool {
    !spec
        .blocks()
        .any(|b| matches!(b, BlockSpec::Conv(c) if c.k == 1 && c.stride > 1))
}

fn aads_only(spec: &ArchitectureSpec) -> bool {
    spec.blocks().all(|b| match b {
        BlockSpec::Conv(c) => c.stride == 1,
        BlockSpec::Dcac(_) | BlockSpec::Aads(_) => true,
    })
}

/// Evaluates `cs` on `spec`. `perf` is needed only when an accuracy floor
/// is set.
pub fn check_constraints(spec: &ArchitectureSpec, perf: Option<&PerfRecord>, cs: &ConstraintSet) -> Result<Verdicts> {
    // a pointwise strided convolution is a rule verdict here, not an error
    if let Err(v) = validate(spec) {
        if v.iter().any(|v| v.rule != Rule::PointwiseStrided) {
            ensure_valid(spec)?;
        }
    }
    let accuracy = match (cs.accuracy_floor, perf) {
        (None, _) => None,
        (Some(floor), Some(p)) => Some(p.a >= floor),
        (Some(_), None) => {
            return Err(Error::arg("an accuracy floor is set but no performance record was given"));
        }
    };
    Ok(Verdicts([
        cs.require_columnar.then(|| columnar(spec)),
        cs.forbid_pointwise_strided.then(|| no_pointwise_strided(spec)),
        cs.require_aads.then(|| aads_only(spec)),
        accuracy,
    ]))
}
