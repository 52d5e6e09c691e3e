//! Constrained architecture search.
//!
//! Candidates are scored with NetScore and filtered by the design-rule
//! [`ConstraintSet`]. New candidates come from [`sample_spec`], [`mutate`]
//! and [`crossover`], all of which only emit specs that validate and satisfy
//! the three structural rules.

mod constraints;
mod netscore;
mod ops;
mod search;

pub use constraints::{check_constraints, ConstraintSet, Enforcement, Verdicts};
pub use netscore::{netscore, NetScoreWeights, PerfRecord};
pub use ops::{crossover, mutate, rethread, sample_spec, structurally_sound, SearchSpace};
pub use search::{explore, Candidate, ExploreOutcome, LogRecord, SearchConfig};
