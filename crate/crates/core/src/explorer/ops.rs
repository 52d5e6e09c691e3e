//! Candidate generation: sampling, mutation, crossover and channel repair.

use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::constraints::{check_constraints, ConstraintSet};
use crate::backbone::{
    count_params, validate, ArchitectureSpec, BlockSpec, ColumnSpec, ConvBlockSpec, HeadSpec, InputRes,
    Interaction, StageSpec,
};
use crate::dcac::DcacSpec;
use crate::error::{Error, Result};
use crate::rng::Rng;

/// Bounds of the space candidates are drawn from.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SearchSpace {
    pub input_res: InputRes,
    pub num_classes: usize,
    pub min_stages: usize,
    pub max_stages: usize,
    /// Columns per stage; at least 2.
    pub max_columns: usize,
    /// Blocks per column, counting AADS blocks.
    pub max_blocks: usize,
    /// Channel widths to choose from.
    pub widths: Vec<usize>,
    #[serde(default)]
    pub max_params: Option<usize>,
    /// Draws per operator call before giving up.
    pub max_attempts: usize,
}

impl Default for SearchSpace {
    fn default() -> Self {
        SearchSpace {
            input_res: InputRes { c: 3, h: 32, w: 32 },
            num_classes: 10,
            min_stages: 2,
            max_stages: 3,
            max_columns: 3,
            max_blocks: 3,
            widths: vec![8, 16, 24, 32, 48, 64],
            max_params: Some(200_000),
            max_attempts: 200,
        }
    }
}

impl SearchSpace {
    pub fn check(&self) -> Result<()> {
        let r = self.input_res;
        if r.c == 0 || r.h < 4 || r.w < 4 || r.h % 2 != 0 || r.w % 2 != 0 {
            return Err(Error::Search("input resolution must be even and at least 4×4".into()));
        }
        if self.num_classes == 0 || self.min_stages == 0 || self.max_stages < self.min_stages {
            return Err(Error::Search("need classes and 1 ≤ min_stages ≤ max_stages".into()));
        }
        if self.max_columns < 2 || self.max_blocks < 2 {
            return Err(Error::Search("max_columns and max_blocks must be at least 2".into()));
        }
        if self.widths.is_empty() || self.widths.contains(&0) || self.max_attempts == 0 {
            return Err(Error::Search("widths must be positive and non-empty; max_attempts ≥ 1".into()));
        }
        Ok(())
    }

    fn width(&self, rng: &mut Rng) -> usize {
        *rng.choose(&self.widths)
    }

    /// Whether `spec` lies inside these bounds.
    fn contains(&self, spec: &ArchitectureSpec) -> bool {
        spec.input_res == self.input_res
            && spec.num_classes == self.num_classes
            && (self.min_stages..=self.max_stages).contains(&spec.stages.len())
            && spec.stages.iter().all(|s| {
                (1..=self.max_columns).contains(&s.columns.len())
                    && s.columns.iter().all(|c| (1..=self.max_blocks).contains(&c.0.len()))
            })
            && match self.max_params {
                Some(m) => count_params(spec).is_ok_and(|p| p <= m),
                None => true,
            }
    }
}

/// Validates and satisfies the columnar, pointwise-strided and AADS rules.
pub fn structurally_sound(spec: &ArchitectureSpec) -> bool {
    validate(spec).is_ok()
        && check_constraints(spec, None, &ConstraintSet::structural()).is_ok_and(|v| v.all())
}

fn gcd(a: usize, b: usize) -> usize {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

fn fix_block(b: &mut BlockSpec, c: usize) -> usize {
    match b {
        BlockSpec::Conv(cv) => {
            cv.c_in = c;
            cv.groups = gcd(cv.groups.max(1), gcd(cv.c_in, cv.c_out)).max(1);
            cv.c_out
        }
        BlockSpec::Dcac(d) => {
            d.c_in = c;
            d.c_emb = d.c_emb.clamp(1, c);
            d.groups_emb = gcd(d.groups_emb.max(1), gcd(d.c_in, d.c_emb)).max(1);
            d.c_out
        }
        BlockSpec::Aads(_) => c,
    }
}

/// Re-threads channel counts front to back: every block's input channels
/// become what actually reaches it, group counts shrink to a common
/// divisor, attention widths are capped at the input width and merge
/// widths are filled in or cleared to match the interaction.
pub fn rethread(spec: &mut ArchitectureSpec) {
    let mut c = spec.input_res.c;
    for b in spec.stem.iter_mut() {
        c = fix_block(b, c);
    }
    for st in spec.stages.iter_mut() {
        let mut concat = 0;
        for col in st.columns.iter_mut() {
            let mut cc = c;
            for b in col.0.iter_mut() {
                cc = fix_block(b, cc);
            }
            concat += cc;
        }
        c = match st.interaction {
            Interaction::Independent => {
                st.merge_channels = None;
                concat
            }
            Interaction::MergeAll => *st.merge_channels.get_or_insert(concat),
        };
    }
}

fn conv(c_in: usize, c_out: usize, k: usize, groups: usize) -> BlockSpec {
    BlockSpec::Conv(ConvBlockSpec {
        groups,
        ..ConvBlockSpec::plain(c_in, c_out, k)
    })
}

fn random_dcac(rng: &mut Rng, c_in: usize, c_out: usize, condense: usize) -> BlockSpec {
    let c_emb = (c_in / *rng.choose(&[1, 2, 4])).max(1);
    BlockSpec::Dcac(DcacSpec {
        n_emb: rng.between(1, 2),
        groups_emb: *rng.choose(&[1, 2, 4]),
        ..DcacSpec::new(c_in, c_out, c_emb, condense)
    })
}

fn random_column(rng: &mut Rng, sp: &SearchSpace, c_in: usize, down: bool) -> ColumnSpec {
    let n = rng.between(1, sp.max_blocks);
    let at = rng.below(n);
    let mut c = c_in;
    let mut blocks = Vec::with_capacity(n);
    for i in 0..n {
        let w = sp.width(rng);
        let b = if down && i == at {
            if rng.chance(0.6) {
                random_dcac(rng, c, w, 2)
            } else {
                BlockSpec::aads(*rng.choose(&[3, 5]))
            }
        } else if rng.chance(0.3) {
            random_dcac(rng, c, w, 1)
        } else {
            let k = *rng.choose(&[1, 3, 3, 5]);
            conv(c, w, k, *rng.choose(&[1, 1, 2, 4]))
        };
        c = fix_block(&mut b.clone(), c);
        blocks.push(b);
    }
    ColumnSpec(blocks)
}

fn sample_once(rng: &mut Rng, sp: &SearchSpace) -> ArchitectureSpec {
    let r = sp.input_res;
    let w0 = sp.width(rng);
    let stem = vec![conv(r.c, w0, 3, 1), BlockSpec::aads(*rng.choose(&[3, 5]))];
    let mut res = r.h.min(r.w) / 2;
    let n_stages = rng.between(sp.min_stages, sp.max_stages);
    let mut c = w0;
    let mut stages = Vec::with_capacity(n_stages);
    for s in 0..n_stages {
        let (n_cols, interaction) = if s == 0 {
            (rng.between(2, sp.max_columns), Interaction::Independent)
        } else {
            let i = if rng.chance(0.7) {
                Interaction::MergeAll
            } else {
                Interaction::Independent
            };
            (rng.between(1, sp.max_columns), i)
        };
        let down = s > 0 && res >= 8 && res % 2 == 0 && rng.chance(0.7);
        if down {
            res /= 2;
        }
        let columns: Vec<ColumnSpec> = (0..n_cols).map(|_| random_column(rng, sp, c, down)).collect();
        let mut st = StageSpec {
            columns,
            interaction,
            merge_channels: (interaction == Interaction::MergeAll).then(|| sp.width(rng)),
        };
        let mut probe = ArchitectureSpec {
            input_res: InputRes { c, h: 1, w: 1 },
            num_classes: 1,
            stem: vec![],
            stages: vec![st.clone()],
            head: HeadSpec::default(),
        };
        rethread(&mut probe);
        st = probe.stages.pop().expect("one stage");
        c = match st.merge_channels {
            Some(m) => m,
            None => st.columns.iter().map(|col| out_channels(&col.0, c)).sum(),
        };
        stages.push(st);
    }
    let mut spec = ArchitectureSpec {
        input_res: r,
        num_classes: sp.num_classes,
        stem,
        stages,
        head: HeadSpec::default(),
    };
    rethread(&mut spec);
    spec
}

fn out_channels(blocks: &[BlockSpec], mut c: usize) -> usize {
    for b in blocks {
        c = match b {
            BlockSpec::Conv(cv) => cv.c_out,
            BlockSpec::Dcac(d) => d.c_out,
            BlockSpec::Aads(_) => c,
        };
    }
    c
}

fn acceptable(spec: &ArchitectureSpec, sp: &SearchSpace) -> bool {
    sp.contains(spec) && structurally_sound(spec)
}

/// Draws a random spec inside `sp` that validates and satisfies the three
/// structural rules.
pub fn sample_spec(rng: &mut Rng, sp: &SearchSpace) -> Result<ArchitectureSpec> {
    sp.check()?;
    for _ in 0..sp.max_attempts {
        let s = sample_once(rng, sp);
        if acceptable(&s, sp) {
            return Ok(s);
        }
    }
    Err(Error::Search(alloc::format!(
        "no acceptable architecture after {} draws; the bounds may be infeasible",
        sp.max_attempts
    )))
}

/// Mutable handles to every block of the stages (stem excluded).
fn stage_blocks(spec: &mut ArchitectureSpec) -> Vec<&mut BlockSpec> {
    spec.stages
        .iter_mut()
        .flat_map(|s| s.columns.iter_mut().flat_map(|c| c.0.iter_mut()))
        .collect()
}

fn mutate_once(spec: &mut ArchitectureSpec, rng: &mut Rng, sp: &SearchSpace) {
    let n_stages = spec.stages.len();
    match rng.below(9) {
        0 => {
            // width of a block
            let w = sp.width(rng);
            let ArchitectureSpec { stem, stages, .. } = spec;
            let mut all: Vec<&mut BlockSpec> = stem.iter_mut().collect();
            all.extend(stages.iter_mut().flat_map(|s| s.columns.iter_mut().flat_map(|c| c.0.iter_mut())));
            let i = rng.below(all.len());
            match &mut all[i] {
                BlockSpec::Conv(c) => c.c_out = w,
                BlockSpec::Dcac(d) => d.c_out = w,
                BlockSpec::Aads(_) => {}
            }
        }
        1 => {
            // kernel or groups of a stride-1 convolution
            let k = *rng.choose(&[1, 3, 5]);
            let g = *rng.choose(&[1, 2, 4]);
            let mut convs: Vec<&mut ConvBlockSpec> = stage_blocks(spec)
                .into_iter()
                .filter_map(|b| match b {
                    BlockSpec::Conv(c) if c.stride == 1 => Some(c),
                    _ => None,
                })
                .collect();
            if !convs.is_empty() {
                let i = rng.below(convs.len());
                if rng.chance(0.5) {
                    convs[i].k = k;
                } else {
                    convs[i].groups = g;
                }
            }
        }
        2 => {
            let s = rng.below(n_stages);
            let st = &mut spec.stages[s];
            st.interaction = match st.interaction {
                Interaction::Independent => Interaction::MergeAll,
                Interaction::MergeAll => Interaction::Independent,
            };
            st.merge_channels = None;
        }
        3 => {
            let s = rng.below(n_stages);
            let st = &mut spec.stages[s];
            if st.columns.len() < sp.max_columns {
                let c = rng.below(st.columns.len());
                let dup = st.columns[c].clone();
                st.columns.insert(rng.below(st.columns.len() + 1), dup);
            }
        }
        4 => {
            let s = rng.below(n_stages);
            let st = &mut spec.stages[s];
            if st.columns.len() > 1 {
                let c = rng.below(st.columns.len());
                st.columns.remove(c);
            }
        }
        5 => {
            // insert a 3×3 convolution
            let w = sp.width(rng);
            let s = rng.below(n_stages);
            let st = &mut spec.stages[s];
            let c = rng.below(st.columns.len());
            let col = &mut st.columns[c].0;
            if col.len() < sp.max_blocks {
                col.insert(rng.below(col.len() + 1), conv(0, w, 3, 1));
            }
        }
        6 => {
            // drop a block that does not change resolution
            let s = rng.below(n_stages);
            let st = &mut spec.stages[s];
            let c = rng.below(st.columns.len());
            let col = &mut st.columns[c].0;
            let keep: Vec<usize> = (0..col.len()).filter(|i| col[*i].downsample() == 1).collect();
            if col.len() > 1 && !keep.is_empty() {
                col.remove(keep[rng.below(keep.len())]);
            }
        }
        7 => {
            let mut ds: Vec<&mut DcacSpec> = stage_blocks(spec)
                .into_iter()
                .filter_map(|b| match b {
                    BlockSpec::Dcac(d) => Some(d),
                    _ => None,
                })
                .collect();
            if !ds.is_empty() {
                let i = rng.below(ds.len());
                let d = &mut ds[i];
                match rng.below(3) {
                    0 => d.c_emb = (d.c_emb * 2).min(d.c_in),
                    1 => d.c_emb = (d.c_emb / 2).max(1),
                    _ => d.n_emb = rng.between(1, 3),
                }
            }
        }
        _ => {
            let merging: Vec<usize> = (0..n_stages)
                .filter(|i| spec.stages[*i].interaction == Interaction::MergeAll)
                .collect();
            if !merging.is_empty() {
                let s = merging[rng.below(merging.len())];
                spec.stages[s].merge_channels = Some(sp.width(rng));
            }
        }
    }
    rethread(spec);
}

/// A changed copy of `spec` that stays inside `sp`, validates and satisfies
/// the structural rules. `input_res` and `num_classes` are never touched.
pub fn mutate(spec: &ArchitectureSpec, rng: &mut Rng, sp: &SearchSpace) -> Result<ArchitectureSpec> {
    sp.check()?;
    for _ in 0..sp.max_attempts {
        let mut s = spec.clone();
        mutate_once(&mut s, rng, sp);
        if s != *spec && acceptable(&s, sp) {
            return Ok(s);
        }
    }
    Err(Error::Search(alloc::format!(
        "no acceptable mutation after {} attempts",
        sp.max_attempts
    )))
}

/// Stage-wise uniform crossover: the stem and each stage come from either
/// parent, the stage count from one of them. Falls back to `a` when no
/// acceptable child turns up.
pub fn crossover(a: &ArchitectureSpec, b: &ArchitectureSpec, rng: &mut Rng, sp: &SearchSpace) -> Result<ArchitectureSpec> {
    sp.check()?;
    for _ in 0..sp.max_attempts {
        let n = if rng.chance(0.5) { a.stages.len() } else { b.stages.len() };
        let pick = |rng: &mut Rng, i: usize| -> Option<StageSpec> {
            let (first, second) = if rng.chance(0.5) { (a, b) } else { (b, a) };
            first.stages.get(i).or_else(|| second.stages.get(i)).cloned()
        };
        let mut stages = Vec::with_capacity(n);
        for i in 0..n {
            stages.extend(pick(rng, i));
        }
        let mut child = ArchitectureSpec {
            input_res: a.input_res,
            num_classes: a.num_classes,
            stem: if rng.chance(0.5) { a.stem.clone() } else { b.stem.clone() },
            stages,
            head: a.head.clone(),
        };
        rethread(&mut child);
        if acceptable(&child, sp) {
            return Ok(child);
        }
    }
    if acceptable(a, sp) {
        Ok(a.clone())
    } else {
        Err(Error::Search("crossover parents lie outside the search space".into()))
    }
}
