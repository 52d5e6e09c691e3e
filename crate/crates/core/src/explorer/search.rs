//! Generate-evaluate evolutionary loop.

use alloc::vec::Vec;
use core::cmp::Ordering;

use serde::{Deserialize, Serialize};

use super::constraints::{check_constraints, ConstraintSet, Verdicts};
use super::netscore::{NetScoreWeights, PerfRecord};
use super::ops::{crossover, mutate, sample_spec, SearchSpace};
use crate::backbone::ArchitectureSpec;
use crate::error::{Error, Result};
use crate::rng::{splitmix64, Rng};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SearchConfig {
    pub population: usize,
    pub generations: usize,
    /// Probability that a child is mutated after selection and crossover.
    /// Children identical to their first parent are always mutated.
    pub mutation_rate: f64,
    pub crossover_rate: f64,
    pub seed: u64,
    /// Training epochs the evaluator may spend per candidate.
    pub epochs: usize,
    #[serde(default)]
    pub weights: NetScoreWeights,
    #[serde(default)]
    pub space: SearchSpace,
}

impl Default for SearchConfig {
    fn default() -> Self {
        SearchConfig {
            population: 8,
            generations: 4,
            mutation_rate: 0.8,
            crossover_rate: 0.5,
            seed: 0,
            epochs: 2,
            weights: NetScoreWeights::default(),
            space: SearchSpace::default(),
        }
    }
}

impl SearchConfig {
    pub fn check(&self) -> Result<()> {
        if self.population < 2 || self.generations < 1 {
            return Err(Error::Search("population must be ≥ 2 and generations ≥ 1".into()));
        }
        if !(0.0..=1.0).contains(&self.mutation_rate) || !(0.0..=1.0).contains(&self.crossover_rate) {
            return Err(Error::Search("rates must lie in [0, 1]".into()));
        }
        self.space.check()
    }
}

/// One evaluated candidate; also the generation-log record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub generation: usize,
    pub index: usize,
    /// Seed of the stream that produced the candidate; also handed to the
    /// evaluator.
    pub seed: u64,
    pub spec: ArchitectureSpec,
    pub perf: PerfRecord,
    pub verdicts: Verdicts,
    pub feasible: bool,
    /// `perf.u` minus soft-constraint penalties.
    pub score: f64,
}

pub type LogRecord = Candidate;

#[derive(Debug, Clone)]
pub struct ExploreOutcome {
    pub best: Candidate,
    /// Every evaluation, ordered by `(generation, index)`.
    pub log: Vec<LogRecord>,
}

impl ExploreOutcome {
    /// Highest-scoring feasible record, earliest on ties.
    pub fn argmax(log: &[LogRecord]) -> Option<&LogRecord> {
        let mut best: Option<&LogRecord> = None;
        for r in log.iter().filter(|r| r.feasible) {
            if best.is_none_or(|b| r.score.total_cmp(&b.score) == Ordering::Greater) {
                best = Some(r);
            }
        }
        best
    }
}

fn candidate_seed(seed: u64, generation: usize, index: usize) -> u64 {
    let mut s = seed ^ (generation as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    splitmix64(&mut s);
    s ^= (index as u64).wrapping_mul(0xD1B5_4A32_D192_ED03);
    splitmix64(&mut s)
}

/// Feasible first, then by score.
fn better(a: &Candidate, b: &Candidate) -> bool {
    (a.feasible, a.score).partial_cmp(&(b.feasible, b.score)) == Some(Ordering::Greater)
}

fn tournament<'a>(rng: &mut Rng, pool: &[&'a Candidate]) -> &'a Candidate {
    let a = pool[rng.below(pool.len())];
    let b = pool[rng.below(pool.len())];
    if better(b, a) {
        b
    } else {
        a
    }
}

/// Searches for the feasible architecture with the highest score.
///
/// `evaluate` receives each candidate with its seed. Generation 0 is
/// sampled; later generations are bred from the previous generation plus
/// the best candidate so far. Infeasible candidates are logged but never
/// returned; if no candidate is feasible the search fails.
pub fn explore<F>(cfg: &SearchConfig, cs: &ConstraintSet, mut evaluate: F) -> Result<ExploreOutcome>
where
    F: FnMut(&ArchitectureSpec, u64) -> Result<PerfRecord>,
{
    cfg.check()?;
    let sp = &cfg.space;
    let mut log: Vec<Candidate> = Vec::with_capacity(cfg.population * cfg.generations);
    for g in 0..cfg.generations {
        let prev_start = log.len().saturating_sub(cfg.population);
        for i in 0..cfg.population {
            let seed = candidate_seed(cfg.seed, g, i);
            let mut rng = Rng::new(seed);
            let spec = if g == 0 {
                sample_spec(&mut rng, sp)?
            } else {
                let mut pool: Vec<&Candidate> = log[prev_start..prev_start + cfg.population].iter().collect();
                if let Some(b) = ExploreOutcome::argmax(&log) {
                    pool.push(b);
                }
                let p1 = tournament(&mut rng, &pool);
                let mut child = if rng.chance(cfg.crossover_rate) {
                    let p2 = tournament(&mut rng, &pool);
                    crossover(&p1.spec, &p2.spec, &mut rng, sp)?
                } else {
                    p1.spec.clone()
                };
                if child == p1.spec || rng.chance(cfg.mutation_rate) {
                    child = mutate(&child, &mut rng, sp)?;
                }
                child
            };
            let perf = evaluate(&spec, seed)?;
            let verdicts = check_constraints(&spec, Some(&perf), cs)?;
            let feasible = verdicts.feasible(cs);
            let score = perf.u - verdicts.penalty(cs);
            log.push(Candidate {
                generation: g,
                index: i,
                seed,
                spec,
                perf,
                verdicts,
                feasible,
                score,
            });
        }
    }
    let best = ExploreOutcome::argmax(&log)
        .cloned()
        .ok_or_else(|| Error::Search(alloc::format!("none of the {} candidates was feasible", log.len())))?;
    Ok(ExploreOutcome { best, log })
}
