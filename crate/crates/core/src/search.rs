//! Budget-constrained evolutionary search over a cell space.

use std::collections::{HashMap, HashSet};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fim::FimConfig;
use crate::graph::{count_flops, trainable_layer_count};
use crate::ranking::{compute_proxy, ProxyName};
use crate::space::{canonicalize, ArchEncoding, CanonicalGraph, SpaceSpec};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SearchConfig {
    pub iterations: usize,
    pub population_cap: usize,
    pub flops_budget: u64,
    pub objective: ProxyName,
    pub seed: u64,
    /// Random draws allowed while filling the initial population.
    pub seeding_attempts: usize,
    pub fim: FimConfig,
}

impl Default for SearchConfig {
    fn default() -> Self {
        Self {
            iterations: 1000,
            population_cap: 64,
            flops_budget: 1_000_000,
            objective: ProxyName::VkdnwSingle,
            seed: 0,
            seeding_attempts: 10_000,
            fim: FimConfig::default(),
        }
    }
}

impl SearchConfig {
    /// The large-scale setting: 100,000 iterations keeping the best 1,024
    /// architectures under roughly 450M FLOPs.
    pub fn reference() -> Self {
        Self {
            iterations: 100_000,
            population_cap: 1024,
            flops_budget: 450_000_000,
            ..Self::default()
        }
    }

    fn validate(&self, space: &SpaceSpec) -> Result<()> {
        if self.population_cap == 0 {
            return Err(Error::InvalidArgument("population cap must be at least 1".into()));
        }
        let floor = space.skeleton_flops();
        if self.flops_budget <= floor {
            return Err(Error::InvalidArgument(format!(
                "FLOPs budget {} does not exceed the fixed skeleton's {floor}",
                self.flops_budget
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Member {
    pub encoding: ArchEncoding,
    pub hash: u128,
    pub score: f64,
    pub flops: u64,
    pub aleph: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SearchResult {
    /// Final population, best first.
    pub population: Vec<Member>,
    /// Best score after seeding (entry 0) and after each iteration.
    pub trace: Vec<f64>,
    /// Distinct architectures scored.
    pub evaluations: usize,
}

impl SearchResult {
    pub fn best(&self) -> &Member {
        &self.population[0]
    }
}

/// Orders members best first; lower hash wins ties.
fn better(a: &Member, b: &Member) -> std::cmp::Ordering {
    b.score.total_cmp(&a.score).then(a.hash.cmp(&b.hash))
}

struct Scorer<'a> {
    cfg: &'a SearchConfig,
    cache: HashMap<u128, f64>,
}

impl Scorer<'_> {
    fn score(&mut self, graph: &CanonicalGraph) -> Result<f64> {
        if let Some(&s) = self.cache.get(&graph.hash) {
            return Ok(s);
        }
        let s = compute_proxy(self.cfg.objective, graph, &self.cfg.fim)?;
        if !s.is_finite() {
            return Err(Error::NanScore(format!("{:032x}", graph.hash)));
        }
        self.cache.insert(graph.hash, s);
        Ok(s)
    }

    /// `Some(member)` when the architecture fits the budget.
    fn evaluate(&mut self, enc: ArchEncoding, canonical: &CanonicalGraph) -> Result<Option<Member>> {
        let flops = count_flops(&canonical.graph);
        if flops > self.cfg.flops_budget {
            return Ok(None);
        }
        Ok(Some(Member {
            hash: canonical.hash,
            score: self.score(canonical)?,
            flops,
            aleph: trainable_layer_count(&canonical.graph),
            encoding: enc,
        }))
    }
}

pub fn evolve(space: &SpaceSpec, cfg: &SearchConfig) -> Result<SearchResult> {
    cfg.validate(space)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut scorer = Scorer {
        cfg,
        cache: HashMap::new(),
    };
    let mut population: Vec<Member> = Vec::with_capacity(cfg.population_cap + 1);
    let mut present: HashSet<u128> = HashSet::new();

    for _ in 0..cfg.seeding_attempts {
        if population.len() == cfg.population_cap {
            break;
        }
        let enc = space.random_encoding(&mut rng);
        let canonical = canonicalize(&space.decode(&enc)?);
        if present.contains(&canonical.hash) {
            continue;
        }
        if let Some(member) = scorer.evaluate(enc, &canonical)? {
            present.insert(member.hash);
            population.push(member);
        }
    }
    if population.is_empty() {
        return Err(Error::SeedingFailed {
            attempts: cfg.seeding_attempts,
        });
    }

    let best_of = |pop: &[Member]| pop.iter().map(|m| m.score).fold(f64::NEG_INFINITY, f64::max);
    let mut trace = Vec::with_capacity(cfg.iterations + 1);
    trace.push(best_of(&population));
    for _ in 0..cfg.iterations {
        let parent = &population[rng.random_range(0..population.len())];
        let child = space.mutate(&parent.encoding, rng.random())?;
        let canonical = canonicalize(&space.decode(&child)?);
        if !present.contains(&canonical.hash) {
            if let Some(member) = scorer.evaluate(child, &canonical)? {
                present.insert(member.hash);
                population.push(member);
                if population.len() > cfg.population_cap {
                    let worst = (0..population.len())
                        .max_by(|&a, &b| better(&population[a], &population[b]))
                        .expect("population is non-empty");
                    present.remove(&population.swap_remove(worst).hash);
                }
            }
        }
        trace.push(best_of(&population));
    }

    population.sort_by(better);
    Ok(SearchResult {
        population,
        trace,
        evaluations: scorer.cache.len(),
    })
}
