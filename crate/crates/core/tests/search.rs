use std::collections::HashSet;

use proptest::prelude::*;
use vkdnw_core::graph::count_flops;
use vkdnw_core::ranking::ProxyName;
use vkdnw_core::search::{evolve, SearchConfig};
use vkdnw_core::space::{canonicalize, SpaceSpec};

fn flops_config(iterations: usize, cap: usize, budget: u64, seed: u64) -> SearchConfig {
    SearchConfig {
        iterations,
        population_cap: cap,
        flops_budget: budget,
        objective: ProxyName::Flops,
        seed,
        ..SearchConfig::default()
    }
}

#[test]
fn finds_the_exhaustive_optimum_of_a_tiny_space() {
    let space = SpaceSpec::nb201_tiny();
    assert_eq!(space.enumerate().unwrap().count(), 125);
    let optimum = space
        .enumerate()
        .unwrap()
        .map(|e| count_flops(&canonicalize(&space.decode(&e).unwrap()).graph))
        .max()
        .unwrap();
    for seed in 0..5 {
        let r = evolve(&space, &flops_config(5000, 8, u64::MAX, seed)).unwrap();
        assert_eq!(r.best().score, optimum as f64, "seed {seed}");
    }
}

#[test]
fn budgeted_optimum_is_found_too() {
    let space = SpaceSpec::nb201_tiny();
    let budget = space.skeleton_flops() + 3000;
    let optimum = space
        .enumerate()
        .unwrap()
        .map(|e| count_flops(&canonicalize(&space.decode(&e).unwrap()).graph))
        .filter(|&f| f <= budget)
        .max()
        .unwrap();
    let r = evolve(&space, &flops_config(5000, 4, budget, 11)).unwrap();
    assert_eq!(r.best().score, optimum as f64);
}

#[test]
fn identical_seeds_reproduce_the_run() {
    let space = SpaceSpec::nb201_toy();
    let cfg = flops_config(2000, 32, space.skeleton_flops() + 60_000, 42);
    let a = evolve(&space, &cfg).unwrap();
    let b = evolve(&space, &cfg).unwrap();
    assert_eq!(a, b);
    let c = evolve(&space, &SearchConfig { seed: 43, ..cfg }).unwrap();
    assert_ne!(a.trace, c.trace);
}

#[test]
fn small_vkdnw_search_runs() {
    let space = SpaceSpec::nb201_toy();
    let mut cfg = SearchConfig {
        iterations: 30,
        population_cap: 6,
        flops_budget: u64::MAX,
        objective: ProxyName::VkdnwSingle,
        seed: 1,
        ..SearchConfig::default()
    };
    cfg.fim.batch_size = 8;
    let r = evolve(&space, &cfg).unwrap();
    assert_eq!(r.trace.len(), 31);
    assert!(r.population.windows(2).all(|w| w[0].score >= w[1].score));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn population_invariants_hold(seed in any::<u64>(), extra in 5_000u64..200_000, cap in 1usize..40) {
        let space = SpaceSpec::nb201_toy();
        let budget = space.skeleton_flops() + extra;
        let r = evolve(&space, &flops_config(400, cap, budget, seed)).unwrap();
        prop_assert!(r.population.len() <= cap);
        prop_assert!(r.population.iter().all(|m| m.flops <= budget));
        let hashes: HashSet<u128> = r.population.iter().map(|m| m.hash).collect();
        prop_assert_eq!(hashes.len(), r.population.len());
        prop_assert!(r.trace.windows(2).all(|w| w[1] >= w[0]));
        prop_assert_eq!(r.trace.len(), 401);
    }
}
