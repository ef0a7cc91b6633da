use std::collections::HashMap;

use nalgebra::DMatrix;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use vkdnw_core::fim::{
    assemble_fim, fim_spectrum, inf_norm, multinomial_cov_factor, vkdnw_entropy, FimConfig, FimSpectrum, ProbVector,
    SampleFactor,
};
use vkdnw_core::graph::trainable_layer_count;
use vkdnw_core::ranking::{compute_proxy, ProxyName};
use vkdnw_core::space::{canonicalize, SpaceSpec};

/// Exponential spacings give a uniform point on the simplex; every fourth draw
/// is pushed towards a vertex with mass as small as 1e-300 on the other classes.
fn simplex_point(rng: &mut ChaCha8Rng, c: usize) -> ProbVector {
    let near_vertex = rng.random_bool(0.25);
    let mut p: Vec<f64> = if near_vertex {
        let tiny = 10f64.powf(-rng.random_range(6.0..300.0));
        (0..c).map(|_| tiny * rng.random_range(0.5..1.0)).collect()
    } else {
        (0..c).map(|_| -rng.random::<f64>().ln()).collect()
    };
    let hot = rng.random_range(0..c);
    if near_vertex {
        p[hot] = 0.0;
        let rest: f64 = p.iter().sum();
        p[hot] = 1.0 - rest;
    } else {
        let s: f64 = p.iter().sum();
        p.iter_mut().for_each(|v| *v /= s);
        let drift = 1.0 - p.iter().sum::<f64>();
        p[hot] += drift;
    }
    ProbVector::from_probs(p).unwrap()
}

#[test]
fn covariance_factor_residual_over_random_simplex_points() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst: f64 = 0.0;
    for i in 0..10_000 {
        // Log-uniform class counts so that large C appears without dominating the run.
        let c = if i < 20 {
            512
        } else {
            2f64.powf(rng.random_range(1.0..9.0)).round() as usize
        };
        let p = simplex_point(&mut rng, c);
        let m = multinomial_cov_factor(&p).unwrap();
        worst = worst.max(inf_norm(&(m.transpose() * &m - p.covariance())));
    }
    assert!(worst <= 1e-12, "{worst}");
}

fn random_factors(rng: &mut ChaCha8Rng) -> Vec<SampleFactor> {
    let p = rng.random_range(2..=64);
    let n = rng.random_range(1..12);
    let c = rng.random_range(2..12);
    (0..n)
        .map(|_| {
            let probs = simplex_point(rng, c);
            let jac = DMatrix::from_fn(c, p, |_, _| rng.random_range(-3.0..3.0));
            SampleFactor {
                a: multinomial_cov_factor(&probs).unwrap() * jac,
            }
        })
        .collect()
}

#[test]
fn stacked_spectrum_matches_dense_eigenvalues() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for _ in 0..100 {
        let factors = random_factors(&mut rng);
        let spec = fim_spectrum(&factors).unwrap();
        let dense = assemble_fim(&factors).unwrap();
        let mut want: Vec<f64> = dense.symmetric_eigenvalues().iter().copied().collect();
        want.sort_by(|a, b| b.total_cmp(a));
        let scale = want[0].max(f64::MIN_POSITIVE);
        let err = spec
            .eigenvalues
            .iter()
            .zip(&want)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        assert!(err / scale <= 1e-8, "{}", err / scale);
    }
}

#[test]
fn assembled_fim_is_symmetric_and_psd() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..1000 {
        let fim = assemble_fim(&random_factors(&mut rng)).unwrap();
        assert_eq!(fim, fim.transpose());
        let eig = fim.symmetric_eigenvalues();
        assert!(eig.min() >= -1e-10 * eig.max().max(0.0));
    }
}

fn spectrum() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(prop_oneof![Just(0.0), 0.0f64..1.0, 1e-12f64..1e6], 2..80)
}

proptest! {
    #[test]
    fn entropy_is_in_the_unit_interval(values in spectrum()) {
        let e = vkdnw_entropy(&FimSpectrum::from_eigenvalues(values, 1), true).unwrap();
        prop_assert!((0.0..=1.0).contains(&e.value));
    }

    #[test]
    fn entropy_ignores_the_overall_scale(values in spectrum(), exponent in -60i32..60, c in 1e-6f64..1e6) {
        let base = vkdnw_entropy(&FimSpectrum::from_eigenvalues(values.clone(), 1), true).unwrap();
        let pow2 = 2f64.powi(exponent);
        let scaled = values.iter().map(|v| v * pow2).collect();
        prop_assert_eq!(base, vkdnw_entropy(&FimSpectrum::from_eigenvalues(scaled, 1), true).unwrap());
        let scaled = values.iter().map(|v| v * c).collect();
        let other = vkdnw_entropy(&FimSpectrum::from_eigenvalues(scaled, 1), true).unwrap();
        prop_assert_eq!(base.degenerate, other.degenerate);
        prop_assert!((base.value - other.value).abs() <= 1e-14);
    }

    #[test]
    fn equal_deciles_give_exactly_one(value in 1e-200f64..1e200, len in 2usize..100) {
        let e = vkdnw_entropy(&FimSpectrum::from_eigenvalues(vec![value; len], 1), true).unwrap();
        prop_assert_eq!(e.value, 1.0);
    }
}

#[test]
fn larger_networks_never_score_below_smaller_ones() {
    let space = SpaceSpec::nb201_toy();
    let cfg = FimConfig {
        batch_size: 16,
        ..FimConfig::default()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut cache = HashMap::new();
    let mut score = |rng: &mut ChaCha8Rng| {
        let canon = canonicalize(&space.decode(&space.random_encoding(rng)).unwrap());
        let aleph = trainable_layer_count(&canon.graph);
        let s = *cache
            .entry(canon.hash)
            .or_insert_with(|| compute_proxy(ProxyName::VkdnwSingle, &canon, &cfg).unwrap());
        (aleph, s)
    };
    let mut ordered = 0;
    for _ in 0..1000 {
        let (a1, s1) = score(&mut rng);
        let (a2, s2) = score(&mut rng);
        assert!(s1 >= a1 as f64 && s1 <= a1 as f64 + 1.0);
        if a1 < a2 {
            assert!(s1 <= s2);
            ordered += 1;
        } else if a2 < a1 {
            assert!(s2 <= s1);
            ordered += 1;
        }
    }
    assert!(ordered > 300, "{ordered}");
}
