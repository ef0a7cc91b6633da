//! Decile entropy of the FIM spectrum and the size-grouped single score.

use serde::{Deserialize, Serialize};

use super::{fim_spectrum, sample_factor, FimSpectrum, ProbVector};
use crate::error::{Error, Result};
use crate::graph::trainable_layer_count;
use crate::net::{InitConfig, InputBatch, InputSource, NetworkInstance, SamplingPolicy};
use crate::space::CanonicalGraph;

/// Sums at or below this fraction of the largest eigenvalue count as an all-zero spectrum.
pub const DEGENERATE_RATIO: f64 = 1e-30;

/// Scoring configuration shared by every FIM-based proxy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FimConfig {
    pub batch_size: usize,
    pub input: InputSource,
    pub input_seed: u64,
    pub policy: SamplingPolicy,
    /// Divide the decile entropy by `ln 9` so it lies in `[0, 1]`.
    pub normalized_entropy: bool,
    pub init: InitConfig,
    pub init_seed: u64,
}

impl Default for FimConfig {
    fn default() -> Self {
        Self {
            batch_size: 64,
            input: InputSource::RandomGaussian,
            input_seed: 0,
            policy: SamplingPolicy::default(),
            normalized_entropy: true,
            init: InitConfig::default(),
            init_seed: 0,
        }
    }
}

impl FimConfig {
    /// The configured random batch for networks with the given input shape.
    pub fn random_batch(&self, shape: crate::graph::Shape) -> Result<InputBatch> {
        match self.input {
            InputSource::RandomGaussian => Ok(InputBatch::random_gaussian(self.batch_size, shape, self.input_seed)),
            InputSource::File => Err(Error::InvalidArgument(
                "file input has no generator; pass the batch explicitly".into(),
            )),
        }
    }
}

/// The 10th to 90th percentiles of a spectrum, ascending.
#[derive(Debug, Clone, PartialEq)]
pub struct DecileVector {
    pub deciles: [f64; 9],
    /// Deciles divided by their sum; `None` when the spectrum is degenerate.
    pub normalized: Option<[f64; 9]>,
}

impl DecileVector {
    pub fn is_degenerate(&self) -> bool {
        self.normalized.is_none()
    }
}

/// Percentiles by linear interpolation between closest ranks: the `q`-th
/// quantile of ascending values `v` sits at fractional position `q (m - 1)`.
pub fn deciles(spec: &FimSpectrum) -> Result<DecileVector> {
    let m = spec.eigenvalues.len();
    if m < 2 {
        return Err(Error::SpectrumTooSmall { len: m });
    }
    let mut asc = spec.eigenvalues.clone();
    asc.sort_by(|a, b| a.total_cmp(b));
    let mut deciles = [0.0; 9];
    for (k, d) in deciles.iter_mut().enumerate() {
        let pos = (k + 1) as f64 * (m - 1) as f64 / 10.0;
        let lo = pos.floor() as usize;
        let hi = (lo + 1).min(m - 1);
        let frac = pos - lo as f64;
        *d = if frac == 0.0 {
            asc[lo]
        } else {
            asc[lo] + frac * (asc[hi] - asc[lo])
        };
    }
    let sum: f64 = deciles.iter().sum();
    let max = asc[m - 1];
    let normalized = (sum > DEGENERATE_RATIO * max && sum > 0.0).then(|| deciles.map(|d| d / sum));
    Ok(DecileVector { deciles, normalized })
}

/// Decile entropy together with the degenerate-spectrum flag.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Entropy {
    pub value: f64,
    pub degenerate: bool,
}

/// `-sum λ̃_k ln λ̃_k` over the normalized deciles, divided by `ln 9` when
/// `normalized`. Degenerate spectra score 0.
pub fn vkdnw_entropy(spec: &FimSpectrum, normalized: bool) -> Result<Entropy> {
    let dec = deciles(spec)?;
    let Some(weights) = dec.normalized else {
        return Ok(Entropy {
            value: 0.0,
            degenerate: true,
        });
    };
    let max_entropy = 9f64.ln();
    let raw = if dec.deciles.iter().all(|&d| d == dec.deciles[0]) {
        max_entropy
    } else {
        -weights.iter().filter(|&&w| w > 0.0).map(|&w| w * w.ln()).sum::<f64>()
    };
    let value = if normalized {
        if raw == max_entropy {
            1.0
        } else {
            (raw / max_entropy).clamp(0.0, 1.0)
        }
    } else {
        raw.clamp(0.0, max_entropy)
    };
    Ok(Entropy {
        value,
        degenerate: false,
    })
}

/// FIM spectrum of `net` over `batch` at the parameters chosen by `policy`.
pub fn fim_spectrum_of(net: &NetworkInstance, batch: &InputBatch, policy: &SamplingPolicy) -> Result<FimSpectrum> {
    let sel = net.select_params(policy)?;
    let jac = net.logit_jacobian(batch, &sel)?;
    let logits = net.forward(batch)?;
    let factors = (0..batch.len())
        .map(|n| sample_factor(&jac.sample_matrix(n), &ProbVector::from_logits(logits.row(n))?))
        .collect::<Result<Vec<_>>>()?;
    fim_spectrum(&factors)
}

/// Layer count plus decile entropy. The integer part groups networks by size.
pub fn vkdnw_single(graph: &CanonicalGraph, net: &NetworkInstance, cfg: &FimConfig) -> Result<f64> {
    let batch = cfg.random_batch(graph.graph.input_shape)?;
    let spec = fim_spectrum_of(net, &batch, &cfg.policy)?;
    let entropy = vkdnw_entropy(&spec, cfg.normalized_entropy)?;
    Ok(trainable_layer_count(&graph.graph) as f64 + entropy.value)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spectrum(values: &[f64]) -> FimSpectrum {
        FimSpectrum::from_eigenvalues(values.to_vec(), 1)
    }

    #[test]
    fn equal_eigenvalues_give_one() {
        for m in [2, 5, 10, 64] {
            let e = vkdnw_entropy(&spectrum(&vec![0.37; m]), true).unwrap();
            assert_eq!(e.value, 1.0);
            assert!(!e.degenerate);
        }
    }

    #[test]
    fn concentrated_deciles_approach_zero() {
        // 10 eigenvalues: the 90th percentile interpolates towards the large one.
        let mut prev = 1.0;
        for eps in [1e-2, 1e-4, 1e-8, 1e-12] {
            let mut v = vec![eps; 9];
            v.push(1e6);
            let e = vkdnw_entropy(&spectrum(&v), true).unwrap().value;
            assert!(e < prev);
            prev = e;
        }
        assert!(prev < 1e-9);
    }

    #[test]
    fn linear_deciles_formula_value() {
        // Eleven eigenvalues 0..=10 put the k-th decile exactly at k.
        let v: Vec<f64> = (0..=10).map(f64::from).collect();
        let dec = deciles(&spectrum(&v)).unwrap();
        assert_eq!(dec.deciles, [1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0, 9.0]);
        let e = vkdnw_entropy(&spectrum(&v), true).unwrap().value;
        assert!((e - 0.932_922_716_019_209_3).abs() < 1e-14, "{e}");
        let raw = vkdnw_entropy(&spectrum(&v), false).unwrap().value;
        assert!((raw - 2.049_840_720_392_665).abs() < 1e-14);
    }

    #[test]
    fn all_zero_spectrum_is_degenerate() {
        let e = vkdnw_entropy(&spectrum(&[0.0; 8]), true).unwrap();
        assert_eq!(
            e,
            Entropy {
                value: 0.0,
                degenerate: true
            }
        );
        assert!(deciles(&spectrum(&[0.0, 0.0])).unwrap().is_degenerate());
    }

    #[test]
    fn tiny_spectra_are_rejected() {
        assert!(matches!(
            vkdnw_entropy(&spectrum(&[1.0]), true),
            Err(Error::SpectrumTooSmall { len: 1 })
        ));
    }

    #[test]
    fn short_spectrum_repeats_values() {
        let dec = deciles(&spectrum(&[1.0, 3.0])).unwrap();
        assert!((dec.deciles[0] - 1.2).abs() < 1e-15);
        assert!((dec.deciles[8] - 2.8).abs() < 1e-15);
    }

    #[test]
    fn power_of_two_scaling_is_bitwise() {
        let v = [0.3, 1.7, 1e-3, 9.0, 4.4, 0.0, 2.5];
        let base = vkdnw_entropy(&spectrum(&v), true).unwrap().value;
        for c in [0.25, 2.0, 1024.0, 2f64.powi(-60)] {
            let scaled: Vec<f64> = v.iter().map(|x| x * c).collect();
            assert_eq!(vkdnw_entropy(&spectrum(&scaled), true).unwrap().value, base);
        }
    }

    #[test]
    fn default_config_matches_reference_settings() {
        let cfg = FimConfig::default();
        assert_eq!(cfg.batch_size, 64);
        assert_eq!(cfg.policy.max_layers, 128);
        assert!(cfg.normalized_entropy);
    }
}
