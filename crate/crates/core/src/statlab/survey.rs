//! Repeated experiments over randomly drawn cell networks.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::{default_kl_scales, empirical_fim, kl_quadratic_check, label_fim_g, KlPoint};
use crate::error::Result;
use crate::net::{build_network, InitConfig, InputBatch, NetworkInstance, SamplingPolicy};
use crate::space::{ArchEncoding, SpaceSpec};

/// A random network of `space` with its encoding and a draw of fresh seeds.
fn random_net(space: &SpaceSpec, rng: &mut ChaCha8Rng) -> Result<(ArchEncoding, NetworkInstance)> {
    let enc = space.random_encoding(rng);
    let graph = space.decode(&enc)?;
    let net = build_network(&graph, &InitConfig::default(), rng.random())?;
    Ok((enc, net))
}

/// How often the label-based matrix G departs from the empirical FIM.
#[derive(Debug, Clone, PartialEq)]
pub struct SeparationSummary {
    pub trials: usize,
    /// Trials with `‖G − F̂‖ / ‖F̂‖ > threshold`.
    pub separated: usize,
    /// Networks redrawn because their F̂ is exactly zero, leaving the relative
    /// difference undefined. This happens when the cell has no path from input to output.
    pub degenerate: usize,
    pub threshold: f64,
    /// Smallest eigenvalue of G relative to its largest, over all trials.
    pub worst_psd_ratio: f64,
}

/// Random networks at initialization with uniformly random labels.
pub fn label_separation(space: &SpaceSpec, trials: usize, batch_size: usize, seed: u64) -> Result<SeparationSummary> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let threshold = 0.1;
    let (mut done, mut separated, mut degenerate) = (0, 0, 0);
    let mut worst_psd_ratio: f64 = 0.0;
    while done < trials {
        let (_, net) = random_net(space, &mut rng)?;
        let sel = net.select_params(&SamplingPolicy::default())?;
        let batch = InputBatch::random_gaussian(batch_size, space.input_shape, rng.random());
        let labels: Vec<usize> = (0..batch_size)
            .map(|_| rng.random_range(0..space.num_classes))
            .collect();
        let f = empirical_fim(&net, &batch, &sel)?;
        let g = label_fim_g(&net, &batch, &labels, &sel)?;
        let eig = g.clone().symmetric_eigenvalues();
        if eig.max() > 0.0 {
            worst_psd_ratio = worst_psd_ratio.min(eig.min() / eig.max());
        }
        if f.norm() == 0.0 {
            degenerate += 1;
            continue;
        }
        done += 1;
        if (&g - &f).norm() / f.norm() > threshold {
            separated += 1;
        }
    }
    Ok(SeparationSummary {
        trials,
        separated,
        degenerate,
        threshold,
        worst_psd_ratio,
    })
}

/// The KL check on one network along a random direction.
#[derive(Debug, Clone, PartialEq)]
pub struct KlSurveyNet {
    pub encoding: ArchEncoding,
    pub points: Vec<KlPoint>,
}

impl KlSurveyNet {
    /// `rel_err` at each scale divided by `rel_err` at the next smaller scale.
    pub fn decay_ratios(&self) -> Vec<f64> {
        self.points.windows(2).map(|w| w[0].rel_err / w[1].rel_err).collect()
    }
}

/// The KL check at the default scales on `nets` random networks. Networks
/// whose quadratic term vanishes along the drawn direction are redrawn, as
/// their relative error is undefined.
pub fn kl_survey(space: &SpaceSpec, nets: usize, batch_size: usize, seed: u64) -> Result<Vec<KlSurveyNet>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(nets);
    while out.len() < nets {
        let (encoding, net) = random_net(space, &mut rng)?;
        let sel = net.select_params(&SamplingPolicy::default())?;
        let dir: Vec<f64> = (0..sel.len()).map(|_| StandardNormal.sample(&mut rng)).collect();
        let batch = InputBatch::random_gaussian(batch_size, space.input_shape, rng.random());
        let scales = default_kl_scales(&net, &sel, &dir)?;
        let points = kl_quadratic_check(&net, &sel, &dir, &scales, &batch)?;
        if points.iter().all(|p| p.quad > 0.0) {
            out.push(KlSurveyNet { encoding, points });
        }
    }
    Ok(out)
}
