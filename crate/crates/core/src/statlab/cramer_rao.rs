//! Maximum-likelihood variance against the inverse-FIM bound on a linear
//! softmax model with the last class row pinned at zero.

use nalgebra::DMatrix;
use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{InputSupport, SoftmaxModel};
use crate::error::{Error, Result};
use crate::net::{train_steps, InputBatch, LabeledBatch, NetworkInstance, RepeatBatch};
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MleExperimentConfig {
    /// True class rows, `classes x features`; the last row must be zero.
    pub true_weights: Vec<Vec<f64>>,
    /// Number of equally likely Gaussian input points.
    pub support_size: usize,
    pub support_seed: u64,
    pub n_grid: Vec<usize>,
    pub replications: usize,
    pub seed: u64,
    /// Gradient-descent budget per replication.
    pub max_steps: usize,
    /// A fit counts as converged once every gradient entry is at most this.
    pub grad_tol: f64,
}

impl Default for MleExperimentConfig {
    fn default() -> Self {
        Self {
            true_weights: vec![vec![3.0, -1.5], vec![-2.4, 3.6], vec![0.0, 0.0]],
            support_size: 16,
            support_seed: 11,
            n_grid: vec![500, 2000, 8000],
            replications: 200,
            seed: 0,
            max_steps: 20_000,
            grad_tol: 1e-10,
        }
    }
}

impl MleExperimentConfig {
    fn validate(&self) -> Result<SoftmaxModel> {
        if self.n_grid.is_empty() || self.n_grid[0] == 0 || self.n_grid.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::InvalidArgument(
                "n_grid must be positive and strictly increasing".into(),
            ));
        }
        if self.replications < 30 {
            return Err(Error::InvalidArgument("at least 30 replications are required".into()));
        }
        if self.support_size == 0 || self.max_steps == 0 || self.grad_tol.is_nan() || self.grad_tol <= 0.0 {
            return Err(Error::InvalidArgument(
                "support size, step budget and tolerance must be positive".into(),
            ));
        }
        let c = self.true_weights.len();
        let d = self.true_weights.first().map_or(0, Vec::len);
        if c < 2 || d == 0 || self.true_weights.iter().any(|r| r.len() != d) {
            return Err(Error::InvalidArgument(
                "true weights must be a rectangular matrix with two or more classes".into(),
            ));
        }
        if self.true_weights[c - 1].iter().any(|&v| v != 0.0) {
            return Err(Error::InvalidArgument(
                "the last class row is the pinned reference and must be zero".into(),
            ));
        }
        SoftmaxModel::new(DMatrix::from_fn(c, d, |i, j| self.true_weights[i][j]))
    }
}

/// Results at one sample size. Per-parameter columns follow the order
/// `(class, feature)` over the free class rows.
#[derive(Debug, Clone, PartialEq)]
pub struct CrLevel {
    pub n: usize,
    pub variance: Vec<f64>,
    /// Diagonal of `F^-1 / n`.
    pub bound: Vec<f64>,
    pub ratio: Vec<f64>,
    pub mean_ratio: f64,
    pub converged: usize,
    /// Replications whose fit diverged or missed the tolerance.
    pub non_converged: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CrReport {
    pub levels: Vec<CrLevel>,
}

struct Fit {
    estimate: Vec<f64>,
    converged: bool,
}

pub fn cramer_rao_experiment(cfg: &MleExperimentConfig) -> Result<CrReport> {
    let model = cfg.validate()?;
    let (c, d) = (model.classes(), model.features());
    let free = (c - 1) * d;
    let support = InputSupport::gaussian(cfg.support_size, d, cfg.support_seed);
    let full = support.population_fim(&model)?;
    let pinned = full.view((0, 0), (free, free)).into_owned();
    let inverse = pinned
        .cholesky()
        .ok_or_else(|| Error::InvalidArgument("the pinned FIM is singular; the model is not identifiable".into()))?
        .inverse();
    let lambda_max = full.clone().symmetric_eigen().eigenvalues.max();
    let lr = 1.0 / lambda_max;

    let truth = model.network()?;
    let label_dists = support
        .points
        .iter()
        .map(|x| Ok(WeightedIndex::new(model.probs(x)?.probs()).expect("softmax output is a valid distribution")))
        .collect::<Result<Vec<_>>>()?;
    let input_dist = support.sampler()?;

    let mut levels = Vec::with_capacity(cfg.n_grid.len());
    for (level, &n) in cfg.n_grid.iter().enumerate() {
        let fits: Vec<Fit> = (0..cfg.replications)
            .into_par_iter()
            .map(|rep| {
                let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
                rng.set_stream(((level as u64) << 32) | rep as u64);
                let mut counts = vec![0usize; support.points.len() * c];
                for _ in 0..n {
                    let k = input_dist.sample(&mut rng);
                    counts[k * c + label_dists[k].sample(&mut rng)] += 1;
                }
                let batch = compress(&support, &counts, c);
                fit(&truth, batch, lr, cfg, c, d)
            })
            .collect::<Result<_>>()?;

        let good: Vec<&Fit> = fits.iter().filter(|f| f.converged).collect();
        let non_converged = fits
            .iter()
            .enumerate()
            .filter(|(_, f)| !f.converged)
            .map(|(i, _)| i)
            .collect();
        let variance = sample_variance(&good, free);
        let bound: Vec<f64> = (0..free).map(|i| inverse[(i, i)] / n as f64).collect();
        let ratio: Vec<f64> = variance.iter().zip(&bound).map(|(v, b)| v / b).collect();
        let mean_ratio = ratio.iter().sum::<f64>() / free as f64;
        levels.push(CrLevel {
            n,
            variance,
            bound,
            ratio,
            mean_ratio,
            converged: good.len(),
            non_converged,
        });
    }
    Ok(CrReport { levels })
}

/// One weighted row per observed `(support point, label)` pair.
fn compress(support: &InputSupport, counts: &[usize], classes: usize) -> LabeledBatch {
    let d = support.features();
    let mut data = Vec::new();
    let mut labels = Vec::new();
    let mut weights = Vec::new();
    for (cell, &count) in counts.iter().enumerate() {
        if count > 0 {
            data.extend_from_slice(&support.points[cell / classes]);
            labels.push(cell % classes);
            weights.push(count as f64);
        }
    }
    let rows = labels.len();
    LabeledBatch::weighted(
        InputBatch::from_tensor(Tensor::from_vec(rows, d, 1, 1, data)),
        labels,
        weights,
    )
}

/// Gradient descent from the true weights until the gradient vanishes.
/// The estimate is each free class row minus the reference row, which the
/// softmax likelihood identifies uniquely.
fn fit(
    start: &NetworkInstance,
    batch: LabeledBatch,
    lr: f64,
    cfg: &MleExperimentConfig,
    c: usize,
    d: usize,
) -> Result<Fit> {
    const CHUNK: usize = 250;
    let mut data = RepeatBatch(batch);
    let mut net = start.clone();
    let mut steps = 0;
    let mut converged = false;
    while steps < cfg.max_steps {
        let (_, grad) = net.loss_and_gradient(&data.0)?;
        if grad.iter().all(|g| g.abs() <= cfg.grad_tol) {
            converged = true;
            break;
        }
        let chunk = CHUNK.min(cfg.max_steps - steps);
        net = match train_steps(&net, &mut data, chunk, lr) {
            Ok(t) => t.network,
            Err(Error::Divergence { .. }) => break,
            Err(e) => return Err(e),
        };
        steps += chunk;
    }
    let w = net.weights();
    let reference = &w[(c - 1) * d..c * d];
    let estimate = (0..(c - 1) * d).map(|i| w[i] - reference[i % d]).collect();
    Ok(Fit { estimate, converged })
}

fn sample_variance(fits: &[&Fit], dim: usize) -> Vec<f64> {
    let r = fits.len() as f64;
    (0..dim)
        .map(|i| {
            let mean = fits.iter().map(|f| f.estimate[i]).sum::<f64>() / r;
            fits.iter().map(|f| (f.estimate[i] - mean).powi(2)).sum::<f64>() / (r - 1.0)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_is_validated() {
        let base = MleExperimentConfig::default();
        assert!(base.validate().is_ok());
        let bad = [
            MleExperimentConfig {
                replications: 29,
                ..base.clone()
            },
            MleExperimentConfig {
                n_grid: vec![100, 100],
                ..base.clone()
            },
            MleExperimentConfig {
                n_grid: vec![],
                ..base.clone()
            },
            MleExperimentConfig {
                true_weights: vec![vec![1.0, 0.0], vec![0.0, 0.5]],
                ..base.clone()
            },
        ];
        for cfg in bad {
            assert!(cramer_rao_experiment(&cfg).is_err());
        }
    }

    #[test]
    fn bound_scales_inversely_with_n() {
        let cfg = MleExperimentConfig {
            n_grid: vec![100, 200, 400],
            replications: 30,
            ..MleExperimentConfig::default()
        };
        let report = cramer_rao_experiment(&cfg).unwrap();
        for pair in report.levels.windows(2) {
            for (a, b) in pair[0].bound.iter().zip(&pair[1].bound) {
                assert_eq!(*b, a / 2.0);
            }
        }
    }

    #[test]
    fn compression_keeps_counts() {
        let support = InputSupport::gaussian(3, 2, 0);
        let batch = compress(&support, &[2, 0, 1, 0, 0, 0], 2);
        assert_eq!(batch.labels, vec![0, 0]);
        assert_eq!(batch.weights, Some(vec![2.0, 1.0]));
        assert_eq!(batch.inputs.data.sample(1), support.points[1].as_slice());
    }
}
