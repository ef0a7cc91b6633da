//! Numerical checks of the Fisher-information theory on small models where
//! the answer is known in closed form.

mod cramer_rao;
mod kl;
mod survey;

pub use cramer_rao::{cramer_rao_experiment, CrLevel, CrReport, MleExperimentConfig};
pub use kl::{default_kl_scales, kl_quadratic_check, KlPoint};
pub use survey::{kl_survey, label_separation, KlSurveyNet, SeparationSummary};

use nalgebra::{DMatrix, DVector};
use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::fim::{assemble_fim, sample_factor, ProbVector};
use crate::graph::{ComputationGraph, Node, NodeRole, OpKind};
use crate::net::{build_network, InitConfig, InputBatch, NetworkInstance, ParamSelection};
use crate::tensor::Tensor;

/// Bias-free linear softmax classifier `logits = W x`.
#[derive(Debug, Clone, PartialEq)]
pub struct SoftmaxModel {
    /// `classes x features`.
    pub weights: DMatrix<f64>,
}

impl SoftmaxModel {
    pub fn new(weights: DMatrix<f64>) -> Result<Self> {
        if weights.is_empty() || !weights.iter().all(|v| v.is_finite()) {
            return Err(Error::InvalidArgument(
                "model weights must be non-empty and finite".into(),
            ));
        }
        Ok(Self { weights })
    }

    pub fn classes(&self) -> usize {
        self.weights.nrows()
    }

    pub fn features(&self) -> usize {
        self.weights.ncols()
    }

    pub fn graph(&self) -> ComputationGraph {
        let d = self.features();
        let c = self.classes();
        ComputationGraph {
            nodes: vec![
                Node {
                    op: OpKind::Input,
                    inputs: vec![],
                    role: NodeRole::Fixed,
                    shape: (d, 1, 1),
                },
                Node {
                    op: OpKind::Linear {
                        in_features: d,
                        out_features: c,
                        bias: false,
                    },
                    inputs: vec![0],
                    role: NodeRole::Fixed,
                    shape: (c, 1, 1),
                },
            ],
            input_shape: (d, 1, 1),
            num_classes: c,
        }
    }

    /// The model as a network whose weight vector is `W` in row-major order.
    pub fn network(&self) -> Result<NetworkInstance> {
        let net = build_network(&self.graph(), &InitConfig::default(), 0)?;
        net.with_weights(self.weights.transpose().as_slice().to_vec())
    }

    pub fn probs(&self, x: &[f64]) -> Result<ProbVector> {
        let logits = &self.weights * DVector::from_column_slice(x);
        ProbVector::from_logits(logits.as_slice())
    }
}

/// Input rows of a batch whose samples are flat feature vectors.
fn feature_rows(inputs: &InputBatch, features: usize) -> Result<Vec<&[f64]>> {
    let t = &inputs.data;
    let len = t.c * t.h * t.w;
    if len != features {
        return Err(Error::DimensionMismatch {
            what: "input features",
            expected: features,
            got: len,
        });
    }
    Ok((0..t.n).map(|s| t.sample(s)).collect())
}

/// `(diag(p) - p pᵀ) ⊗ x xᵀ`: the FIM of one input in row-major `W` coordinates.
fn single_input_fim(p: &ProbVector, x: &[f64]) -> DMatrix<f64> {
    let xv = DVector::from_column_slice(x);
    p.covariance().kronecker(&(&xv * xv.transpose()))
}

/// Empirical FIM of the linear softmax model over `inputs`, in closed form.
pub fn analytic_fim_softmax(weights: &DMatrix<f64>, inputs: &InputBatch) -> Result<DMatrix<f64>> {
    let model = SoftmaxModel::new(weights.clone())?;
    let rows = feature_rows(inputs, model.features())?;
    if rows.is_empty() {
        return Err(Error::Empty("input batch"));
    }
    let dim = model.classes() * model.features();
    let mut fim = DMatrix::zeros(dim, dim);
    for x in &rows {
        fim += single_input_fim(&model.probs(x)?, x);
    }
    Ok(fim / rows.len() as f64)
}

/// Empirical FIM of any network over the selected parameters, through the
/// Jacobian and covariance-factor path used for scoring.
pub fn empirical_fim(net: &NetworkInstance, batch: &InputBatch, sel: &ParamSelection) -> Result<DMatrix<f64>> {
    let jac = net.logit_jacobian(batch, sel)?;
    let logits = net.forward(batch)?;
    let factors = (0..batch.len())
        .map(|n| sample_factor(&jac.sample_matrix(n), &ProbVector::from_logits(logits.row(n))?))
        .collect::<Result<Vec<_>>>()?;
    assemble_fim(&factors)
}

/// Outer products of the log-likelihood gradients at the observed labels,
/// `(1/n) sum_n g_n g_nᵀ` with `g_n = J_nᵀ (e_{c_n} - sigma_n)`.
pub fn label_fim_g(
    net: &NetworkInstance,
    batch: &InputBatch,
    labels: &[usize],
    sel: &ParamSelection,
) -> Result<DMatrix<f64>> {
    let classes = net.graph().num_classes;
    if labels.len() != batch.len() {
        return Err(Error::DimensionMismatch {
            what: "labels",
            expected: batch.len(),
            got: labels.len(),
        });
    }
    if let Some(&label) = labels.iter().find(|&&c| c >= classes) {
        return Err(Error::LabelOutOfRange { label, classes });
    }
    let jac = net.logit_jacobian(batch, sel)?;
    let logits = net.forward(batch)?;
    let p = sel.len();
    let mut g_sum = DMatrix::zeros(p, p);
    for (n, &label) in labels.iter().enumerate() {
        let probs = ProbVector::from_logits(logits.row(n))?;
        let mut residual = DVector::from_column_slice(probs.probs()) * -1.0;
        residual[label] += 1.0;
        let g = jac.sample_matrix(n).transpose() * residual;
        g_sum += &g * g.transpose();
    }
    g_sum /= labels.len() as f64;
    for i in 0..p {
        for j in 0..i {
            g_sum[(i, j)] = g_sum[(j, i)];
        }
    }
    Ok(g_sum)
}

/// A finite input distribution: support points with their probabilities.
#[derive(Debug, Clone, PartialEq)]
pub struct InputSupport {
    pub points: Vec<Vec<f64>>,
    pub probs: Vec<f64>,
}

impl InputSupport {
    /// `size` standard normal points in `features` dimensions, equally likely.
    pub fn gaussian(size: usize, features: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let points = (0..size)
            .map(|_| (0..features).map(|_| StandardNormal.sample(&mut rng)).collect())
            .collect();
        Self {
            points,
            probs: vec![1.0 / size as f64; size],
        }
    }

    pub fn features(&self) -> usize {
        self.points.first().map_or(0, Vec::len)
    }

    pub fn sampler(&self) -> Result<WeightedIndex<f64>> {
        WeightedIndex::new(&self.probs).map_err(|e| Error::InvalidArgument(format!("support probabilities: {e}")))
    }

    /// The exact FIM `E_x[(diag(p) - p pᵀ) ⊗ x xᵀ]`.
    pub fn population_fim(&self, model: &SoftmaxModel) -> Result<DMatrix<f64>> {
        if self.features() != model.features() {
            return Err(Error::DimensionMismatch {
                what: "support features",
                expected: model.features(),
                got: self.features(),
            });
        }
        let dim = model.classes() * model.features();
        let mut fim = DMatrix::zeros(dim, dim);
        for (x, &w) in self.points.iter().zip(&self.probs) {
            fim += single_input_fim(&model.probs(x)?, x) * w;
        }
        Ok(fim)
    }

    /// `n` inputs drawn i.i.d. from the support.
    pub fn sample_batch(&self, n: usize, rng: &mut ChaCha8Rng) -> Result<InputBatch> {
        let sampler = self.sampler()?;
        let d = self.features();
        let mut data = Vec::with_capacity(n * d);
        for _ in 0..n {
            data.extend_from_slice(&self.points[sampler.sample(rng)]);
        }
        Ok(InputBatch::from_tensor(Tensor::from_vec(n, d, 1, 1, data)))
    }
}

/// Relative Frobenius error of the Monte-Carlo FIM at each sample size.
#[derive(Debug, Clone, PartialEq)]
pub struct ErrorCurve {
    pub points: Vec<(usize, f64)>,
}

pub fn relative_frobenius(estimate: &DMatrix<f64>, truth: &DMatrix<f64>) -> f64 {
    (estimate - truth).norm() / truth.norm()
}

/// Empirical FIM on `n` fresh inputs per grid point against the population FIM.
pub fn mc_fim_convergence(
    model: &SoftmaxModel,
    support: &InputSupport,
    n_grid: &[usize],
    seed: u64,
) -> Result<ErrorCurve> {
    if n_grid.is_empty() || n_grid.contains(&0) {
        return Err(Error::InvalidArgument("sample sizes must be positive".into()));
    }
    let truth = support.population_fim(model)?;
    let net = model.network()?;
    let sel = net.select_all_weighted()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let points = n_grid
        .iter()
        .map(|&n| {
            let batch = support.sample_batch(n, &mut rng)?;
            Ok((n, relative_frobenius(&empirical_fim(&net, &batch, &sel)?, &truth)))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ErrorCurve { points })
}
