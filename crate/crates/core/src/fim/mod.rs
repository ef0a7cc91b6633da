//! Empirical Fisher information over sampled parameters.
//!
//! For each input `x_n` with predictive distribution `p` and logit Jacobian
//! `J_n` (C x p'), the contribution to the empirical FIM is
//! `J_nᵀ (diag(p) - p pᵀ) J_n = A_nᵀ A_n` with `A_n = M J_n` and
//! `Mᵀ M = diag(p) - p pᵀ`. The spectrum is taken from the singular values of
//! the stacked factors, so the Gram matrix is never formed on that path.

mod svd;
mod vkdnw;

use nalgebra::DMatrix;

use crate::error::{Error, Result};

pub use svd::singular_values;
pub use vkdnw::{deciles, fim_spectrum_of, vkdnw_entropy, vkdnw_single, DecileVector, Entropy, FimConfig};

/// Tolerance on `|sum(p) - 1|` accepted by [`ProbVector::from_probs`].
pub const NORMALIZATION_TOL: f64 = 1e-12;

/// Predictive class distribution with its logarithm.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbVector {
    probs: Vec<f64>,
    log_probs: Vec<f64>,
}

impl ProbVector {
    /// Softmax through log-sum-exp.
    pub fn from_logits(logits: &[f64]) -> Result<Self> {
        if logits.is_empty() {
            return Err(Error::Empty("logits"));
        }
        if logits.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("non-finite logit".into()));
        }
        let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + logits.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        let log_probs: Vec<f64> = logits.iter().map(|v| v - lse).collect();
        let probs = log_probs.iter().map(|l| l.exp()).collect();
        Ok(Self { probs, log_probs })
    }

    pub fn from_probs(probs: Vec<f64>) -> Result<Self> {
        if probs.is_empty() {
            return Err(Error::Empty("probability vector"));
        }
        let sum: f64 = probs.iter().sum();
        if probs.iter().any(|&v| !v.is_finite() || v < 0.0) || (sum - 1.0).abs() > NORMALIZATION_TOL {
            return Err(Error::NotNormalized { sum });
        }
        let log_probs = probs.iter().map(|v| v.ln()).collect();
        Ok(Self { probs, log_probs })
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn log_probs(&self) -> &[f64] {
        &self.log_probs
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    /// `diag(p) - p pᵀ`, formed explicitly. Reference path only.
    pub fn covariance(&self) -> DMatrix<f64> {
        let p = &self.probs;
        DMatrix::from_fn(
            p.len(),
            p.len(),
            |i, j| if i == j { p[i] - p[i] * p[i] } else { -p[i] * p[j] },
        )
    }
}

/// Upper-triangular `M` with `Mᵀ M = diag(p) - p pᵀ`.
///
/// `M = Lᵀ` for the closed-form Cholesky factor `L` of the multinomial
/// covariance. With tail sums `q_k = sum_{j >= k} p_j`:
///
/// ```text
/// L_kk = sqrt(p_k q_{k+1} / q_k)
/// L_ik = -p_i sqrt(p_k / (q_k q_{k+1}))     for i > k
/// ```
///
/// The tail sums are accumulated backward from the last class, so they stay
/// accurate when one class carries nearly all the mass.
pub fn multinomial_cov_factor(p: &ProbVector) -> Result<DMatrix<f64>> {
    let probs = p.probs();
    let sum: f64 = probs.iter().sum();
    if (sum - 1.0).abs() > NORMALIZATION_TOL || probs.iter().any(|&v| v.is_nan() || v < 0.0) {
        return Err(Error::NotNormalized { sum });
    }
    let c = probs.len();
    let mut tail = vec![0.0; c + 1];
    for k in (0..c).rev() {
        tail[k] = tail[k + 1] + probs[k];
    }
    let mut m = DMatrix::zeros(c, c);
    for k in 0..c {
        let (pk, qk, qnext) = (probs[k], tail[k], tail[k + 1]);
        if pk == 0.0 || qnext == 0.0 {
            continue;
        }
        let root_next = qnext.sqrt();
        let lead = (pk / qk).sqrt();
        m[(k, k)] = lead * root_next;
        for i in k + 1..c {
            // p_i / q_{k+1} * sqrt(q_{k+1}) avoids forming q_k q_{k+1}.
            m[(k, i)] = -lead * (probs[i] / qnext) * root_next;
        }
    }
    Ok(m)
}

/// The factor `A_n` contributed by one sample.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleFactor {
    pub a: DMatrix<f64>,
}

impl SampleFactor {
    pub fn params(&self) -> usize {
        self.a.ncols()
    }
}

pub fn sample_factor(jac: &DMatrix<f64>, p: &ProbVector) -> Result<SampleFactor> {
    if jac.nrows() != p.len() {
        return Err(Error::DimensionMismatch {
            what: "jacobian rows",
            expected: p.len(),
            got: jac.nrows(),
        });
    }
    Ok(SampleFactor {
        a: multinomial_cov_factor(p)? * jac,
    })
}

/// Eigenvalues of the empirical FIM, non-increasing.
#[derive(Debug, Clone, PartialEq)]
pub struct FimSpectrum {
    pub eigenvalues: Vec<f64>,
    pub n_samples: usize,
    pub p_prime: usize,
}

impl FimSpectrum {
    /// Wraps externally computed eigenvalues, sorting them non-increasing.
    pub fn from_eigenvalues(mut eigenvalues: Vec<f64>, n_samples: usize) -> Self {
        eigenvalues.sort_by(|a, b| b.total_cmp(a));
        let p_prime = eigenvalues.len();
        Self {
            eigenvalues,
            n_samples,
            p_prime,
        }
    }

    pub fn max(&self) -> f64 {
        self.eigenvalues.first().copied().unwrap_or(0.0)
    }
}

fn check_factors(factors: &[SampleFactor]) -> Result<usize> {
    let first = factors.first().ok_or(Error::Empty("factor list"))?;
    let p = first.params();
    if let Some(bad) = factors.iter().find(|f| f.params() != p) {
        return Err(Error::DimensionMismatch {
            what: "factor columns",
            expected: p,
            got: bad.params(),
        });
    }
    Ok(p)
}

/// Squared singular values of `(1/sqrt(n)) [A_1; ...; A_n]`.
pub fn fim_spectrum(factors: &[SampleFactor]) -> Result<FimSpectrum> {
    let p = check_factors(factors)?;
    let rows: usize = factors.iter().map(|f| f.a.nrows()).sum();
    let scale = 1.0 / (factors.len() as f64).sqrt();
    let mut stacked = DMatrix::zeros(rows, p);
    let mut r = 0;
    for f in factors {
        stacked.rows_mut(r, f.a.nrows()).copy_from(&(&f.a * scale));
        r += f.a.nrows();
    }
    let mut eigenvalues: Vec<f64> = singular_values(&stacked).into_iter().map(|s| s * s).collect();
    eigenvalues.resize(p, 0.0);
    Ok(FimSpectrum {
        eigenvalues,
        n_samples: factors.len(),
        p_prime: p,
    })
}

/// Explicit `(1/n) sum_n A_nᵀ A_n` with pairwise summation over samples.
pub fn assemble_fim(factors: &[SampleFactor]) -> Result<DMatrix<f64>> {
    let p = check_factors(factors)?;
    let mut sum = pairwise_gram(factors, p);
    sum /= factors.len() as f64;
    // Exact symmetry: mirror the upper triangle.
    for i in 0..p {
        for j in 0..i {
            sum[(i, j)] = sum[(j, i)];
        }
    }
    Ok(sum)
}

fn pairwise_gram(factors: &[SampleFactor], p: usize) -> DMatrix<f64> {
    match factors {
        [] => DMatrix::zeros(p, p),
        [one] => one.a.transpose() * &one.a,
        _ => {
            let (left, right) = factors.split_at(factors.len() / 2);
            pairwise_gram(left, p) + pairwise_gram(right, p)
        }
    }
}

/// Induced infinity norm (maximum absolute row sum).
pub fn inf_norm(m: &DMatrix<f64>) -> f64 {
    m.row_iter()
        .map(|r| r.iter().map(|v| v.abs()).sum::<f64>())
        .fold(0.0, f64::max)
}
