//! Second-order behaviour of the KL divergence under weight perturbations.

use super::empirical_fim;
use crate::error::{Error, Result};
use crate::fim::ProbVector;
use crate::net::{InputBatch, NetworkInstance, ParamSelection};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KlPoint {
    pub scale: f64,
    /// Mean over the batch of `KL(p_{theta + delta} || p_theta)`.
    pub kl: f64,
    /// `0.5 deltaᵀ F delta`.
    pub quad: f64,
    pub rel_err: f64,
}

/// Four scales halving down to `1e-3 |theta| / |direction|` over the selected parameters.
pub fn default_kl_scales(net: &NetworkInstance, sel: &ParamSelection, direction: &[f64]) -> Result<Vec<f64>> {
    let theta = norm(&net.selected_values(sel)?);
    let dir = norm(direction);
    if dir == 0.0 {
        return Err(Error::InvalidArgument("perturbation direction is zero".into()));
    }
    let smallest = 1e-3 * theta / dir;
    Ok([8.0, 4.0, 2.0, 1.0].map(|k| k * smallest).to_vec())
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Compares the mean KL divergence after moving the selected weights by
/// `scale * direction` with its quadratic FIM approximation.
pub fn kl_quadratic_check(
    net: &NetworkInstance,
    sel: &ParamSelection,
    direction: &[f64],
    scales: &[f64],
    batch: &InputBatch,
) -> Result<Vec<KlPoint>> {
    if direction.len() != sel.len() {
        return Err(Error::DimensionMismatch {
            what: "perturbation direction",
            expected: sel.len(),
            got: direction.len(),
        });
    }
    if scales.iter().any(|s| !(s.is_finite() && *s >= 0.0)) || scales.windows(2).any(|w| w[1] >= w[0]) {
        return Err(Error::InvalidArgument(
            "scales must be non-negative and strictly decreasing".into(),
        ));
    }
    let fim = empirical_fim(net, batch, sel)?;
    let base: Vec<ProbVector> = net
        .forward(batch)?
        .rows()
        .map(ProbVector::from_logits)
        .collect::<Result<_>>()?;
    let f_dir: Vec<f64> = (0..sel.len())
        .map(|i| (0..sel.len()).map(|j| fim[(i, j)] * direction[j]).sum())
        .collect();
    let curvature: f64 = direction.iter().zip(&f_dir).map(|(a, b)| a * b).sum();

    scales
        .iter()
        .map(|&scale| {
            let delta: Vec<f64> = direction.iter().map(|d| d * scale).collect();
            let moved = net.perturbed(sel, &delta)?.forward(batch)?;
            let mut total = 0.0;
            for (row, p) in moved.rows().zip(&base) {
                let q = ProbVector::from_logits(row)?;
                total += q
                    .probs()
                    .iter()
                    .zip(q.log_probs().iter().zip(p.log_probs()))
                    .map(|(w, (lq, lp))| if *w > 0.0 { w * (lq - lp) } else { 0.0 })
                    .sum::<f64>();
            }
            let kl = total / batch.len() as f64;
            if !kl.is_finite() {
                return Err(Error::NonFinite {
                    node: net.graph().output(),
                    op: "kl divergence".into(),
                });
            }
            let quad = 0.5 * scale * scale * curvature;
            let rel_err = (kl - quad).abs() / kl.max(f64::MIN_POSITIVE);
            Ok(KlPoint {
                scale,
                kl,
                quad,
                rel_err,
            })
        })
        .collect()
}
