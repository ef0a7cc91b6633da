//! Rank-quality metrics between ground-truth accuracies and proxy ranks.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Accuracies above this make `2^acc` overflow `f64`.
pub const MAX_ACCURACY: f64 = 1023.0;

/// Ground-truth accuracies (percent) paired with proxy ranks (larger is better).
#[derive(Debug, Clone, PartialEq)]
pub struct EvalPair {
    accuracies: Vec<f64>,
    ranks: Vec<f64>,
}

impl EvalPair {
    pub fn new(accuracies: Vec<f64>, ranks: Vec<f64>) -> Result<Self> {
        if accuracies.len() != ranks.len() {
            return Err(Error::DimensionMismatch {
                what: "ranks",
                expected: accuracies.len(),
                got: ranks.len(),
            });
        }
        if accuracies.len() < 2 {
            return Err(Error::InvalidArgument(
                "an evaluation pair needs at least two entries".into(),
            ));
        }
        if accuracies.iter().chain(&ranks).any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("accuracies and ranks must be finite".into()));
        }
        Ok(Self { accuracies, ranks })
    }

    pub fn accuracies(&self) -> &[f64] {
        &self.accuracies
    }

    pub fn ranks(&self) -> &[f64] {
        &self.ranks
    }

    pub fn len(&self) -> usize {
        self.accuracies.len()
    }

    pub fn is_empty(&self) -> bool {
        self.accuracies.is_empty()
    }
}

/// Ranks `1..=K` in ascending order of value, ties sharing their average rank.
pub fn midranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && values[order[end]] == values[order[start]] {
            end += 1;
        }
        // positions start..end hold ranks start+1 ..= end
        let rank = (start + 1 + end) as f64 / 2.0;
        for &i in &order[start..end] {
            ranks[i] = rank;
        }
        start = end;
    }
    ranks
}

/// Number of pairs within runs of equal adjacent values of a sorted slice.
fn tied_pairs<T: PartialEq>(sorted: &[T]) -> u64 {
    let mut total = 0u64;
    let mut run = 1u64;
    for w in sorted.windows(2) {
        if w[0] == w[1] {
            run += 1;
        } else {
            total += run * (run - 1) / 2;
            run = 1;
        }
    }
    total + run * (run - 1) / 2
}

/// Kendall's τ-b in `O(K log K)` (Knight's merge-sort algorithm).
pub fn kendall_tau_b(pair: &EvalPair) -> Result<f64> {
    let n = pair.len();
    let mut items: Vec<(f64, f64)> = pair
        .accuracies
        .iter()
        .copied()
        .zip(pair.ranks.iter().copied())
        .collect();
    items.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
    let total = (n as u64) * (n as u64 - 1) / 2;
    let acc_ties = tied_pairs(&items.iter().map(|p| p.0).collect::<Vec<_>>());
    let joint_ties = tied_pairs(&items);
    let mut ranks: Vec<f64> = items.iter().map(|p| p.1).collect();
    let swaps = merge_count(&mut ranks);
    let rank_ties = tied_pairs(&ranks);
    let denom = ((total - acc_ties) as f64).sqrt() * ((total - rank_ties) as f64).sqrt();
    if denom == 0.0 {
        return Err(Error::UndefinedMetric("kendall tau-b: a vector is constant"));
    }
    // concordant - discordant = total - acc_ties - rank_ties + joint_ties - 2 * discordant
    let num = total as f64 - acc_ties as f64 - rank_ties as f64 + joint_ties as f64 - 2.0 * swaps as f64;
    Ok((num / denom).clamp(-1.0, 1.0))
}

/// Sorts `v` ascending and returns the number of strictly inverted pairs.
fn merge_count(v: &mut [f64]) -> u64 {
    let n = v.len();
    if n < 2 {
        return 0;
    }
    let mid = n / 2;
    let mut swaps = merge_count(&mut v[..mid]) + merge_count(&mut v[mid..]);
    let mut merged = Vec::with_capacity(n);
    let (mut i, mut j) = (0, mid);
    while i < mid && j < n {
        if v[j] < v[i] {
            swaps += (mid - i) as u64;
            merged.push(v[j]);
            j += 1;
        } else {
            merged.push(v[i]);
            i += 1;
        }
    }
    merged.extend_from_slice(&v[i..mid]);
    merged.extend_from_slice(&v[j..]);
    v.copy_from_slice(&merged);
    swaps
}

/// Pearson correlation of the midrank-transformed vectors.
pub fn spearman_rho(pair: &EvalPair) -> Result<f64> {
    pearson(&midranks(&pair.accuracies), &midranks(&pair.ranks))
        .ok_or(Error::UndefinedMetric("spearman rho: a vector is constant"))
}

fn pearson(x: &[f64], y: &[f64]) -> Option<f64> {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx).powi(2);
        syy += (b - my).powi(2);
    }
    (sxx > 0.0 && syy > 0.0).then(|| (sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

/// nDCG over the top `p` ranked entries with gain `2^acc - 1` and discount
/// `log2(1 + j)`. Entries with equal rank are ordered uniformly at random
/// from `tie_seed`. `p` larger than `K` is clamped to `K`.
pub fn ndcg(pair: &EvalPair, p: usize, tie_seed: u64) -> Result<f64> {
    if p == 0 {
        return Err(Error::InvalidArgument("nDCG cut-off must be at least 1".into()));
    }
    if let Some((index, &value)) = pair.accuracies.iter().enumerate().find(|(_, &a)| a >= MAX_ACCURACY) {
        return Err(Error::GainOverflow { index, value });
    }
    let p = p.min(pair.len());
    let gain = |acc: f64| acc.exp2() - 1.0;
    let discount = |j: usize| (1.0 + (j + 1) as f64).log2();

    let mut rng = ChaCha8Rng::seed_from_u64(tie_seed);
    let keys: Vec<u64> = (0..pair.len()).map(|_| rng.random()).collect();
    let mut order: Vec<usize> = (0..pair.len()).collect();
    order.sort_by(|&a, &b| pair.ranks[b].total_cmp(&pair.ranks[a]).then(keys[a].cmp(&keys[b])));
    let dcg: f64 = order[..p]
        .iter()
        .enumerate()
        .map(|(j, &k)| gain(pair.accuracies[k]) / discount(j))
        .sum();

    let mut ideal = pair.accuracies.clone();
    ideal.sort_by(|a, b| b.total_cmp(a));
    let z: f64 = ideal[..p].iter().enumerate().map(|(j, &a)| gain(a) / discount(j)).sum();
    if z <= 0.0 {
        return Err(Error::UndefinedMetric("nDCG: ideal gain is zero"));
    }
    Ok(dcg / z)
}

/// nDCG averaged over several tie-breaking seeds, with the per-seed values.
pub fn ndcg_over_seeds(pair: &EvalPair, p: usize, seeds: &[u64]) -> Result<(f64, Vec<f64>)> {
    if seeds.is_empty() {
        return Err(Error::Empty("seed list"));
    }
    let values = seeds.iter().map(|&s| ndcg(pair, p, s)).collect::<Result<Vec<_>>>()?;
    let mean = values.iter().sum::<f64>() / values.len() as f64;
    Ok((mean, values))
}
