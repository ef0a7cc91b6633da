//! Proxy score tables, rank assignment, log-rank aggregation and dispatch of
//! the natively computed proxies.

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fim::{fim_spectrum_of, vkdnw_entropy, vkdnw_single, FimConfig};
use crate::graph::{count_flops, trainable_layer_count};
use crate::metrics::midranks;
use crate::net::build_network;
use crate::space::CanonicalGraph;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Provenance {
    Native,
    ExternalFile,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreRow {
    pub arch_id: String,
    pub proxy_name: String,
    pub value: f64,
}

/// Scores of one or more proxies over a set of architectures.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreTable {
    rows: Vec<ScoreRow>,
    index: HashMap<(String, String), usize>,
    pub provenance: Provenance,
}

impl ScoreTable {
    pub fn new(provenance: Provenance) -> Self {
        Self {
            rows: Vec::new(),
            index: HashMap::new(),
            provenance,
        }
    }

    /// Adds a row, rejecting non-finite values and repeated `(arch_id, proxy)` pairs.
    pub fn insert(&mut self, arch_id: &str, proxy_name: &str, value: f64) -> Result<()> {
        if value.is_nan() {
            return Err(Error::NanScore(arch_id.to_string()));
        }
        if !value.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "score of `{arch_id}` for `{proxy_name}` is infinite"
            )));
        }
        let key = (arch_id.to_string(), proxy_name.to_string());
        if let Some(&first) = self.index.get(&key) {
            return Err(Error::DuplicateRow {
                key: format!("{arch_id},{proxy_name}"),
                first: first + 1,
                second: self.rows.len() + 1,
            });
        }
        self.index.insert(key, self.rows.len());
        self.rows.push(ScoreRow {
            arch_id: arch_id.to_string(),
            proxy_name: proxy_name.to_string(),
            value,
        });
        Ok(())
    }

    pub fn rows(&self) -> &[ScoreRow] {
        &self.rows
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn get(&self, arch_id: &str, proxy_name: &str) -> Option<f64> {
        self.index
            .get(&(arch_id.to_string(), proxy_name.to_string()))
            .map(|&i| self.rows[i].value)
    }

    /// Proxy names in order of first appearance.
    pub fn proxy_names(&self) -> Vec<String> {
        let mut names: Vec<String> = Vec::new();
        for row in &self.rows {
            if !names.contains(&row.proxy_name) {
                names.push(row.proxy_name.clone());
            }
        }
        names
    }

    /// `(arch_id, value)` pairs of one proxy in row order.
    pub fn scores(&self, proxy_name: &str) -> Vec<(String, f64)> {
        self.rows
            .iter()
            .filter(|r| r.proxy_name == proxy_name)
            .map(|r| (r.arch_id.clone(), r.value))
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Direction {
    HigherBetter,
    LowerBetter,
}

/// Midranks over a set of architectures; the best one holds rank `K`.
#[derive(Debug, Clone, PartialEq)]
pub struct RankVector {
    pub arch_ids: Vec<String>,
    pub ranks: Vec<f64>,
}

impl RankVector {
    pub fn len(&self) -> usize {
        self.ranks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ranks.is_empty()
    }

    pub fn rank_of(&self, arch_id: &str) -> Option<f64> {
        self.arch_ids.iter().position(|a| a == arch_id).map(|i| self.ranks[i])
    }

    /// Architecture ids from best to worst; ties keep input order.
    pub fn ordering(&self) -> Vec<&str> {
        let mut idx: Vec<usize> = (0..self.len()).collect();
        idx.sort_by(|&a, &b| self.ranks[b].total_cmp(&self.ranks[a]));
        idx.into_iter().map(|i| self.arch_ids[i].as_str()).collect()
    }
}

pub fn rank_from_scores(scores: &[(String, f64)], direction: Direction) -> Result<RankVector> {
    if scores.is_empty() {
        return Err(Error::Empty("score list"));
    }
    if let Some((id, _)) = scores.iter().find(|(_, v)| v.is_nan()) {
        return Err(Error::NanScore(id.clone()));
    }
    if scores.iter().any(|(_, v)| !v.is_finite()) {
        return Err(Error::InvalidArgument("scores must be finite".into()));
    }
    let keyed: Vec<f64> = scores
        .iter()
        .map(|&(_, v)| match direction {
            Direction::HigherBetter => v,
            Direction::LowerBetter => -v,
        })
        .collect();
    Ok(RankVector {
        arch_ids: scores.iter().map(|(id, _)| id.clone()).collect(),
        ranks: midranks(&keyed),
    })
}

/// Re-ranks architectures by the sum of their log-ranks across `rankings`.
/// The output follows the architecture order of the first ranking.
pub fn aggregate_nonlinear(rankings: &[RankVector]) -> Result<RankVector> {
    let first = rankings.first().ok_or(Error::Empty("ranking list"))?;
    let mut totals: HashMap<&str, f64> = HashMap::with_capacity(first.len());
    for (id, r) in first.arch_ids.iter().zip(&first.ranks) {
        if totals.insert(id, r.ln()).is_some() {
            return Err(Error::MismatchedArchitectures);
        }
    }
    for ranking in &rankings[1..] {
        if ranking.len() != first.len() {
            return Err(Error::MismatchedArchitectures);
        }
        let mut seen = HashSet::with_capacity(ranking.len());
        for (id, r) in ranking.arch_ids.iter().zip(&ranking.ranks) {
            if !seen.insert(id.as_str()) {
                return Err(Error::MismatchedArchitectures);
            }
            *totals.get_mut(id.as_str()).ok_or(Error::MismatchedArchitectures)? += r.ln();
        }
    }
    let scores: Vec<(String, f64)> = first
        .arch_ids
        .iter()
        .map(|id| (id.clone(), totals[id.as_str()]))
        .collect();
    rank_from_scores(&scores, Direction::HigherBetter)
}

/// Proxies computed natively from a canonical graph.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProxyName {
    VkdnwSingle,
    VkdnwEntropy,
    Flops,
    Aleph,
    NParams,
}

impl ProxyName {
    pub const ALL: [ProxyName; 5] = [
        ProxyName::VkdnwSingle,
        ProxyName::VkdnwEntropy,
        ProxyName::Flops,
        ProxyName::Aleph,
        ProxyName::NParams,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ProxyName::VkdnwSingle => "vkdnw_single",
            ProxyName::VkdnwEntropy => "vkdnw_entropy",
            ProxyName::Flops => "flops",
            ProxyName::Aleph => "aleph",
            ProxyName::NParams => "n_params",
        }
    }

    /// Every native proxy treats larger values as better.
    pub fn direction(self) -> Direction {
        Direction::HigherBetter
    }

    pub fn needs_network(self) -> bool {
        matches!(self, ProxyName::VkdnwSingle | ProxyName::VkdnwEntropy)
    }
}

impl fmt::Display for ProxyName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ProxyName {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ProxyName::ALL
            .into_iter()
            .find(|p| p.as_str() == s)
            .ok_or_else(|| Error::UnknownProxy(s.to_string()))
    }
}

pub fn compute_proxy(name: ProxyName, graph: &CanonicalGraph, cfg: &FimConfig) -> Result<f64> {
    match name {
        ProxyName::Flops => Ok(count_flops(&graph.graph) as f64),
        ProxyName::Aleph => Ok(trainable_layer_count(&graph.graph) as f64),
        ProxyName::NParams => Ok(graph.graph.param_count() as f64),
        ProxyName::VkdnwSingle => {
            let net = build_network(&graph.graph, &cfg.init, cfg.init_seed)?;
            vkdnw_single(graph, &net, cfg)
        }
        ProxyName::VkdnwEntropy => {
            let net = build_network(&graph.graph, &cfg.init, cfg.init_seed)?;
            let batch = cfg.random_batch(graph.graph.input_shape)?;
            let spec = fim_spectrum_of(&net, &batch, &cfg.policy)?;
            Ok(vkdnw_entropy(&spec, cfg.normalized_entropy)?.value)
        }
    }
}
